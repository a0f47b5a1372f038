"""Command-line interface.

Verbs: gen-data, train-rom, train-score, rollout, forecast, evaluate,
benchmark, plot.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure.  Setting COHESION_DETERMINISTIC=1 forces deterministic kernels where
the compute backend allows.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, NumericalError


def _read_json_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {p}: {exc}") from exc


def _load_ic(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"initial-condition file not found: {p}")
    try:
        return np.load(p)
    except ValueError as exc:
        raise ConfigError(f"could not read initial condition {p}: {exc}") from exc


def _apply_determinism():
    if os.environ.get("COHESION_DETERMINISTIC") == "1":
        import torch

        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.set_num_threads(1)


def cmd_gen_data(args) -> int:
    from .datasets import generate_dataset, save_dataset
    from .solver import SolverConfig

    raw = _read_json_config(args.config)
    solver = raw.get("solver", {})
    try:
        cfg = SolverConfig(**solver)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad solver config: {exc}") from exc
    n_traj = int(raw.get("n_trajectories", 64))
    traj_len = int(raw.get("trajectory_length", 33))
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    ds = generate_dataset(cfg, n_traj, traj_len, seed)
    save_dataset(ds, args.out)
    if ds.regenerated:
        print(f"regenerated {len(ds.regenerated)} blown-up trajectories: {ds.regenerated}")
    print(f"wrote dataset ({n_traj} trajectories, {traj_len} frames, "
          f"{ds.grid_size}x{ds.grid_size}) to {args.out}")
    return 0


def cmd_train_rom(args) -> int:
    from .datasets import load_dataset
    from .rom import RomConfig, RomTrainConfig, save_rom, train_rom

    raw = _read_json_config(args.config)
    dataset = load_dataset(args.data)
    preset = args.preset or raw.get("preset", "kf")
    try:
        rom_cfg = RomConfig.preset(preset, dataset.grid_size)
        if "widths" in raw or "latent_dim" in raw:
            rom_cfg = RomConfig(
                grid_size=dataset.grid_size,
                widths=tuple(raw.get("widths", rom_cfg.widths)),
                latent_dim=int(raw.get("latent_dim", rom_cfg.latent_dim)),
            )
        train_kwargs = {
            k: raw[k]
            for k in ("epochs", "batch_size", "learning_rate", "weight_decay",
                      "rollout_loss_steps")
            if k in raw
        }
        if args.epochs is not None:
            train_kwargs["epochs"] = args.epochs
        seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
        train_cfg = RomTrainConfig(seed=seed, **train_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad ROM training config: {exc}") from exc
    rom, history = train_rom(dataset, rom_cfg, train_cfg)
    save_rom(args.out, rom, dataset.stats, history)
    print(f"trained ROM: val MSE {history['final_val_loss']:.5f} "
          f"(persistence {history['persistence_val_mse']:.5f}); saved to {args.out}")
    return 0


def cmd_train_score(args) -> int:
    from .datasets import load_dataset
    from .diffusion import ScoreNetConfig, ScoreTrainConfig, save_score, train_score
    from .rom import load_rom

    raw = _read_json_config(args.config)
    dataset = load_dataset(args.data)
    try:
        window = args.window if args.window is not None else int(raw.get("window", 5))
        net_cfg = ScoreNetConfig(
            window=window,
            channels=tuple(raw.get("channels", (16, 32, 64))),
            blocks=tuple(raw.get("blocks", (3, 3, 3))),
            embed_dim=int(raw.get("embed_dim", 64)),
            time_hidden=int(raw.get("time_hidden", 256)),
        )
        train_kwargs = {
            k: raw[k]
            for k in ("epochs", "batch_size", "learning_rate", "weight_decay", "k_min")
            if k in raw
        }
        if args.epochs is not None:
            train_kwargs["epochs"] = args.epochs
        seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
        residual = bool(raw.get("residual", False))
        train_cfg = ScoreTrainConfig(seed=seed, residual=residual, **train_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad score training config: {exc}") from exc
    rom = None
    if train_cfg.residual:
        rom_path = raw.get("rom_checkpoint")
        if rom_path is None:
            raise ConfigError("residual training requires a rom_checkpoint in the config")
        rom, _, _ = load_rom(rom_path)
    net, stats, history = train_score(dataset, net_cfg, train_cfg=train_cfg, rom=rom)
    save_score(args.out, net, stats, history, residual=train_cfg.residual)
    print(f"trained score network: best val loss {history['best_val_loss']:.5f}; "
          f"saved to {args.out}")
    return 0


def cmd_rollout(args) -> int:
    from .rom import load_rom, rollout

    rom, stats, _ = load_rom(_existing(args.ckpt, "ROM checkpoint"))
    ic = _load_ic(args.ic)
    frames = rollout(rom, ic, args.R, stats)
    out = Path(args.out or "rollout.npy")
    np.save(out, frames.astype(np.float32))
    print(f"wrote {args.R}-step rollout to {out}")
    return 0


def _existing(path: str, what: str) -> str:
    if not Path(path).exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


def cmd_forecast(args) -> int:
    import torch  # noqa: F401  (ensures determinism flags apply before model load)

    from .datasets import sha256_file
    from .diffusion import load_score
    from .experiment import RunManifest, write_manifest
    from .rom import load_rom
    from .sampler import (GuidanceConfig, PlanConfig, SamplerConfig, forecast,
                          observation_mask)

    net, net_stats, _ = load_score(_existing(args.score_ckpt, "score checkpoint"))
    rom, rom_stats, _ = load_rom(_existing(args.rom_ckpt, "ROM checkpoint"))
    ic = _load_ic(args.ic)
    try:
        plan = PlanConfig(horizon=args.T, chunk=args.R, window=net.window)
        mask = observation_mask(ic.shape[-1], args.mask_stride) if args.mask_stride >= 1 else None
        sigma_c2 = float("inf") if args.unconditional else args.sigma_c2
        gcfg = GuidanceConfig(sigma_c2=sigma_c2, gamma=args.gamma, mask=mask, mode=args.mode)
        scfg = SamplerConfig(steps=args.steps, corrector_steps=args.corrector_steps,
                             tau=args.tau, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    t0 = time.perf_counter()
    members = forecast(net, rom, ic, plan, gcfg, scfg, net_stats,
                       rom_stats=rom_stats, members=args.members)
    elapsed = time.perf_counter() - t0
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config={
        "score_ckpt": args.score_ckpt, "rom_ckpt": args.rom_ckpt, "ic": args.ic,
        "T": args.T, "R": args.R, "members": args.members,
        "mask_stride": args.mask_stride, "sigma_c2": sigma_c2, "gamma": args.gamma,
        "steps": args.steps, "corrector_steps": args.corrector_steps,
        "tau": args.tau, "seed": args.seed, "mode": args.mode,
    })
    manifest.timings["forecast"] = elapsed
    manifest.member_seeds = [[args.seed, 0, m] for m in range(args.members)]
    for m in range(args.members):
        path = outdir / f"member_{m:02d}.bin"
        path.write_bytes(np.ascontiguousarray(members[m], dtype="<f4").tobytes())
        manifest.outputs[str(path)] = sha256_file(path)
    manifest.incomplete = False
    write_manifest(outdir / "manifest.json", manifest)
    print(f"wrote {args.members} forecast members of {args.T} frames to {outdir} "
          f"({elapsed:.1f}s)")
    return 0


def cmd_evaluate(args) -> int:
    from .experiment import ExperimentConfig, run_experiment

    cfg = ExperimentConfig.from_file(args.config, seed=args.seed)
    manifest = run_experiment(cfg, args.out)
    print(f"evaluated {len([k for k in manifest.outputs if k.endswith('.csv')])} tables "
          f"into {args.out}")
    return 0


def cmd_benchmark(args) -> int:
    from .experiment import ExperimentConfig, benchmark_runtime

    cfg = ExperimentConfig.from_file(args.config, seed=args.seed)
    try:
        r_values = [int(tok) for tok in args.r_values.split(",") if tok]
    except ValueError as exc:
        raise ConfigError(f"bad --r-values list: {exc}") from exc
    rows = benchmark_runtime(cfg, r_values, args.out, repeats=args.repeats)
    for row in rows:
        print(f"R={row['R']:>4d}: {row['seconds']:8.2f}s "
              f"(x{row['relative_to_R1']:.3f} of R=1)")
    return 0


def cmd_plot(args) -> int:
    from .metrics import read_metric_table
    from .plots import plot_rollout_curves

    tables = {}
    for spec in args.table:
        if "=" in spec:
            label, path = spec.split("=", 1)
        else:
            label, path = Path(spec).stem, spec
        tables[label] = read_metric_table(_existing(path, "metric table"))
    paths = plot_rollout_curves(tables, args.out)
    print(f"wrote {len(paths)} plots to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cohesion", description=__doc__)
    parser.add_argument("--version", action="version", version=f"cohesion {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a Kolmogorov-flow dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-rom", help="train the Koopman coherent-flow model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--preset", choices=("kf", "desk"), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train_rom)

    p = sub.add_parser("train-score", help="train the windowed score network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train_score)

    p = sub.add_parser("rollout", help="roll the coherent-flow model out from an IC")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ic", required=True)
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("forecast", help="guided ensemble forecast from an IC")
    p.add_argument("--score-ckpt", required=True)
    p.add_argument("--rom-ckpt", required=True)
    p.add_argument("--ic", required=True)
    p.add_argument("--T", type=int, default=32)
    p.add_argument("--R", type=int, default=32)
    p.add_argument("--members", type=int, default=5)
    p.add_argument("--mask-stride", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--corrector-steps", type=int, default=1)
    p.add_argument("--tau", type=float, default=3e-2)
    p.add_argument("--sigma-c2", type=float, default=1e-2)
    p.add_argument("--gamma", type=float, default=1e-2)
    p.add_argument("--mode", choices=("full-posterior", "residual"), default="full-posterior")
    p.add_argument("--unconditional", action="store_true")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="run the full experiment over the test split")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="forecast wall-clock across chunk lengths")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--r-values", default="1,32")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("plot", help="render rollout curves from metric tables")
    p.add_argument("--table", action="append", required=True,
                   help="metric table path, optionally LABEL=path; repeatable")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_determinism()
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
