"""Experiment orchestration: guided forecasts over the test split, prior
comparison, and the runtime benchmark, all driven by a single config file with
every effective value echoed into an atomically written run manifest.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import Dataset, load_dataset, sha256_file
from .diffusion import load_score
from .errors import ConfigError
from .metrics import auto_msssim_params, compare_tables, evaluate_rollout, \
    read_metric_table, write_metric_table
from .rom import load_rom, rollout
from .sampler import GuidanceConfig, PlanConfig, SamplerConfig, forecast, observation_mask

MEMBER_BATCH_LIMIT = 32


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    rom_checkpoint: str
    score_checkpoint: str
    horizon: int = 32
    chunk: int | None = None
    window: int | None = None
    members: int = 5
    sigma_c2: float = 1e-2
    gamma: float = 1e-2
    mask_stride: int = 0
    mode: str = "full-posterior"
    corrector_conditional: bool = True
    steps: int = 64
    corrector_steps: int = 1
    tau: float = 3e-2
    seed: int = 0
    max_trajectories: int | None = None

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"experiment config not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed experiment config {path}: {exc}") from exc
        raw.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunManifest:
    config: dict
    version: str = __version__
    timings: dict = field(default_factory=dict)
    member_seeds: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    incomplete: bool = True
    created_at: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def write_manifest(path: str | Path, manifest: RunManifest):
    """Atomic write: the manifest appears complete or not at all."""
    path = Path(path)
    manifest.created_at = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _load_components(cfg: ExperimentConfig):
    for name in ("rom_checkpoint", "score_checkpoint"):
        if not Path(getattr(cfg, name)).exists():
            raise ConfigError(f"{name} not found: {getattr(cfg, name)}")
    dataset = load_dataset(cfg.dataset)
    rom, rom_stats, _ = load_rom(cfg.rom_checkpoint)
    net, net_stats, meta = load_score(cfg.score_checkpoint)
    if rom.cfg.grid_size != dataset.grid_size:
        raise ConfigError("ROM checkpoint grid size does not match the dataset")
    return dataset, rom, rom_stats, net, net_stats, meta


def _build_configs(cfg: ExperimentConfig, dataset: Dataset, net):
    chunk = cfg.chunk if cfg.chunk is not None else cfg.horizon
    window = cfg.window if cfg.window is not None else net.window
    plan = PlanConfig(horizon=cfg.horizon, chunk=chunk, window=window)
    mask = observation_mask(dataset.grid_size, cfg.mask_stride) if cfg.mask_stride >= 1 else None
    mode = "residual" if cfg.mode == "residual" else "full-posterior"
    gcfg = GuidanceConfig(
        sigma_c2=cfg.sigma_c2, gamma=cfg.gamma, mask=mask, mode=mode,
        corrector_conditional=cfg.corrector_conditional,
    )
    scfg = SamplerConfig(
        steps=cfg.steps, corrector_steps=cfg.corrector_steps, tau=cfg.tau, seed=cfg.seed
    )
    return plan, gcfg, scfg


def _save_forecast_binaries(outdir: Path, guided: np.ndarray, manifest: RunManifest,
                            prefix: str = "traj"):
    for g in range(guided.shape[0]):
        traj_dir = outdir / f"{prefix}_{g:03d}"
        traj_dir.mkdir(parents=True, exist_ok=True)
        for m in range(guided.shape[1]):
            path = traj_dir / f"member_{m:02d}.bin"
            payload = np.ascontiguousarray(guided[g, m], dtype="<f4").tobytes()
            path.write_bytes(payload)
            manifest.outputs[str(path)] = sha256_file(path)


def run_experiment(cfg: ExperimentConfig, outdir: str | Path) -> RunManifest:
    """Forecast every test trajectory, evaluate, and compare against the prior.

    Writes per-member forecast binaries in the dataset format, ROM-only
    rollouts, guided/prior/delta metric tables, and the run manifest.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config=cfg.to_dict())
    t0 = time.perf_counter()
    dataset, rom, rom_stats, net, net_stats, _ = _load_components(cfg)
    manifest.inputs = {
        "dataset": str(cfg.dataset),
        "rom_checkpoint": sha256_file(cfg.rom_checkpoint),
        "score_checkpoint": sha256_file(cfg.score_checkpoint),
    }
    plan, gcfg, scfg = _build_configs(cfg, dataset, net)
    test = dataset.splits["test"].astype(np.float64)
    if cfg.max_trajectories is not None:
        test = test[: cfg.max_trajectories]
    if test.shape[1] < cfg.horizon + 1:
        raise ConfigError(
            f"test trajectories of length {test.shape[1]} cannot verify a horizon of "
            f"{cfg.horizon}; need horizon + 1 frames"
        )
    manifest.timings["load"] = time.perf_counter() - t0

    ics = test[:, 0]
    truth = test[:, 1 : cfg.horizon + 1]
    manifest.member_seeds = [
        [cfg.seed, g, m] for g in range(test.shape[0]) for m in range(cfg.members)
    ]

    group = max(1, MEMBER_BATCH_LIMIT // cfg.members)
    guided_parts, prior_parts = [], []
    t0 = time.perf_counter()
    for start in range(0, ics.shape[0], group):
        block = ics[start : start + group]
        sub = forecast(
            net, rom, block, plan, gcfg, scfg, net_stats,
            rom_stats=rom_stats, members=cfg.members, traj_offset=start,
        )
        guided_parts.append(sub)
        prior_parts.append(rollout(rom, block, cfg.horizon, rom_stats))
    guided = np.concatenate(guided_parts, axis=0)
    prior = np.concatenate(prior_parts, axis=0)
    manifest.timings["forecast"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    params = auto_msssim_params(dataset.grid_size)
    guided_rows = evaluate_rollout(guided, truth, params)
    prior_rows = evaluate_rollout(prior[:, None], truth, params)
    delta_rows = compare_tables(guided_rows, prior_rows)
    manifest.timings["evaluate"] = time.perf_counter() - t0

    _save_forecast_binaries(outdir, guided, manifest)
    for g in range(prior.shape[0]):
        path = outdir / f"traj_{g:03d}" / "rom_prior.bin"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(np.ascontiguousarray(prior[g], dtype="<f4").tobytes())
        manifest.outputs[str(path)] = sha256_file(path)
    for name, rows in (("guided", guided_rows), ("prior", prior_rows), ("delta", delta_rows)):
        path = outdir / f"metrics_{name}.csv"
        write_metric_table(path, rows)
        manifest.outputs[str(path)] = sha256_file(path)
    manifest.incomplete = False
    write_manifest(outdir / "manifest.json", manifest)
    return manifest


def compare_against_prior(run_dir: str | Path) -> list[dict]:
    """Per-leadtime metric deltas (Cohesion minus prior) from a finished run."""
    run_dir = Path(run_dir)
    guided = read_metric_table(run_dir / "metrics_guided.csv")
    prior = read_metric_table(run_dir / "metrics_prior.csv")
    return compare_tables(guided, prior)


def benchmark_runtime(cfg: ExperimentConfig, r_values: list[int], outdir: str | Path,
                      repeats: int = 1) -> list[dict]:
    """Wall-clock of `forecast` for each chunk length R on identical inputs.

    Reports absolute seconds and the time relative to R=1 (or to the smallest
    requested R when 1 is absent).
    """
    if not r_values:
        raise ConfigError("need at least one R value to benchmark")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    dataset, rom, rom_stats, net, net_stats, _ = _load_components(cfg)
    plan_base, gcfg, scfg = _build_configs(cfg, dataset, net)
    ic = dataset.splits["test"][0, 0].astype(np.float64)
    timings = {}
    for r in r_values:
        plan = PlanConfig(horizon=cfg.horizon, chunk=int(r), window=plan_base.window)
        best = np.inf
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            forecast(net, rom, ic, plan, gcfg, scfg, net_stats,
                     rom_stats=rom_stats, members=1)
            best = min(best, time.perf_counter() - t0)
        timings[int(r)] = best
    baseline = timings.get(1, timings[min(timings)])
    rows = [
        {"R": r, "seconds": timings[r], "relative_to_R1": timings[r] / baseline}
        for r in sorted(timings)
    ]
    path = outdir / "benchmark.csv"
    with open(path, "w", newline="") as fh:
        import csv

        writer = csv.DictWriter(fh, fieldnames=["R", "seconds", "relative_to_R1"])
        writer.writeheader()
        writer.writerows(rows)
    manifest = RunManifest(config=cfg.to_dict())
    manifest.outputs[str(path)] = sha256_file(path)
    manifest.incomplete = False
    write_manifest(outdir / "manifest.json", manifest)
    return rows
