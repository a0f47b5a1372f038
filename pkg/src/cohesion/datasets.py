"""Dataset generation, normalization statistics, and on-disk format.

A dataset directory holds one little-endian float32 flat binary per split
(train.bin / val.bin / test.bin, C-order, shape (n_traj, T, N, N)) plus a
metadata.json sidecar recording shapes, dtype, solver configuration, seed,
normalization statistics, and a sha256 checksum per binary.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError, SolverBlowUpError
from .solver import SolverConfig, integrate_snapshots, random_vorticity, spectral_downsample

FORMAT_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")
MAX_REGEN_ATTEMPTS = 20
DTYPE = "<f4"


@dataclass(frozen=True)
class NormStats:
    """Scalar mean/std computed over the train split."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("normalization std must be positive")

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, x):
        return x * self.std + self.mean


@dataclass
class Dataset:
    splits: dict[str, np.ndarray]
    stats: NormStats
    solver_config: SolverConfig
    seed: int
    regenerated: list[int]

    def __post_init__(self):
        for name in SPLIT_NAMES:
            if name not in self.splits:
                raise ValueError(f"missing split '{name}'")

    @property
    def grid_size(self) -> int:
        return self.splits["train"].shape[-1]

    @property
    def trajectory_length(self) -> int:
        return self.splits["train"].shape[1]


def split_sizes(n_traj: int) -> tuple[int, int, int]:
    """80-10-10 trajectory-level split; rounding goes to the train split."""
    n_val = max(1, round(0.1 * n_traj))
    n_test = max(1, round(0.1 * n_traj))
    n_train = n_traj - n_val - n_test
    if n_train < 1:
        raise ValueError(f"n_traj={n_traj} too small for an 80-10-10 split")
    return n_train, n_val, n_test


def _trajectory_seed(seed: int, index: int, attempt: int) -> list[int]:
    return [seed, index, attempt]


def generate_dataset(cfg: SolverConfig, n_traj: int, traj_len: int, seed: int) -> Dataset:
    """Generate n_traj independent trajectories and split them 80-10-10.

    Each trajectory starts from filtered random vorticity, is integrated for
    2 * traj_len snapshots at the solve resolution, the first half is discarded
    as warm-up, and the kept frames are spectrally truncated to the store
    resolution.  A trajectory that blows up is regenerated with a fresh seed;
    the indices of regenerated trajectories are reported in the dataset.
    """
    if n_traj < 10:
        raise ValueError("n_traj must be >= 10")
    if traj_len < 2:
        raise ValueError("traj_len must be >= 2")
    n_hi, n_lo = cfg.resolution_solve, cfg.resolution_store
    frames = np.empty((n_traj, traj_len, n_lo, n_lo), dtype=np.float32)
    regenerated: list[int] = []
    for i in range(n_traj):
        for attempt in range(MAX_REGEN_ATTEMPTS):
            rng = np.random.default_rng(_trajectory_seed(seed, i, attempt))
            omega0 = random_vorticity(rng, n_hi, cfg)
            try:
                snaps = integrate_snapshots(omega0, cfg, 2 * traj_len)
            except SolverBlowUpError:
                regenerated.append(i)
                continue
            kept = snaps[traj_len:]
            frames[i] = spectral_downsample(kept, n_lo).astype(np.float32)
            break
        else:
            raise NumericalError(
                f"trajectory {i} blew up {MAX_REGEN_ATTEMPTS} times; check solver config"
            )
    n_train, n_val, n_test = split_sizes(n_traj)
    splits = {
        "train": frames[:n_train],
        "val": frames[n_train : n_train + n_val],
        "test": frames[n_train + n_val :],
    }
    train = splits["train"].astype(np.float64)
    stats = NormStats(mean=float(train.mean()), std=float(train.std()))
    return Dataset(splits=splits, stats=stats, solver_config=cfg, seed=seed, regenerated=regenerated)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_dataset(ds: Dataset, outdir: str | Path) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    checksums = {}
    shapes = {}
    for name in SPLIT_NAMES:
        arr = np.ascontiguousarray(ds.splits[name], dtype=DTYPE)
        payload = arr.tobytes()
        (outdir / f"{name}.bin").write_bytes(payload)
        checksums[f"{name}.bin"] = sha256_bytes(payload)
        shapes[name] = list(arr.shape)
    meta = {
        "format_version": FORMAT_VERSION,
        "dtype": DTYPE,
        "shapes": shapes,
        "solver_config": ds.solver_config.to_dict(),
        "seed": ds.seed,
        "normalization": {"mean": ds.stats.mean, "std": ds.stats.std},
        "checksums": checksums,
        "regenerated": sorted(set(ds.regenerated)),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    path = outdir / "metadata.json"
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return outdir


def load_dataset(directory: str | Path, verify: bool = True) -> Dataset:
    directory = Path(directory)
    meta_path = directory / "metadata.json"
    if not meta_path.exists():
        raise ConfigError(f"no dataset metadata at {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported dataset format version {meta.get('format_version')}")
    splits = {}
    for name in SPLIT_NAMES:
        path = directory / f"{name}.bin"
        if not path.exists():
            raise ConfigError(f"missing split binary {path}")
        if verify and sha256_file(path) != meta["checksums"][f"{name}.bin"]:
            raise ConfigError(f"checksum mismatch for {path}")
        shape = tuple(meta["shapes"][name])
        splits[name] = np.fromfile(path, dtype=DTYPE).reshape(shape)
    stats = NormStats(**meta["normalization"])
    cfg = SolverConfig(**meta["solver_config"])
    return Dataset(
        splits=splits,
        stats=stats,
        solver_config=cfg,
        seed=meta["seed"],
        regenerated=list(meta.get("regenerated", [])),
    )
