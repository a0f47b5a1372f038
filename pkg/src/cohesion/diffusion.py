"""Windowed score-network training.

Each training sample is a W-frame window (W odd) centered at a uniformly
drawn interior index of a uniformly drawn trajectory.  The whole window is
perturbed with a single shared (k, eps) draw and the network regresses the
noise in mean-squared error.  Diffusion times are sampled uniformly on
[k_min, 1] to stay clear of the sigma -> 0 end when converting predictions
to scores.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from .checkpoints import save_checkpoint, load_checkpoint
from .datasets import Dataset, NormStats
from .errors import TrainingDivergedError
from .networks import WindowUNet
from .rom import KoopmanROM, rollout
from .schedule import NoiseSchedule, cosine_schedule

SCORE_PRESETS = {
    "kf": {"channels": (16, 32, 64), "blocks": (3, 3, 3), "embed_dim": 64, "time_hidden": 256},
}


@dataclass(frozen=True)
class ScoreNetConfig:
    window: int = 5
    channels: tuple[int, ...] = (16, 32, 64)
    blocks: tuple[int, ...] = (3, 3, 3)
    embed_dim: int = 64
    time_hidden: int = 256

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd integer")

    @classmethod
    def preset(cls, name: str, window: int = 5) -> "ScoreNetConfig":
        if name not in SCORE_PRESETS:
            raise ValueError(f"unknown score preset '{name}' (have {sorted(SCORE_PRESETS)})")
        return cls(window=window, **SCORE_PRESETS[name])

    def build(self) -> WindowUNet:
        return WindowUNet(
            window=self.window,
            channels=self.channels,
            blocks=self.blocks,
            embed_dim=self.embed_dim,
            time_hidden=self.time_hidden,
        )


@dataclass(frozen=True)
class ScoreTrainConfig:
    epochs: int = 256
    batch_size: int = 64
    learning_rate: float = 2e-4
    weight_decay: float = 1e-3
    k_min: float = 1e-3
    augment_shifts: bool = True
    seed: int = 0
    residual: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _window_batch(frames: np.ndarray, w: int, idx_traj, idx_center) -> np.ndarray:
    windows = [frames[i, c - w : c + w + 1] for i, c in zip(idx_traj, idx_center)]
    return np.stack(windows)


def residual_frames(dataset: Dataset, rom: KoopmanROM, split: str) -> np.ndarray:
    """Fluctuation fields u'(t) = u(t) - rom_1step(u(t-1)), physical units."""
    frames = dataset.splits[split].astype(np.float64)
    prior = rollout(
        rom, frames[:, :-1].reshape(-1, *frames.shape[2:]), 1, dataset.stats
    ).reshape(frames.shape[0], frames.shape[1] - 1, *frames.shape[2:])
    return frames[:, 1:] - prior


def train_score(
    dataset: Dataset,
    net_cfg: ScoreNetConfig = ScoreNetConfig(),
    schedule: NoiseSchedule | None = None,
    train_cfg: ScoreTrainConfig = ScoreTrainConfig(),
    rom: KoopmanROM | None = None,
) -> tuple[WindowUNet, NormStats, dict]:
    """Train the window denoiser; returns (network, training stats, history).

    With train_cfg.residual the network is trained on fluctuation fields
    (ROM 1-step prior subtracted, requires `rom`); the returned statistics
    then describe the residuals and are what sampling must de-normalize with.
    """
    if schedule is None:
        schedule = cosine_schedule()
    w = (net_cfg.window - 1) // 2
    if train_cfg.residual:
        if rom is None:
            raise ValueError("residual training requires the coherent-flow model")
        train_raw = residual_frames(dataset, rom, "train")
        val_raw = residual_frames(dataset, rom, "val")
        stats = NormStats(mean=float(train_raw.mean()), std=float(train_raw.std()))
    else:
        train_raw = dataset.splits["train"].astype(np.float64)
        val_raw = dataset.splits["val"].astype(np.float64)
        stats = dataset.stats
    length = train_raw.shape[1]
    if length < net_cfg.window:
        raise ValueError(f"trajectory length {length} is shorter than the window {net_cfg.window}")

    train_frames = stats.normalize(train_raw).astype(np.float32)
    val_frames = stats.normalize(val_raw).astype(np.float32)

    torch.manual_seed(train_cfg.seed)
    net = net_cfg.build()
    opt = torch.optim.AdamW(
        net.parameters(), lr=train_cfg.learning_rate, weight_decay=train_cfg.weight_decay
    )
    rng = np.random.default_rng([train_cfg.seed, 2])
    n_traj = train_frames.shape[0]
    steps_per_epoch = max(1, n_traj * (length - net_cfg.window + 1) // train_cfg.batch_size)

    history = {"train_loss": [], "val_loss": []}
    best_val, best_state = np.inf, None

    forcing_wavenumber = dataset.solver_config.forcing_wavenumber
    grid_size = train_frames.shape[-1]

    def batch_loss(frames, batch_rng, batch_size, grad: bool, augment: bool):
        idx_traj = batch_rng.integers(frames.shape[0], size=batch_size)
        idx_center = batch_rng.integers(w, frames.shape[1] - w, size=batch_size)
        clean = torch.from_numpy(_window_batch(frames, w, idx_traj, idx_center))
        if augment:
            # translation symmetries of the forced system, one shift per batch
            sx = int(batch_rng.integers(grid_size))
            sy = 0
            if forcing_wavenumber > 0 and grid_size % forcing_wavenumber == 0:
                period = grid_size // forcing_wavenumber
                sy = period * int(batch_rng.integers(forcing_wavenumber))
            clean = torch.roll(clean, shifts=(sx, sy), dims=(2, 3))
        k = batch_rng.uniform(train_cfg.k_min, 1.0, size=batch_size)
        eps = torch.from_numpy(
            batch_rng.standard_normal(clean.shape).astype(np.float32)
        )
        mu = torch.from_numpy(schedule.mu(k).astype(np.float32)).reshape(-1, 1, 1, 1)
        sig = torch.from_numpy(schedule.sigma(k).astype(np.float32)).reshape(-1, 1, 1, 1)
        perturbed = mu * clean + sig * eps
        k_t = torch.from_numpy(k.astype(np.float32))
        with torch.set_grad_enabled(grad):
            pred = net(perturbed, k_t)
            return torch.mean((pred - eps) ** 2)

    for epoch in range(train_cfg.epochs):
        net.train()
        epoch_loss = 0.0
        for _ in range(steps_per_epoch):
            loss = batch_loss(train_frames, rng, train_cfg.batch_size, grad=True,
                              augment=train_cfg.augment_shifts)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
        epoch_loss /= steps_per_epoch
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(
                f"score training loss non-finite at epoch {epoch}", epoch=epoch
            )
        net.eval()
        val_rng = np.random.default_rng([train_cfg.seed, 3, epoch])
        val_losses = [
            float(batch_loss(val_frames, val_rng, train_cfg.batch_size, grad=False,
                             augment=False))
            for _ in range(4)
        ]
        val_loss = float(np.mean(val_losses))
        history["train_loss"].append(epoch_loss)
        history["val_loss"].append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_state = {name: t.detach().clone() for name, t in net.state_dict().items()}
    if best_state is not None:
        net.load_state_dict(best_state)
    net.eval()
    history["best_val_loss"] = best_val
    return net, stats, history


def save_score(
    path: str | Path,
    net: WindowUNet,
    stats: NormStats,
    history: dict | None = None,
    residual: bool = False,
):
    save_checkpoint(
        path, "score-network", net.architecture(), net.state_dict(),
        meta={"normalization": {"mean": stats.mean, "std": stats.std},
              "residual": residual, "history": history or {}},
    )


def load_score(path: str | Path) -> tuple[WindowUNet, NormStats, dict]:
    kind, arch, state, meta = load_checkpoint(path)
    if kind != "score-network":
        raise ValueError(f"{path} is not a score-network checkpoint")
    net = WindowUNet(
        window=arch["window"],
        channels=tuple(arch["channels"]),
        blocks=tuple(arch["blocks"]),
        embed_dim=arch["embed_dim"],
        time_hidden=arch["time_hidden"],
    )
    net.load_state_dict(state)
    net.eval()
    stats = NormStats(**meta["normalization"])
    return net, stats, {"residual": meta.get("residual", False),
                        "history": meta.get("history", {})}
