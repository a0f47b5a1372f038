"""Shared tiny-scale fixtures: a small dataset and briefly trained models.

Everything here runs at 16^2 -> 8^2 resolution so the full suite stays fast;
physics- and scale-sensitive checks live in test_acceptance.py.
"""

import numpy as np
import pytest
import torch

from cohesion.datasets import generate_dataset
from cohesion.diffusion import ScoreNetConfig, ScoreTrainConfig, train_score
from cohesion.rom import RomConfig, RomTrainConfig, train_rom
from cohesion.solver import SolverConfig

TINY_SOLVER = SolverConfig(resolution_solve=16, resolution_store=8, dt=0.05, snapshot_stride=4)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_dataset(TINY_SOLVER, n_traj=12, traj_len=12, seed=0)


@pytest.fixture(scope="session")
def tiny_rom(tiny_dataset):
    rom, history = train_rom(
        tiny_dataset,
        RomConfig(grid_size=8, widths=(2, 4, 8), latent_dim=16),
        RomTrainConfig(epochs=25, batch_size=32, seed=0),
    )
    return rom, history


@pytest.fixture(scope="session")
def tiny_score(tiny_dataset):
    net, stats, history = train_score(
        tiny_dataset,
        ScoreNetConfig(window=5, channels=(4, 8), blocks=(1, 1)),
        train_cfg=ScoreTrainConfig(epochs=12, batch_size=32, seed=0),
    )
    return net, stats, history


class FrameLocalNet:
    """Synthetic denoiser whose output at frame j depends only on frame j."""

    def __init__(self, window):
        self.window = window

    def __call__(self, u, k):
        kk = k.reshape(-1, 1, 1, 1).to(u.dtype)
        return torch.tanh(u) * 0.3 + u * kk


class GaussianScoreNet:
    """Exact epsilon predictor for N(0, I) data: eps(u_k, k) = sigma(k) * u_k."""

    def __init__(self, window=1):
        self.window = window

    def __call__(self, u, k):
        from cohesion.schedule import schedule_sigma

        sig = schedule_sigma(np.asarray(k.detach().numpy(), dtype=np.float64))
        return torch.as_tensor(sig, dtype=u.dtype).reshape(-1, 1, 1, 1) * u


class NaNNet:
    """Denoiser that poisons the state, for failure-path tests."""

    def __init__(self, window=5):
        self.window = window

    def __call__(self, u, k):
        return u * float("nan")
