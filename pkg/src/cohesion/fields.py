"""Array-backed domain objects: single snapshots, trajectories, prior sequences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DOMAIN_LENGTH = 2.0 * np.pi


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def validate_field_values(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"field must be a square 2-D array, got shape {values.shape}")
    if not is_power_of_two(values.shape[0]):
        raise ValueError(f"grid size must be a power of two, got {values.shape[0]}")
    if not np.all(np.isfinite(values)):
        raise ValueError("field contains non-finite values")
    return values


@dataclass(frozen=True)
class Field:
    """One 2-D vorticity snapshot on the periodic square [0, 2*pi)^2."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", validate_field_values(self.values))

    @property
    def grid_size(self) -> int:
        return self.values.shape[0]

    @property
    def domain_length(self) -> float:
        return DOMAIN_LENGTH


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered stack of snapshots, shape (T, N, N), plus provenance."""

    frames: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3 or frames.shape[1] != frames.shape[2]:
            raise ValueError(f"trajectory frames must have shape (T, N, N), got {frames.shape}")
        if frames.shape[0] < 2:
            raise ValueError("trajectory needs at least two frames")
        if not np.all(np.isfinite(frames)):
            raise ValueError("trajectory contains non-finite values")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def grid_size(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class ConditioningSequence:
    """Coherent-prior frames c(t0+1 .. t0+R) used to guide denoising.

    ``origin`` is the initial condition the sequence was rolled out from;
    ``mask`` marks the observed entries (True = observed) when the prior is
    only partially available.
    """

    frames: np.ndarray
    origin: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3 or frames.shape[1] != frames.shape[2]:
            raise ValueError(f"conditioning frames must have shape (R, N, N), got {frames.shape}")
        if frames.shape[0] < 1:
            raise ValueError("conditioning sequence needs at least one frame")
        object.__setattr__(self, "frames", frames)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != frames.shape[1:]:
                raise ValueError(f"mask shape {mask.shape} does not match frame shape {frames.shape[1:]}")
            if not mask.any():
                raise ValueError("mask selects zero observed entries")
            object.__setattr__(self, "mask", mask)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def grid_size(self) -> int:
        return self.frames.shape[1]
