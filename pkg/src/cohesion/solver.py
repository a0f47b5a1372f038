"""Pseudo-spectral solver for 2-D Kolmogorov flow in scalar-vorticity form.

The state is the vorticity w on the periodic square [0, 2*pi)^2:

    dw/dt = -(u . grad) w + (1/Re) lap(w) - alpha * w + f_w

with velocity recovered from the streamfunction (lap(psi) = -w, u = d psi/dy,
v = -d psi/dx) and f_w = -n * cos(n*y), the curl of the Kolmogorov body force
sin(n*y) x_hat.  The nonlinear term is evaluated pseudo-spectrally with 2/3-rule
dealiasing; time stepping is RK4 on the nonlinear/damping/forcing terms with an
exact integrating factor for viscosity.

All operations accept arrays shaped (..., N, N) so batches of states can be
advanced together.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np

from .errors import SolverBlowUpError
from .fields import is_power_of_two

CFL_LIMIT = 1.0


@dataclass(frozen=True)
class SolverConfig:
    reynolds: float = 1000.0
    dt: float = 0.02
    snapshot_stride: int = 10
    forcing_wavenumber: int = 4
    damping_coefficient: float = 0.1
    resolution_solve: int = 64
    resolution_store: int = 32

    def __post_init__(self):
        if self.reynolds <= 0:
            raise ValueError("reynolds must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")
        if self.damping_coefficient < 0:
            raise ValueError("damping_coefficient must be >= 0")
        for name in ("resolution_solve", "resolution_store"):
            n = getattr(self, name)
            if not is_power_of_two(n):
                raise ValueError(f"{name} must be a power of two, got {n}")
        if self.resolution_solve % self.resolution_store != 0:
            raise ValueError("resolution_store must divide resolution_solve")

    @property
    def snapshot_interval(self) -> float:
        """Model time between stored snapshots (0.2 with the defaults)."""
        return self.dt * self.snapshot_stride

    @property
    def viscosity(self) -> float:
        return 1.0 / self.reynolds

    def to_dict(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=8)
def _grids(n: int):
    """Integer wavenumber grids and dealias mask for an n x n rfft2 layout."""
    kx = np.fft.fftfreq(n, 1.0 / n).reshape(n, 1)
    ky = np.fft.rfftfreq(n, 1.0 / n).reshape(1, n // 2 + 1)
    k2 = kx**2 + ky**2
    inv_k2 = np.zeros_like(k2)
    inv_k2[k2 > 0] = 1.0 / k2[k2 > 0]
    cut = n // 3
    dealias = (np.abs(kx) <= cut) & (np.abs(ky) <= cut)
    return kx, ky, k2, inv_k2, dealias


def grid_coordinates(n: int):
    x = 2.0 * np.pi * np.arange(n) / n
    return np.meshgrid(x, x, indexing="ij")


def forcing_curl(cfg: SolverConfig, n: int) -> np.ndarray:
    """Vorticity-equation forcing f_w = -n_f * cos(n_f * y)."""
    _, y = grid_coordinates(n)
    return -cfg.forcing_wavenumber * np.cos(cfg.forcing_wavenumber * y)


def _to_hat(omega: np.ndarray) -> np.ndarray:
    return np.fft.rfft2(omega, axes=(-2, -1))


def _to_phys(omega_hat: np.ndarray, n: int) -> np.ndarray:
    return np.fft.irfft2(omega_hat, s=(n, n), axes=(-2, -1))


def velocity_from_vorticity(omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Recover (u, v) via the spectral streamfunction; the k=0 mode of psi is zero."""
    omega = np.asarray(omega, dtype=np.float64)
    n = omega.shape[-1]
    kx, ky, _, inv_k2, _ = _grids(n)
    psi_hat = _to_hat(omega) * inv_k2
    u = _to_phys(1j * ky * psi_hat, n)
    v = _to_phys(-1j * kx * psi_hat, n)
    return u, v


def _advection_hat(omega_hat: np.ndarray, n: int):
    """Dealiased transform of (u . grad) w, plus the max |velocity| seen."""
    kx, ky, _, inv_k2, dealias = _grids(n)
    w_hat = omega_hat * dealias
    psi_hat = w_hat * inv_k2
    u = _to_phys(1j * ky * psi_hat, n)
    v = _to_phys(-1j * kx * psi_hat, n)
    wx = _to_phys(1j * kx * w_hat, n)
    wy = _to_phys(1j * ky * w_hat, n)
    adv_hat = _to_hat(u * wx + v * wy) * dealias
    umax = max(float(np.abs(u).max()), float(np.abs(v).max()))
    return adv_hat, umax


def _check_finite(omega: np.ndarray, what: str):
    if not np.all(np.isfinite(omega)):
        raise ValueError(f"{what} contains non-finite values")


def vorticity_rhs(omega: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    """Full tendency dw/dt for the Kolmogorov system (physical space in and out)."""
    omega = np.asarray(omega, dtype=np.float64)
    _check_finite(omega, "vorticity input")
    n = omega.shape[-1]
    _, _, k2, _, _ = _grids(n)
    omega_hat = _to_hat(omega)
    adv_hat, _ = _advection_hat(omega_hat, n)
    lap = _to_phys(-k2 * omega_hat, n)
    return (
        -_to_phys(adv_hat, n)
        + cfg.viscosity * lap
        - cfg.damping_coefficient * omega
        + forcing_curl(cfg, n)
    )


def viscous_propagator(omega: np.ndarray, cfg: SolverConfig, dt: float) -> np.ndarray:
    """Apply the exact viscous factor exp(-k^2 dt / Re); invertible with -dt."""
    omega = np.asarray(omega, dtype=np.float64)
    n = omega.shape[-1]
    _, _, k2, _, _ = _grids(n)
    return _to_phys(_to_hat(omega) * np.exp(-cfg.viscosity * k2 * dt), n)


def _nonlinear_hat(omega_hat, cfg, n, f_hat):
    adv_hat, umax = _advection_hat(omega_hat, n)
    return -adv_hat - cfg.damping_coefficient * omega_hat + f_hat, umax


def _step_hat(omega_hat: np.ndarray, cfg: SolverConfig, n: int, f_hat: np.ndarray):
    """One integrating-factor RK4 update of the spectral state."""
    _, _, k2, _, _ = _grids(n)
    dt = cfg.dt
    e_half = np.exp(-cfg.viscosity * k2 * (dt / 2.0))
    e_full = e_half * e_half
    a, umax = _nonlinear_hat(omega_hat, cfg, n, f_hat)
    b, _ = _nonlinear_hat(e_half * (omega_hat + (dt / 2.0) * a), cfg, n, f_hat)
    c, _ = _nonlinear_hat(e_half * omega_hat + (dt / 2.0) * b, cfg, n, f_hat)
    d, _ = _nonlinear_hat(e_full * omega_hat + dt * e_half * c, cfg, n, f_hat)
    new_hat = e_full * omega_hat + (dt / 6.0) * (e_full * a + 2.0 * e_half * (b + c) + d)
    return new_hat, umax


def _warn_cfl(umax: float, cfg: SolverConfig, n: int):
    dx = 2.0 * np.pi / n
    if umax > 0 and cfg.dt * umax / dx > CFL_LIMIT:
        warnings.warn(
            f"CFL estimate dt*|u|max/dx = {cfg.dt * umax / dx:.2f} exceeds {CFL_LIMIT}; "
            "the step may be unstable",
            RuntimeWarning,
            stacklevel=3,
        )


def step(omega: np.ndarray, cfg: SolverConfig, forcing_enabled: bool = True) -> np.ndarray:
    """Advance the vorticity by cfg.dt.  Raises SolverBlowUpError on non-finite output."""
    omega = np.asarray(omega, dtype=np.float64)
    _check_finite(omega, "vorticity input")
    n = omega.shape[-1]
    f_hat = _to_hat(forcing_curl(cfg, n)) if forcing_enabled else np.zeros(
        (n, n // 2 + 1), dtype=complex
    )
    new_hat, umax = _step_hat(_to_hat(omega), cfg, n, f_hat)
    _warn_cfl(umax, cfg, n)
    out = _to_phys(new_hat, n)
    if not np.all(np.isfinite(out)):
        raise SolverBlowUpError("solver blow-up after one step", step_index=0)
    return out


def integrate_snapshots(
    omega0: np.ndarray,
    cfg: SolverConfig,
    n_snapshots: int,
    forcing_enabled: bool = True,
) -> np.ndarray:
    """Integrate from omega0 and return n_snapshots states spaced by cfg.snapshot_interval.

    The returned array has shape (n_snapshots, ..., N, N) and does not include
    the initial condition.  Blow-ups raise SolverBlowUpError carrying the index
    of the failed integration step.
    """
    omega0 = np.asarray(omega0, dtype=np.float64)
    _check_finite(omega0, "initial condition")
    n = omega0.shape[-1]
    f_hat = _to_hat(forcing_curl(cfg, n)) if forcing_enabled else np.zeros(
        (n, n // 2 + 1), dtype=complex
    )
    omega_hat = _to_hat(omega0)
    out = np.empty((n_snapshots,) + omega0.shape, dtype=np.float64)
    step_index = 0
    for snap in range(n_snapshots):
        for _ in range(cfg.snapshot_stride):
            omega_hat, umax = _step_hat(omega_hat, cfg, n, f_hat)
            if step_index == 0:
                _warn_cfl(umax, cfg, n)
            step_index += 1
        frame = _to_phys(omega_hat, n)
        if not np.all(np.isfinite(frame)):
            raise SolverBlowUpError(
                f"solver blow-up at integration step {step_index}", step_index=step_index
            )
        out[snap] = frame
    return out


def random_vorticity(rng: np.random.Generator, n: int, cfg: SolverConfig) -> np.ndarray:
    """Isotropic band-limited initial vorticity, unit variance, zero mean.

    The spectral envelope is a Gaussian bump peaked near the forcing
    wavenumber (|k| in roughly [3, 6] with the defaults).
    """
    kx, ky, k2, _, _ = _grids(n)
    kk = np.sqrt(k2)
    peak = cfg.forcing_wavenumber + 0.5
    envelope = np.exp(-(((kk - peak) / 1.5) ** 2))
    w_hat = _to_hat(rng.standard_normal((n, n))) * envelope
    w_hat[..., 0, 0] = 0.0
    w = _to_phys(w_hat, n)
    return w / w.std()


def spectral_downsample(frames: np.ndarray, n_lo: int) -> np.ndarray:
    """Downsample (..., N_hi, N_hi) fields to n_lo by isotropic spectral truncation.

    Modes with |k| > n_lo/2 are removed, as are the coarse-grid Nyquist lines
    (which have no Hermitian partner after truncation), so stored fields carry
    no energy in integer shells above n_lo/2.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n_hi = frames.shape[-1]
    if n_hi == n_lo:
        return frames.copy()
    if n_lo > n_hi:
        raise ValueError("target resolution exceeds source resolution")
    half = n_lo // 2
    spec = np.fft.fft2(frames, axes=(-2, -1))
    rows = np.r_[0:half, n_hi - half : n_hi]
    sub = spec[..., rows, :][..., :, rows]
    kf = np.fft.fftfreq(n_lo, 1.0 / n_lo)
    kxs = kf.reshape(n_lo, 1)
    kys = kf.reshape(1, n_lo)
    keep = (np.sqrt(kxs**2 + kys**2) <= half) & (np.abs(kxs) < half) & (np.abs(kys) < half)
    sub = sub * keep
    out = np.fft.ifft2(sub, axes=(-2, -1)).real * (n_lo / n_hi) ** 2
    return out
