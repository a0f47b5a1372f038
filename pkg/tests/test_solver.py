"""Spectral solver oracles: forcing limit, Taylor-Green decay, incompressibility,
energy decay, and the invertible viscous subproblem."""

import numpy as np
import pytest

from cohesion.errors import SolverBlowUpError
from cohesion.solver import (
    SolverConfig,
    forcing_curl,
    grid_coordinates,
    integrate_snapshots,
    random_vorticity,
    spectral_downsample,
    step,
    velocity_from_vorticity,
    viscous_propagator,
    vorticity_rhs,
)


def taylor_green(n):
    x, y = grid_coordinates(n)
    return 2.0 * np.cos(x) * np.cos(y)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(reynolds=-1)
    with pytest.raises(ValueError):
        SolverConfig(dt=0)
    with pytest.raises(ValueError):
        SolverConfig(resolution_solve=48)
    with pytest.raises(ValueError):
        SolverConfig(resolution_solve=32, resolution_store=64)
    cfg = SolverConfig()
    assert cfg.snapshot_interval == pytest.approx(0.2)


def test_rhs_of_zero_state_is_forcing():
    cfg = SolverConfig(resolution_solve=32, resolution_store=32)
    omega = np.zeros((32, 32))
    rhs = vorticity_rhs(omega, cfg)
    np.testing.assert_allclose(rhs, forcing_curl(cfg, 32), atol=1e-13)


def test_rhs_rejects_non_finite():
    cfg = SolverConfig(resolution_solve=32, resolution_store=32)
    omega = np.zeros((32, 32))
    omega[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        vorticity_rhs(omega, cfg)


def test_taylor_green_rhs_is_laplacian_eigenmode():
    # Analytic: for w = 2 cos(x) cos(y) the advection term vanishes and
    # dw/dt = -(2/Re) w.  Cross-checked against a second-order
    # finite-difference evaluation of the same terms.
    n, re = 64, 1000.0
    cfg = SolverConfig(reynolds=re, damping_coefficient=0.0, forcing_wavenumber=4,
                       resolution_solve=n, resolution_store=n)
    omega = taylor_green(n)
    rhs = vorticity_rhs(omega, cfg) - forcing_curl(cfg, n)  # remove forcing
    expected = -(2.0 / re) * omega
    np.testing.assert_allclose(rhs, expected, atol=1e-10)

    # independent finite-difference oracle (exact velocities, FD derivatives)
    x, y = grid_coordinates(n)
    u_exact = -np.cos(x) * np.sin(y)
    v_exact = np.sin(x) * np.cos(y)
    dx = 2 * np.pi / n
    wx = (np.roll(omega, -1, 0) - np.roll(omega, 1, 0)) / (2 * dx)
    wy = (np.roll(omega, -1, 1) - np.roll(omega, 1, 1)) / (2 * dx)
    lap = (
        np.roll(omega, -1, 0) + np.roll(omega, 1, 0)
        + np.roll(omega, -1, 1) + np.roll(omega, 1, 1) - 4 * omega
    ) / dx**2
    fd_rhs = -(u_exact * wx + v_exact * wy) + lap / re
    assert np.max(np.abs(fd_rhs - expected)) < 5e-3  # second-order FD accuracy


def test_recovered_velocity_is_divergence_free():
    rng = np.random.default_rng(0)
    omega = rng.standard_normal((64, 64))
    u, v = velocity_from_vorticity(omega)
    n = 64
    kx = np.fft.fftfreq(n, 1.0 / n).reshape(n, 1)
    ky = np.fft.rfftfreq(n, 1.0 / n).reshape(1, n // 2 + 1)
    div_hat = 1j * kx * np.fft.rfft2(u) + 1j * ky * np.fft.rfft2(v)
    div = np.fft.irfft2(div_hat, s=(n, n))
    assert np.max(np.abs(div)) <= 1e-10


def test_zero_state_stays_zero_without_forcing():
    cfg = SolverConfig(resolution_solve=16, resolution_store=16)
    omega = np.zeros((16, 16))
    for _ in range(5):
        omega = step(omega, cfg, forcing_enabled=False)
    assert np.all(omega == 0.0)


def test_taylor_green_decay_matches_analytic():
    # Exact Navier-Stokes solution: w(t) = w(0) exp(-2 t / Re).
    n, re, t_final = 64, 1000.0, 1.0
    cfg = SolverConfig(reynolds=re, damping_coefficient=0.0, dt=0.01, snapshot_stride=10,
                       resolution_solve=n, resolution_store=n)
    omega0 = taylor_green(n)
    snaps = integrate_snapshots(omega0, cfg, int(round(t_final / cfg.snapshot_interval)),
                                forcing_enabled=False)
    expected = omega0 * np.exp(-2.0 * t_final / re)
    rel_err = np.max(np.abs(snaps[-1] - expected)) / np.max(np.abs(expected))
    assert rel_err <= 1e-3
    # amplitude ratio at t = 1.0
    ratio = snaps[-1].max() / omega0.max()
    assert ratio == pytest.approx(np.exp(-0.002), rel=1e-9)


def test_energy_decays_without_forcing_or_damping():
    cfg = SolverConfig(damping_coefficient=0.0, dt=0.01, resolution_solve=32,
                       resolution_store=32)
    rng = np.random.default_rng(1)
    omega = random_vorticity(rng, 32, cfg)
    energies = []
    for _ in range(20):
        u, v = velocity_from_vorticity(omega)
        energies.append(float(np.mean(u**2 + v**2)))
        omega = step(omega, cfg, forcing_enabled=False)
    assert np.all(np.diff(energies) <= 1e-12)


def test_viscous_propagator_is_exactly_invertible():
    cfg = SolverConfig(resolution_solve=32, resolution_store=32)
    rng = np.random.default_rng(2)
    omega = rng.standard_normal((32, 32))
    roundtrip = viscous_propagator(viscous_propagator(omega, cfg, cfg.dt), cfg, -cfg.dt)
    assert np.max(np.abs(roundtrip - omega)) <= 1e-10


def test_single_mode_forward_backward_step():
    # A single Fourier mode has zero advection, so with f=0 and alpha=0 the
    # step is the pure viscous factor and is invertible via the propagator.
    n = 32
    cfg = SolverConfig(damping_coefficient=0.0, dt=0.01, resolution_solve=n,
                       resolution_store=n)
    x, _ = grid_coordinates(n)
    omega = np.cos(3 * x)
    stepped = step(omega, cfg, forcing_enabled=False)
    recovered = viscous_propagator(stepped, cfg, -cfg.dt)
    assert np.max(np.abs(recovered - omega)) <= 1e-10


def test_cfl_warning():
    cfg = SolverConfig(dt=2.0, snapshot_stride=1, resolution_solve=32, resolution_store=32)
    rng = np.random.default_rng(3)
    omega = 5.0 * random_vorticity(rng, 32, cfg)
    with pytest.warns(RuntimeWarning, match="CFL"):
        try:
            step(omega, cfg)
        except SolverBlowUpError:
            pass


def test_blow_up_error_carries_step_index():
    cfg = SolverConfig(dt=5.0, snapshot_stride=2, resolution_solve=16, resolution_store=16)
    rng = np.random.default_rng(4)
    omega = 10.0 * random_vorticity(rng, 16, cfg)
    with pytest.raises(SolverBlowUpError) as info:
        with pytest.warns(RuntimeWarning):
            integrate_snapshots(omega, cfg, 50)
    assert info.value.step_index is not None and info.value.step_index >= 1


def test_batched_step_matches_individual():
    cfg = SolverConfig(resolution_solve=16, resolution_store=16)
    rng = np.random.default_rng(5)
    batch = np.stack([random_vorticity(rng, 16, cfg) for _ in range(3)])
    stepped = step(batch, cfg)
    for i in range(3):
        np.testing.assert_allclose(stepped[i], step(batch[i], cfg), atol=1e-12)


def test_random_vorticity_statistics():
    cfg = SolverConfig()
    rng = np.random.default_rng(6)
    omega = random_vorticity(rng, 64, cfg)
    assert omega.std() == pytest.approx(1.0)
    assert abs(omega.mean()) < 1e-12


def test_spectral_downsample_removes_high_shells():
    cfg = SolverConfig()
    rng = np.random.default_rng(7)
    fine = random_vorticity(rng, 64, cfg)
    coarse = spectral_downsample(fine, 32)
    assert coarse.shape == (32, 32)
    # brute-force DFT oracle: no energy above shell 16
    spec = np.abs(np.fft.fft2(coarse)) ** 2
    kf = np.fft.fftfreq(32, 1.0 / 32)
    shells = np.rint(np.sqrt(kf[:, None] ** 2 + kf[None, :] ** 2)).astype(int)
    assert spec[shells > 16].max() <= 1e-20 * spec.sum()
    # retained modes are unchanged (pure truncation)
    fine_spec = np.fft.fft2(fine)
    coarse_spec = np.fft.fft2(coarse)
    np.testing.assert_allclose(
        coarse_spec[1, 2] / 32**2, fine_spec[1, 2] / 64**2, rtol=1e-10
    )
