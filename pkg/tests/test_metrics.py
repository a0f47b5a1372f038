"""Metric closed forms, brute-force oracles, and distributional properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cohesion.metrics import (
    MsssimParams,
    compare_tables,
    evaluate_rollout,
    mae,
    max_feasible_scales,
    ms_ssim,
    power_spectrum,
    read_metric_table,
    rescale_pair,
    rmse,
    spec_div,
    spec_div_spectra,
    write_metric_table,
)

fields = hnp.arrays(
    np.float64, (8, 8),
    elements=st.floats(min_value=-100, max_value=100, allow_nan=False),
)


def test_rmse_mae_closed_forms():
    rng = np.random.default_rng(0)
    truth = rng.standard_normal((16, 16))
    assert rmse(truth, truth) == 0.0
    assert mae(truth, truth) == 0.0
    assert rmse(truth + 2.5, truth) == pytest.approx(2.5, abs=1e-12)
    assert mae(truth - 2.5, truth) == pytest.approx(2.5, abs=1e-12)


def test_rmse_mae_match_direct_summation():
    rng = np.random.default_rng(1)
    pred = rng.standard_normal((12, 12))
    truth = rng.standard_normal((12, 12))
    acc_sq, acc_abs = 0.0, 0.0
    for i in range(12):
        for j in range(12):
            diff = pred[i, j] - truth[i, j]
            acc_sq += diff * diff
            acc_abs += abs(diff)
    assert rmse(pred, truth) == pytest.approx(np.sqrt(acc_sq / 144), abs=1e-12)
    assert mae(pred, truth) == pytest.approx(acc_abs / 144, abs=1e-12)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        rmse(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        spec_div(np.ones((4, 4)), np.ones((8, 8)))


@given(fields, fields)
@settings(max_examples=100, deadline=None)
def test_rmse_dominates_mae(pred, truth):
    # power-mean inequality: quadratic mean >= arithmetic mean of |errors|
    assert rmse(pred, truth) >= mae(pred, truth) - 1e-12


def test_msssim_identity_is_one():
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 255, (64, 64))
    assert ms_ssim(img, img, MsssimParams(scales=2)) == pytest.approx(1.0, abs=1e-9)


def test_msssim_inverted_image_is_near_zero():
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 255, (64, 64))
    value = ms_ssim(255 - img, img, MsssimParams(scales=2))
    assert 0.0 <= value < 0.05


def test_msssim_constant_shift_closed_form():
    # constant images: contrast and structure are exactly 1 (C-regularized),
    # luminance follows the closed form of its comparison measure
    params = MsssimParams(scales=1)
    a = np.full((16, 16), 100.0)
    b = np.full((16, 16), 120.0)
    c1 = (params.k1 * params.dynamic_range) ** 2
    lum = (2 * 100 * 120 + c1) / (100**2 + 120**2 + c1)
    weights = 1.0  # single scale, renormalized weight
    assert ms_ssim(a, b, params) == pytest.approx(lum**weights, rel=1e-12)
    assert ms_ssim(a, b, params) < 1.0


def test_msssim_reference_pyramid_oracle():
    # independent implementation: explicit python loops over window positions
    params = MsssimParams(scales=2, window=5, window_sigma=1.5)
    rng = np.random.default_rng(4)
    a = rng.uniform(0, 255, (24, 24))
    b = np.clip(a + rng.normal(0, 25, (24, 24)), 0, 255)

    def gauss(size, sigma):
        off = np.arange(size) - (size - 1) / 2
        k = np.exp(-(off**2) / (2 * sigma**2))
        return k / k.sum()

    def local_terms(x, y, win, c2, c3):
        k2 = np.outer(gauss(win, params.window_sigma), gauss(win, params.window_sigma))
        n = x.shape[0] - win + 1
        cs, ss = [], []
        mus = []
        for i in range(n):
            for j in range(n):
                px = x[i : i + win, j : j + win]
                py = y[i : i + win, j : j + win]
                mx, my = (k2 * px).sum(), (k2 * py).sum()
                vx = (k2 * px * px).sum() - mx**2
                vy = (k2 * py * py).sum() - my**2
                cov = (k2 * px * py).sum() - mx * my
                vx, vy = max(vx, 0), max(vy, 0)
                cs.append((2 * np.sqrt(vx) * np.sqrt(vy) + c2) / (vx + vy + c2))
                ss.append((cov + c3) / (np.sqrt(vx) * np.sqrt(vy) + c3))
                mus.append((mx, my))
        return np.mean(cs), np.mean(ss), mus

    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    c3 = c2 / 2
    w = np.asarray(params.weights[:2])
    w = w / w.sum()
    ca, sa, _ = local_terms(a, b, 5, c2, c3)
    a2 = a.reshape(12, 2, 12, 2).mean(axis=(1, 3))
    b2 = b.reshape(12, 2, 12, 2).mean(axis=(1, 3))
    cb, sb, mus = local_terms(a2, b2, 5, c2, c3)
    lum = np.mean([(2 * mx * my + c1) / (mx**2 + my**2 + c1) for mx, my in mus])
    expected = (max(ca, 0) * max(sa, 0)) ** w[0] * (max(cb, 0) * max(sb, 0)) ** w[1] * lum ** w[1]
    assert ms_ssim(a, b, params) == pytest.approx(expected, rel=1e-10)


def test_msssim_symmetry_and_bounds():
    rng = np.random.default_rng(5)
    params = MsssimParams(scales=2)
    for _ in range(5):
        a = rng.uniform(0, 255, (32, 32))
        b = rng.uniform(0, 255, (32, 32))
        v1, v2 = ms_ssim(a, b, params), ms_ssim(b, a, params)
        assert v1 == pytest.approx(v2, abs=1e-12)
        assert 0.0 <= v1 <= 1.0


def test_msssim_too_small_suggests_reduced_scales():
    with pytest.raises(ValueError, match="scales"):
        ms_ssim(np.zeros((32, 32)), np.zeros((32, 32)), MsssimParams(scales=5))


def test_max_feasible_scales():
    assert max_feasible_scales(32) == 2   # 11-point window
    assert max_feasible_scales(64) == 3
    assert max_feasible_scales(256) == 5
    assert max_feasible_scales(8) == 0


def test_rescale_pair_uses_truth_range():
    truth = np.array([[0.0, 1.0], [2.0, 4.0]])
    pred = np.array([[4.0, 2.0], [1.0, 0.0]])
    p, t = rescale_pair(pred, truth)
    assert t.min() == 0.0 and t.max() == 255.0
    np.testing.assert_allclose(p, (pred - 0.0) / 4.0 * 255.0)
    with pytest.raises(ValueError):
        rescale_pair(pred, np.ones((2, 2)))


def test_power_spectrum_pure_mode():
    n = 32
    x = 2 * np.pi * np.arange(n) / n
    field = np.cos(4 * x)[:, None] * np.ones((1, n))
    spec = power_spectrum(field)
    assert spec.energy[4] == pytest.approx(1.0, abs=1e-12)
    assert abs(spec.energy.sum() - 1.0) <= 1e-9
    # brute-force DFT oracle on a small grid
    m = 8
    xm = 2 * np.pi * np.arange(m) / m
    small = np.cos(2 * xm)[:, None] * np.ones((1, m))
    direct = np.zeros((m, m), dtype=complex)
    for kx in range(m):
        for ky in range(m):
            for i in range(m):
                for j in range(m):
                    direct[kx, ky] += small[i, j] * np.exp(-2j * np.pi * (kx * i + ky * j) / m)
    power = np.abs(direct) ** 2
    kf = np.fft.fftfreq(m, 1.0 / m)
    shells = np.rint(np.sqrt(kf[:, None] ** 2 + kf[None, :] ** 2)).astype(int)
    oracle = np.bincount(shells.ravel(), weights=power.ravel())
    oracle /= oracle.sum()
    np.testing.assert_allclose(power_spectrum(small).energy, oracle, atol=1e-12)


def test_power_spectrum_white_noise_shell_areas():
    # flat per-mode power makes shell energy proportional to shell population
    n = 32
    rng = np.random.default_rng(6)
    acc = None
    for _ in range(100):
        spec = power_spectrum(rng.standard_normal((n, n)))
        acc = spec.energy if acc is None else acc + spec.energy
    acc /= 100
    kf = np.fft.fftfreq(n, 1.0 / n)
    shells = np.rint(np.sqrt(kf[:, None] ** 2 + kf[None, :] ** 2)).astype(int)
    counts = np.bincount(shells.ravel())
    expected = counts / counts.sum()
    for shell in range(2, 12):
        assert acc[shell] == pytest.approx(expected[shell], rel=0.10)


def test_power_spectrum_parseval():
    rng = np.random.default_rng(7)
    field = rng.standard_normal((16, 16))
    spec = power_spectrum(field)
    direct_total = float((np.abs(np.fft.fft2(field)) ** 2).sum())
    assert spec.total_power == pytest.approx(direct_total, rel=1e-12)
    # rebinned energies conserve the total
    assert float((spec.energy * spec.total_power).sum()) == pytest.approx(direct_total, rel=1e-12)


def test_power_spectrum_rejects_zero_field():
    with pytest.raises(ValueError):
        power_spectrum(np.zeros((8, 8)))


def test_spec_div_identity_and_hand_example():
    rng = np.random.default_rng(8)
    field = rng.standard_normal((16, 16))
    assert spec_div(field, field) <= 1e-12
    # two-shell arithmetic oracle (natural log)
    value = spec_div_spectra(np.array([0.75, 0.25]), np.array([0.5, 0.5]), include_dc=True)
    expected = 0.75 * np.log(1.5) + 0.25 * np.log(0.5)
    assert value == pytest.approx(expected, abs=1e-6)
    assert value == pytest.approx(0.1308, abs=5e-5)


def test_spec_div_non_negative():
    rng = np.random.default_rng(9)
    for _ in range(50):
        a = rng.standard_normal((16, 16))
        b = rng.standard_normal((16, 16))
        assert spec_div(a, b) >= 0.0


def test_spec_div_handles_empty_shells():
    n = 32
    x = 2 * np.pi * np.arange(n) / n
    mode4 = np.cos(4 * x)[:, None] * np.ones((1, n))
    mode7 = np.cos(7 * x)[:, None] * np.ones((1, n))
    value = spec_div(mode7, mode4)
    assert np.isfinite(value) and value > 0


def test_evaluate_rollout_perfect_member():
    rng = np.random.default_rng(10)
    truth = rng.standard_normal((4, 16, 16))
    pred = truth[None].copy()  # one member equal to the truth
    rows = evaluate_rollout(pred, truth, MsssimParams(scales=1, window=5))
    assert len(rows) == 4
    for row in rows:
        assert row["rmse"] == 0.0
        assert row["mae"] == 0.0
        assert row["ms_ssim"] == pytest.approx(1.0, abs=1e-9)
        assert row["spec_div"] == pytest.approx(0.0, abs=1e-12)
        assert row["n"] == 1


def test_evaluate_rollout_matches_naive_loop():
    rng = np.random.default_rng(11)
    pred = rng.standard_normal((2, 3, 4, 16, 16))  # (traj, member, T, N, N)
    truth = rng.standard_normal((2, 4, 16, 16))
    params = MsssimParams(scales=1, window=5)
    rows = evaluate_rollout(pred, truth, params)
    for t in range(4):
        # ensemble-mean forecast scored per trajectory, then averaged
        acc_rmse = []
        acc_div = []
        for g in range(2):
            mean_forecast = sum(pred[g, m, t] for m in range(3)) / 3
            acc_rmse.append(rmse(mean_forecast, truth[g, t]))
            for m in range(3):
                acc_div.append(spec_div(pred[g, m, t], truth[g, t]))
        assert rows[t]["rmse"] == pytest.approx(np.mean(acc_rmse), rel=1e-12)
        assert rows[t]["spec_div"] == pytest.approx(np.mean(acc_div), rel=1e-12)
        assert rows[t]["n"] == 6


def test_evaluate_rollout_rejects_empty_ensemble():
    with pytest.raises(ValueError, match="ensemble"):
        evaluate_rollout(np.zeros((0, 4, 8, 8)), np.zeros((4, 8, 8)))


def test_compare_tables_zero_deltas_and_coverage():
    rng = np.random.default_rng(12)
    truth = rng.standard_normal((5, 16, 16))
    pred = truth[None] + 0.1
    params = MsssimParams(scales=1, window=5)
    rows = evaluate_rollout(pred, truth, params)
    deltas = compare_tables(rows, rows)
    assert [row["leadtime"] for row in deltas] == [1, 2, 3, 4, 5]
    for row in deltas:
        for name in ("rmse", "mae", "ms_ssim", "spec_div"):
            assert row[name] == 0.0
    with pytest.raises(ValueError, match="horizon"):
        compare_tables(rows, rows[:-1])


def test_metric_table_roundtrip(tmp_path):
    rng = np.random.default_rng(13)
    truth = rng.standard_normal((3, 16, 16))
    rows = evaluate_rollout(truth[None] + 0.5, truth, MsssimParams(scales=1, window=5))
    path = tmp_path / "table.csv"
    write_metric_table(path, rows)
    header = path.read_text().splitlines()[0]
    assert header == "leadtime,metric,value,n"
    loaded = read_metric_table(path)
    assert len(loaded) == 3
    for a, b in zip(loaded, rows):
        for name in ("rmse", "mae", "ms_ssim", "spec_div"):
            assert a[name] == b[name]  # repr round-trip is exact
