"""Pixel-, structure-, and physics-based verification metrics.

MS-SSIM follows the standard multi-scale parameterization (K1=0.01, K2=0.03,
L=255, five scales with the published exponents, 11-point Gaussian window with
sigma 1.5, dyadic 2x average-pool pyramid); inputs are expected on the 0-255
range, see rescale_pair.  The spectral divergence is a KL-style divergence
between isotropic power spectra normalized to unit sum over integer shells,
with the truth spectrum first and natural logarithms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
METRIC_NAMES = ("rmse", "mae", "ms_ssim", "spec_div")


def _check_same_shape(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _check_same_shape(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mae(pred, truth) -> float:
    pred, truth = _check_same_shape(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


@dataclass(frozen=True)
class MsssimParams:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0
    scales: int = 5
    weights: tuple[float, ...] = MSSSIM_WEIGHTS
    window: int = 11
    window_sigma: float = 1.5

    def __post_init__(self):
        if not (1 <= self.scales <= len(self.weights)):
            raise ValueError(f"scales must be in [1, {len(self.weights)}]")


def max_feasible_scales(grid_size: int, params: MsssimParams = MsssimParams()) -> int:
    """Largest scale count M with min dimension >= 2^(M-1) * window."""
    m = 0
    while m < len(params.weights) and grid_size >= 2**m * params.window:
        m += 1
    return m


def auto_msssim_params(grid_size: int) -> MsssimParams:
    """Standard parameters reduced to what the grid supports.

    The scale count drops first; on grids smaller than the 11-point window the
    window shrinks to the largest odd size that fits.
    """
    window = 11
    if grid_size < window:
        window = grid_size if grid_size % 2 else grid_size - 1
        if window < 3:
            raise ValueError(f"grid size {grid_size} too small for MS-SSIM")
    probe = MsssimParams(scales=1, window=window)
    return MsssimParams(scales=max(1, max_feasible_scales(grid_size, probe)), window=window)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return k / k.sum()


def _local_stats(a: np.ndarray, b: np.ndarray, kernel: np.ndarray):
    k2d = np.outer(kernel, kernel)
    mu_a = convolve2d(a, k2d, mode="valid")
    mu_b = convolve2d(b, k2d, mode="valid")
    var_a = convolve2d(a * a, k2d, mode="valid") - mu_a**2
    var_b = convolve2d(b * b, k2d, mode="valid") - mu_b**2
    cov = convolve2d(a * b, k2d, mode="valid") - mu_a * mu_b
    return mu_a, mu_b, np.maximum(var_a, 0.0), np.maximum(var_b, 0.0), cov


def _downsample2(a: np.ndarray) -> np.ndarray:
    h, w = a.shape
    if h % 2 or w % 2:
        raise ValueError("image dimensions must be even to build the dyadic pyramid")
    return a.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def ms_ssim(pred, truth, params: MsssimParams = MsssimParams()) -> float:
    """Multi-scale structural similarity on images already scaled to [0, L].

    Contrast and structure terms enter at every scale, luminance only at the
    coarsest; negative structure means are clamped at zero so the result stays
    in [0, 1].
    """
    pred, truth = _check_same_shape(pred, truth)
    if pred.ndim != 2:
        raise ValueError("ms_ssim expects 2-D images")
    m = params.scales
    feasible = max_feasible_scales(min(pred.shape), params)
    if feasible < m:
        raise ValueError(
            f"image of size {pred.shape} supports at most {feasible} scales "
            f"with window {params.window}; reduce `scales` in MsssimParams"
        )
    weights = np.asarray(params.weights[:m], dtype=np.float64)
    weights = weights / weights.sum()
    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    c3 = c2 / 2.0
    kernel = _gaussian_kernel(params.window, params.window_sigma)

    value = 1.0
    a, b = pred, truth
    for j in range(m):
        mu_a, mu_b, var_a, var_b, cov = _local_stats(a, b, kernel)
        sd_a, sd_b = np.sqrt(var_a), np.sqrt(var_b)
        contrast = float(np.mean((2 * sd_a * sd_b + c2) / (var_a + var_b + c2)))
        structure = float(np.mean((cov + c3) / (sd_a * sd_b + c3)))
        contrast = max(contrast, 0.0)
        structure = max(structure, 0.0)
        value *= (contrast * structure) ** weights[j]
        if j == m - 1:
            luminance = float(
                np.mean((2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1))
            )
            luminance = max(luminance, 0.0)
            value *= luminance ** weights[j]
        else:
            a, b = _downsample2(a), _downsample2(b)
    return float(value)


def rescale_pair(pred, truth, dynamic_range: float = 255.0):
    """Map both images to [0, L] using the truth field's min/max."""
    pred, truth = _check_same_shape(pred, truth)
    lo, hi = truth.min(), truth.max()
    if hi <= lo:
        raise ValueError("truth field is constant; 0-255 rescaling is undefined")
    scale = dynamic_range / (hi - lo)
    return (pred - lo) * scale, (truth - lo) * scale


@dataclass(frozen=True)
class Spectrum:
    """Isotropic power spectrum over integer wavenumber shells, unit sum."""

    wavenumbers: np.ndarray
    energy: np.ndarray
    total_power: float

    def __post_init__(self):
        if np.any(self.energy < 0):
            raise ValueError("spectral energies must be non-negative")
        if abs(float(self.energy.sum()) - 1.0) > 1e-9:
            raise ValueError("spectrum must be normalized to unit sum")


def power_spectrum(values) -> Spectrum:
    """DFT power binned into integer shells k = round(sqrt(kx^2 + ky^2))."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError("power_spectrum expects a square 2-D field")
    if not np.any(values):
        raise ValueError("all-zero field has no normalizable spectrum")
    n = values.shape[0]
    power = np.abs(np.fft.fft2(values)) ** 2
    kf = np.fft.fftfreq(n, 1.0 / n)
    shells = np.rint(np.sqrt(kf[:, None] ** 2 + kf[None, :] ** 2)).astype(int)
    energy = np.bincount(shells.ravel(), weights=power.ravel())
    total = float(power.sum())
    return Spectrum(
        wavenumbers=np.arange(energy.size), energy=energy / total, total_power=total
    )


def spec_div_spectra(truth_energy, pred_energy, include_dc: bool = False,
                     floor: float = 1e-12) -> float:
    """Sum_k S(k) log(S(k)/S_hat(k)) with the truth spectrum first.

    Both spectra are floored and renormalized over the compared shells so the
    divergence is well defined on empty shells and non-negative.
    """
    s = np.asarray(truth_energy, dtype=np.float64)
    p = np.asarray(pred_energy, dtype=np.float64)
    if s.shape != p.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {p.shape}")
    if not include_dc:
        s, p = s[1:], p[1:]
    if s.sum() <= 0 or p.sum() <= 0:
        raise ValueError("spectrum has no energy in the compared shells")
    s = s / s.sum() + floor
    p = p / p.sum() + floor
    s = s / s.sum()
    p = p / p.sum()
    return float(np.sum(s * np.log(s / p)))


def spec_div(pred, truth, include_dc: bool = False) -> float:
    """Spectral divergence between two fields (truth spectrum first)."""
    pred, truth = _check_same_shape(pred, truth)
    return spec_div_spectra(
        power_spectrum(truth).energy, power_spectrum(pred).energy, include_dc=include_dc
    )


def _to_batched(pred_ensemble, truth):
    pred = np.asarray(pred_ensemble, dtype=np.float64)
    true = np.asarray(truth, dtype=np.float64)
    if pred.ndim == 4 and true.ndim == 3:
        pred, true = pred[None], true[None]
    if pred.ndim != 5 or true.ndim != 4:
        raise ValueError(
            "expected predictions (members, T, N, N) with truth (T, N, N), "
            "optionally with a leading trajectory axis"
        )
    if pred.shape[0] != true.shape[0] or pred.shape[2:] != true.shape[1:]:
        raise ValueError(f"prediction shape {pred.shape} does not match truth {true.shape}")
    if pred.shape[1] == 0:
        raise ValueError("empty ensemble")
    return pred, true


def evaluate_rollout(pred_ensemble, truth, params: MsssimParams | None = None) -> list[dict]:
    """Per-leadtime metric table aggregated across members and trajectories.

    RMSE and MAE score the ensemble-mean forecast (the standard ensemble
    verification convention); MS-SSIM and SpecDiv, which member averaging
    would blur away, are means of per-member values.  One row per lead time;
    n counts the contributing (trajectory, member) pairs.
    """
    pred, true = _to_batched(pred_ensemble, truth)
    n_traj, n_members, horizon = pred.shape[:3]
    ens_mean = pred.mean(axis=1)
    if params is None:
        params = auto_msssim_params(pred.shape[-1])
    rows = []
    for t in range(horizon):
        acc = {name: 0.0 for name in METRIC_NAMES}
        for g in range(n_traj):
            acc["rmse"] += rmse(ens_mean[g, t], true[g, t])
            acc["mae"] += mae(ens_mean[g, t], true[g, t])
            for m in range(n_members):
                p, y = pred[g, m, t], true[g, t]
                acc["ms_ssim"] += ms_ssim(*rescale_pair(p, y), params)
                acc["spec_div"] += spec_div(p, y)
        row = {"leadtime": t + 1, "n": n_traj * n_members}
        row["rmse"] = acc["rmse"] / n_traj
        row["mae"] = acc["mae"] / n_traj
        row["ms_ssim"] = acc["ms_ssim"] / (n_traj * n_members)
        row["spec_div"] = acc["spec_div"] / (n_traj * n_members)
        rows.append(row)
    return rows


def compare_tables(cohesion_rows: list[dict], prior_rows: list[dict]) -> list[dict]:
    """Paired per-leadtime deltas (cohesion minus prior) for every metric."""
    if len(cohesion_rows) != len(prior_rows):
        raise ValueError("horizon mismatch between the compared tables")
    deltas = []
    for a, b in zip(cohesion_rows, prior_rows):
        if a["leadtime"] != b["leadtime"]:
            raise ValueError("lead times do not line up")
        row = {"leadtime": a["leadtime"], "n": min(a["n"], b["n"])}
        row.update({name: a[name] - b[name] for name in METRIC_NAMES})
        deltas.append(row)
    return deltas


def write_metric_table(path: str | Path, rows: list[dict]):
    """Serialize rows in long form with header (leadtime, metric, value, n)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["leadtime", "metric", "value", "n"])
        for row in rows:
            for name in METRIC_NAMES:
                if name in row:
                    writer.writerow([row["leadtime"], name, repr(row[name]), row["n"]])


def read_metric_table(path: str | Path) -> list[dict]:
    by_leadtime: dict[int, dict] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            lead = int(rec["leadtime"])
            row = by_leadtime.setdefault(lead, {"leadtime": lead, "n": int(rec["n"])})
            row[rec["metric"]] = float(rec["value"])
    return [by_leadtime[k] for k in sorted(by_leadtime)]
