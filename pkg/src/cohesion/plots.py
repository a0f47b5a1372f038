"""Rollout-curve and benchmark plots rendered to image files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import METRIC_NAMES

_LABELS = {
    "rmse": "RMSE",
    "mae": "MAE",
    "ms_ssim": "MS-SSIM",
    "spec_div": "SpecDiv",
}


def plot_rollout_curves(tables: dict[str, list[dict]], outdir: str | Path) -> list[Path]:
    """One figure per metric, curves labeled by table name; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric in METRIC_NAMES:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for label, rows in tables.items():
            leads = [row["leadtime"] for row in rows if metric in row]
            values = [row[metric] for row in rows if metric in row]
            if leads:
                ax.plot(leads, values, marker="o", markersize=3, label=label)
        ax.set_xlabel("lead time")
        ax.set_ylabel(_LABELS[metric])
        ax.legend()
        fig.tight_layout()
        path = outdir / f"rollout_{metric}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_benchmark(rows: list[dict], outdir: str | Path) -> Path:
    """Runtime vs chunk length, normalized to the R=1 baseline."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    rs = [row["R"] for row in rows]
    rel = [row["relative_to_R1"] for row in rows]
    ax.bar([str(r) for r in rs], rel)
    ax.set_xlabel("chunk length R")
    ax.set_ylabel("runtime relative to R=1")
    fig.tight_layout()
    path = outdir / "benchmark_runtime.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
