"""Figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .benchmark import LatencyRow  # noqa: E402
from .evaluation import MetricsReport  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "legend.frameon": False,
}


def plot_latency(rows: Sequence[LatencyRow], path: str | Path, title: str = "Recommendation latency") -> Path:
    """Mean latency against basket size, one line per backend, p50-p99 band shaded."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for backend in dict.fromkeys(r.backend for r in rows):
            pts = sorted((r for r in rows if r.backend == backend), key=lambda r: r.basket_size)
            x = [r.basket_size for r in pts]
            ax.plot(x, [r.mean_ms for r in pts], marker="o", label=backend)
            ax.fill_between(x, [r.p50_ms for r in pts], [r.p99_ms for r in pts], alpha=0.15)
        ax.set_xlabel("basket size (items)")
        ax.set_ylabel("latency (ms)")
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
    return path


def plot_metrics(report: MetricsReport, path: str | Path) -> Path:
    path = Path(path)
    names = [r.strategy for r in report.rows]
    x = np.arange(len(names))
    width = 0.4
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(6.4, 0.8 * len(names)), 4.0))
        ax.bar(x - width / 2, [r.recall for r in report.rows], width, label=f"Recall@{report.k}")
        ax.bar(x + width / 2, [r.ndcg_norm for r in report.rows], width, label=f"NDCG@{report.k}")
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylim(0, 1)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
    return path
