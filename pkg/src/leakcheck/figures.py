"""Figure rendering for audit outputs.

The library modules emit plot-ready CSV/JSON; this module turns those into PNG
files on the CLI's report path. Rendering is optional everywhere: nothing in
the pipeline depends on matplotlib having produced a file.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .calibration import FarThreshold, Histogram


def render_score_histogram(
    hist: Histogram,
    out_path: Path,
    far: FarThreshold | None = None,
    topk_cutoff: float | None = None,
    genuine: list[float] | None = None,
    impostor: list[float] | None = None,
    title: str = "Nearest-match cosine similarity",
) -> Path:
    """Render the score histogram with threshold and top-k cutoff markers.

    Benchmark genuine/impostor scores, when given, are overlaid as density
    histograms so the threshold line can be read in context.
    """
    out_path = Path(out_path)
    edges = np.asarray(hist.edges())
    centers = (edges[:-1] + edges[1:]) / 2
    widths = np.diff(edges)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.bar(
        centers,
        hist.counts,
        width=widths,
        color="#4878cf",
        alpha=0.85,
        label="retrieved pairs",
    )
    if genuine or impostor:
        ax2 = ax.twinx()
        bench_bins = np.linspace(hist.lo, hist.hi, hist.bins + 1)
        if impostor:
            ax2.hist(
                impostor, bins=bench_bins, density=True, histtype="step",
                color="#d65f5f", label="benchmark impostor",
            )
        if genuine:
            ax2.hist(
                genuine, bins=bench_bins, density=True, histtype="step",
                color="#6acc65", label="benchmark genuine",
            )
        ax2.set_yticks([])
        ax2.legend(loc="upper left", fontsize=8)
    if far is not None:
        ax.axvline(
            far.threshold,
            color="black",
            linestyle=":",
            linewidth=1.2,
            label=f"threshold @ FAR {far.target_far:g}",
        )
    if topk_cutoff is not None and np.isfinite(topk_cutoff):
        ax.axvline(
            topk_cutoff,
            color="#b47cc7",
            linestyle="--",
            linewidth=1.2,
            label="top-k cutoff",
        )
    ax.set_xlabel("cosine similarity")
    ax.set_ylabel("pairs")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    _atomic_savefig(fig, out_path)
    plt.close(fig)
    return out_path


def render_rank_curve(scores: list[float], out_path: Path, threshold: float | None = None) -> Path:
    """Score versus queue rank, a quick read on how deep the hot band runs."""
    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(np.arange(1, len(scores) + 1), scores, color="#4878cf", linewidth=1.2)
    if threshold is not None:
        ax.axhline(threshold, color="black", linestyle=":", linewidth=1.2, label="threshold")
        ax.legend(fontsize=8)
    ax.set_xlabel("queue rank")
    ax.set_ylabel("cosine similarity")
    ax.set_title("Review queue scores by rank")
    fig.tight_layout()
    _atomic_savefig(fig, out_path)
    plt.close(fig)
    return out_path


def _atomic_savefig(fig, out_path: Path) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(out_path.parent), suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=120, format="png")
        os.replace(tmp, out_path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
