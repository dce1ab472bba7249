"""Report figures: training curves, rank histograms, degree distributions."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # no creation timestamp or version string, so reruns give identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training(history: Sequence, validation: Sequence[tuple[int, float]], path: str | Path) -> Path:
    """Mean NCE loss per epoch, with validation Hits@1 on a twin axis."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        epochs = [r.epoch for r in history]
        ax.plot(epochs, [r.loss for r in history], color="C0", lw=1.5)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss", color="C0")
        if validation:
            ax2 = ax.twinx()
            e, v = zip(*validation)
            ax2.plot(e, v, "o-", color="C1", ms=3, lw=1.2)
            ax2.set_ylabel("validation Hits@1", color="C1")
            ax2.set_ylim(0, 1)
            ax2.grid(False)
        return _save(fig, path)


def plot_variant_curves(curves: dict[str, Sequence[tuple[int, float]]], path: str | Path,
                        ylabel: str = "Hits@1") -> Path:
    """One validation curve per model variant (or any labelled run)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, (label, pts) in enumerate(curves.items()):
            if pts:
                e, v = zip(*pts)
                ax.plot(e, v, "o-", ms=3, lw=1.2, color=f"C{i}", label=label)
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        ax.legend()
        return _save(fig, path)


def plot_ranks(ranks: np.ndarray, path: str | Path, title: str = "") -> Path:
    """Histogram of ranks on log-spaced bins."""
    ranks = np.asarray(ranks)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        top = max(int(ranks.max()), 2)
        bins = np.unique(np.geomspace(1, top + 1, 30).astype(int))
        ax.hist(ranks, bins=bins, color="C2")
        ax.set_xscale("log")
        ax.set_xlabel("rank")
        ax.set_ylabel("queries")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_degree_distributions(source: dict[int, int], sample: dict[int, int], path: str | Path,
                              statistic: float | None = None) -> Path:
    """Source vs sample degree frequencies on log-log axes."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for hist, label, marker in ((source, "source", "o"), (sample, "sample", "x")):
            deg = np.array([d for d in sorted(hist) if d > 0])
            if len(deg) == 0:
                continue
            cnt = np.array([hist[d] for d in deg], dtype=np.float64)
            ax.loglog(deg, cnt / sum(hist.values()), marker, ms=3, label=label, alpha=0.8)
        ax.set_xlabel("degree")
        ax.set_ylabel("fraction of entities")
        if statistic is not None:
            ax.set_title(f"K-S D = {statistic:.4f}")
        ax.legend()
        return _save(fig, path)
