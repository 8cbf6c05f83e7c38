"""Report figures: daily forecasts with their weekly levels, and training curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .hierarchy import HierarchySpec, upsample  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
}


def _pick_series(sales: np.ndarray, n: int) -> np.ndarray:
    # busiest series first, they are the ones that dominate the errors
    return np.argsort(-sales.mean(axis=1), kind="stable")[:n]


def plot_forecasts(path, history: np.ndarray, actual: np.ndarray | None, fine: np.ndarray,
                   coarse: np.ndarray, spec: HierarchySpec, ids=None, n_series: int = 4,
                   title: str = "") -> Path:
    """Context, actuals, daily forecast and the weekly step levels for the busiest series.

    ``history`` is (n, c) and the rest are horizon-aligned; ``actual`` may be None.
    """
    rows = _pick_series(np.concatenate([history, fine], axis=1), min(n_series, len(fine)))
    c, h = history.shape[1], fine.shape[1]
    t_hist, t_fut = np.arange(-c, 0), np.arange(h)
    weekly = upsample(np.asarray(coarse, dtype=np.float64), spec)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(rows), 1, figsize=(7.5, 1.9 * len(rows)), sharex=True, squeeze=False)
        for ax, r in zip(axes[:, 0], rows):
            ax.plot(t_hist, history[r], color="0.45", lw=0.9, label="context")
            if actual is not None:
                ax.plot(t_fut, actual[r], color="k", lw=0.9, label="actual")
            ax.plot(t_fut, fine[r], color="C0", lw=1.2, label="daily forecast")
            ax.step(t_fut, weekly[r], where="post", color="C3", lw=1.2, ls="--", label="weekly level")
            ax.axvline(-0.5, color="0.6", lw=0.7)
            ax.set_ylabel(str(ids[r]) if ids is not None else f"series {r}", fontsize=7)
        axes[0, 0].legend(loc="upper left", ncol=4, frameon=False)
        axes[-1, 0].set_xlabel("day relative to forecast origin")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_history(path, history: list[dict], title: str = "") -> Path:
    """Training losses (log scale) and validation RMSEd per epoch."""
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3))
        if history and history[0].get("l_enc") is not None:
            ax1.plot(epochs, [r["l_enc"] for r in history], label="encoder loss")
        ax1.plot(epochs, [r["l_dec"] for r in history], label="decoder loss")
        ax1.set_yscale("log")
        ax1.set_xlabel("epoch")
        ax1.legend(frameon=False)
        val = [r["val_rmsed"] for r in history]
        ax2.plot(epochs, val, color="C2")
        if val:
            best = int(np.argmin(val))
            ax2.plot(epochs[best], val[best], "o", color="C3")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("validation RMSEd")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path)
        plt.close(fig)
    return path
