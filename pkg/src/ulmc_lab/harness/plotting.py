"""Static figures written next to the run report (matplotlib, Agg backend)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_curves", "plot_scaling", "plot_tail"]

_META = {"Software": None}


def _save(fig, path: Path) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return str(path)


def _positive(xs, ys):
    pairs = [(x, y) for x, y in zip(xs, ys) if y is not None and math.isfinite(y) and y > 0]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def plot_curves(
    x: Sequence[float],
    series: dict,
    path: Path,
    *,
    xlabel: str,
    ylabel: str,
    title: str,
    logy: bool = True,
    hline: Optional[float] = None,
) -> str:
    """Line plot of several named series against a common x axis."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, ys in series.items():
        xs, vals = _positive(x, ys) if logy else (list(x), list(ys))
        if xs:
            ax.plot(xs, vals, marker="o", ms=3, label=name)
    if hline is not None:
        ax.axhline(hline, color="k", ls="--", lw=1, label="tolerance")
    if logy:
        ax.set_yscale("log")
    if len(x) and min(x) > 0 and max(x) / min(x) > 50:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_scaling(x: Sequence[float], y: Sequence[float], slope: float, path: Path, *, xlabel: str, ylabel: str) -> str:
    """Log-log scatter with the fitted regression line."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(x, y, "o", label="measured")
    intercept = float(np.mean(np.log(y) - slope * np.log(x)))
    grid = np.geomspace(x.min(), x.max(), 50)
    ax.loglog(grid, np.exp(intercept) * grid**slope, "-", label=f"fit, slope {slope:.3f}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_tail(eta, empirical, bound, path: Path, *, title: str) -> str:
    """Empirical tail probabilities against an analytic envelope."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(eta, np.maximum(empirical, 1e-6), "o-", ms=3, label="empirical")
    ax.semilogy(eta, bound, "--", label="bound")
    ax.set_ylim(1e-6, 5)
    ax.set_xlabel("threshold")
    ax.set_ylabel("tail probability")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)
