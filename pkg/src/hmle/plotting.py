"""Static figures for the CLI: prediction scatter overlay and benchmark scaling."""

from __future__ import annotations

import numpy as np
from matplotlib import rc_context
from matplotlib.figure import Figure

__all__ = ["scatter_overlay", "scaling_plot"]

# fixed ids and no timestamp so repeated runs write identical SVG bytes
_SVG_META = {"Date": None}


def _save(fig: Figure, path) -> None:
    fmt = str(path).rsplit(".", 1)[-1].lower()
    meta = _SVG_META if fmt == "svg" else None
    with rc_context({"svg.hashsalt": "hmle", "svg.fonttype": "path"}):
        fig.savefig(path, metadata=meta)


def scatter_overlay(train_locations, pred_locations, path, title: str = "") -> None:
    """Training locations and prediction locations in two colours."""
    tr = np.asarray(train_locations, dtype=float)
    pr = np.asarray(pred_locations, dtype=float)
    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot()
    ax.scatter(tr[:, 0], tr[:, 1], s=2, c="#e6b800", label=f"training ({tr.shape[0]})", linewidths=0)
    if pr.size:
        ax.scatter(pr[:, 0], pr[:, 1], s=2, c="#1f4fbf", label=f"predicted ({pr.shape[0]})", linewidths=0)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", markerscale=4)
    fig.tight_layout()
    _save(fig, path)


def scaling_plot(sizes, series: dict[str, np.ndarray], path, ylabel: str = "seconds") -> None:
    """Log-log plot of measurements against n, with fitted slopes in the legend."""
    n = np.asarray(sizes, dtype=float)
    fig = Figure(figsize=(6, 4.5))
    ax = fig.add_subplot()
    for name, y in series.items():
        y = np.asarray(y, dtype=float)
        ok = y > 0
        label = name
        if ok.sum() >= 2:
            slope = np.polyfit(np.log(n[ok]), np.log(y[ok]), 1)[0]
            label = f"{name} (slope {slope:.2f})"
        ax.loglog(n[ok], y[ok], "o-", label=label)
    ax.set_xlabel("n")
    ax.set_ylabel(ylabel)
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
