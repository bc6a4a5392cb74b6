"""Figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no timestamps, so reruns give identical files
matplotlib.rcParams["svg.hashsalt"] = "ilpbinom"


def _save(fig, path):
    path = Path(path)
    meta = {"Date": None} if path.suffix in (".svg", ".pdf") else {}
    if path.suffix == ".svg":
        meta["Creator"] = None
    fig.savefig(path, metadata=meta)
    plt.close(fig)
    return path


def profile_figure(thetas, profiles: dict, alpha: float, path, title: str = ""):
    """Type I error curves along the null boundary with ``alpha`` dashed."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for name, rates in profiles.items():
        ax.plot(thetas, rates, lw=1.2, label=name)
    ax.axhline(alpha, ls="--", color="k", lw=0.8)
    ax.set_xlabel(r"$\theta_C$")
    ax.set_ylabel("type I error rate")
    ax.set_xlim(thetas[0], thetas[-1])
    ax.set_ylim(0, alpha * 1.15)
    if title:
        ax.set_title(title)
    if profiles:
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def region_figure(grid, path, title: str = ""):
    """Rejection region as a filled ``(n_c+1, n_d+1)`` cell map."""
    fig, ax = plt.subplots(figsize=(4.0, 4.0))
    ax.imshow(grid.T, origin="lower", cmap="Greys", vmin=0, vmax=1.6, interpolation="nearest")
    ax.set_xlabel(r"$s_C$")
    ax.set_ylabel(r"$s_D$")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
