"""Optional report figures.  matplotlib is imported on first use only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def available():
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        return False
    return True


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams.update({"font.size": 9, "axes.grid": True, "grid.alpha": 0.3,
                         "figure.figsize": (5.0, 3.4), "savefig.dpi": 150,
                         "svg.hashsalt": "bubblekit", "path.simplify": False})
    return plt


def _save(fig, path):
    # no timestamps in the metadata so reruns give identical files
    fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else {"Date": None},
                bbox_inches="tight")


def expansion_figure(lam, measured, leading, refined, m, path):
    plt = _pyplot()
    fig, ax = plt.subplots()
    ax.semilogy(lam, np.abs(measured), "o", ms=4, label=r"measured $|\rho - 8\pi m|$")
    ax.semilogy(lam, np.abs(leading - 8 * np.pi * m), "-", label="leading")
    ax.semilogy(lam, np.abs(refined - 8 * np.pi * m), "--", label="refined")
    ax.set_xlabel(r"$\lambda_1$")
    ax.legend(frameon=False)
    _save(fig, path)
    plt.close(fig)
    return Path(path)


def residual_figure(lam, scaled, labels, path):
    """Rescaled remainders, e.g. (measured - refined) e^lambda, against lambda."""
    plt = _pyplot()
    fig, ax = plt.subplots()
    for y, lab in zip(scaled, labels):
        ax.plot(lam, y, "o-", ms=3, label=lab)
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_xlabel(r"$\lambda_1$")
    ax.legend(frameon=False)
    _save(fig, path)
    plt.close(fig)
    return Path(path)


def spectrum_figure(lam, eigs, path):
    plt = _pyplot()
    fig, ax = plt.subplots()
    for x, ev in zip(lam, eigs):
        ev = np.asarray(ev, float)
        ax.plot(np.full(len(ev), x), ev, "k_", ms=8)
    ax.set_yscale("symlog", linthresh=1e-2)
    ax.set_xlabel(r"$\lambda$")
    ax.set_ylabel("eigenvalue")
    _save(fig, path)
    plt.close(fig)
    return Path(path)


def field_figure(points, u, path, title=""):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.0, 3.6))
    pc = ax.pcolormesh(points[..., 0], points[..., 1], u, shading="auto", cmap="viridis")
    fig.colorbar(pc, ax=ax)
    ax.set_aspect("equal")
    ax.grid(False)
    if title:
        ax.set_title(title)
    _save(fig, path)
    plt.close(fig)
    return Path(path)
