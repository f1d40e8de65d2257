"""Quadrature helpers shared by the geometry checks, D(q) and the diagnostics.

Integrals with a point singularity are split with a C-infinity radial cutoff:
the far part is smooth (periodic trapezoid on the torus, polar Gauss rule on
the disk), the near part is done in polar coordinates around the point.
"""

from __future__ import annotations

import numpy as np


def _psi(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def cutoff(r, a, b):
    """Smooth radial cutoff: 1 for r <= a, 0 for r >= b."""
    r = np.asarray(r, dtype=float)
    p = _psi((b - r) / (b - a))
    q = _psi((r - a) / (b - a))
    return p / (p + q)


def gauss_legendre(n, a, b):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * t + 0.5 * (b + a), 0.5 * (b - a) * w


def polar_nodes(center, r_in, r_out, n_r=64, n_theta=128, log_radial=False):
    """Nodes and weights (including the Jacobian r) for an annulus r_in < r < r_out.

    With log_radial the radial rule is Gauss-Legendre in t = log r, which
    integrates r^{-k} profiles near a small inner radius accurately.
    """
    if log_radial:
        t, wt = gauss_legendre(n_r, np.log(r_in), np.log(r_out))
        r = np.exp(t)
        wr = wt * r * r
    else:
        r, wr = gauss_legendre(n_r, r_in, r_out)
        wr = wr * r
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    wth = 2 * np.pi / n_theta
    rr, tt = np.meshgrid(r, th, indexing="ij")
    pts = np.stack([center[0] + rr * np.cos(tt), center[1] + rr * np.sin(tt)], -1)
    w = (wr[:, None] * wth) * np.ones_like(tt)
    return pts, w, rr


def torus_grid(n):
    """Cell-centred uniform grid on [0,1)^2 with equal weights."""
    s = (np.arange(n) + 0.5) / n
    pts = np.stack(np.meshgrid(s, s, indexing="ij"), -1)
    return pts, np.full((n, n), 1.0 / n**2)


def disk_nodes(n_r=96, n_theta=192):
    """Polar Gauss rule on the whole unit disk (spectral for smooth integrands)."""
    return polar_nodes(np.zeros(2), 0.0, 1.0, n_r, n_theta)
