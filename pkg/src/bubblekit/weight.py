"""The weight h = h* exp(-4 pi sum_j alpha_j G(., p_j)) and its logarithmic derivatives.

h* comes from a closed-form family with exact derivatives:

  constant   h* = value
  exp_trig   log h* = c0 + sum amp * cos(2 pi (k1 x1 + k2 x2) + phase)
  exp_poly   log h* = sum c * x1^i * x2^j   (disk)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import ConfigError, HypothesisError, SingularEvaluationError

VORTEX_CLAMP = 1e-8


@dataclass(frozen=True)
class TrigTerm:
    amp: float
    k: tuple[float, float]
    phase: float = 0.0


@dataclass(frozen=True)
class PolyTerm:
    coef: float
    powers: tuple[int, int]


@dataclass(frozen=True)
class Vortex:
    p: tuple[float, float]
    alpha: float


@dataclass(frozen=True)
class WeightSpec:
    family: str = "constant"
    value: float = 1.0
    c0: float = 0.0
    trig: tuple[TrigTerm, ...] = ()
    poly: tuple[PolyTerm, ...] = ()
    vortices: tuple[Vortex, ...] = ()
    sigma: float = 1.0
    domain_kind: str = geo.TORUS
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.family not in ("constant", "exp_trig", "exp_poly"):
            raise ConfigError(f"unknown h* family {self.family!r}")
        if self.family == "constant" and not self.value > 0:
            raise ConfigError("constant h* must be positive")
        if not 0 < self.sigma <= 1:
            raise ConfigError("Hoelder exponent sigma must lie in (0, 1]")
        if self.family == "exp_trig" and self.domain_kind == geo.TORUS:
            for t in self.trig:
                if any(float(k) != round(k) for k in t.k):
                    raise ConfigError("torus trigonometric terms need integer wave numbers")
        ps = [np.asarray(v.p, float) for v in self.vortices]
        for v in self.vortices:
            if not v.alpha > -1:
                raise ConfigError("vortex strengths must exceed -1")
        for i in range(len(ps)):
            for j in range(i):
                d = ps[i] - ps[j]
                if self.domain_kind == geo.TORUS:
                    d = geo.min_image(d)
                if np.hypot(*d) == 0.0:
                    raise HypothesisError("vortex points must be pairwise distinct")


def smooth_jet(w: WeightSpec, x):
    """log h* with gradient and Hessian at x (shape (..., 2))."""
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    val = np.zeros(shape)
    grad = np.zeros(shape + (2,))
    hess = np.zeros(shape + (2, 2))
    if w.family == "constant":
        val += np.log(w.value)
    elif w.family == "exp_trig":
        val += w.c0
        for t in w.trig:
            k = 2 * np.pi * np.asarray(t.k, float)
            arg = x @ k + t.phase
            c, s = np.cos(arg), np.sin(arg)
            val += t.amp * c
            grad -= t.amp * s[..., None] * k
            hess -= t.amp * c[..., None, None] * np.outer(k, k)
    else:
        x1, x2 = x[..., 0], x[..., 1]
        for t in w.poly:
            i, j = t.powers
            val += t.coef * x1**i * x2**j
            if i:
                grad[..., 0] += t.coef * i * x1 ** (i - 1) * x2**j
            if j:
                grad[..., 1] += t.coef * j * x1**i * x2 ** (j - 1)
            if i > 1:
                hess[..., 0, 0] += t.coef * i * (i - 1) * x1 ** (i - 2) * x2**j
            if j > 1:
                hess[..., 1, 1] += t.coef * j * (j - 1) * x1**i * x2 ** (j - 2)
            if i and j:
                m = t.coef * i * j * x1 ** (i - 1) * x2 ** (j - 1)
                hess[..., 0, 1] += m
                hess[..., 1, 0] += m
    return val, grad, hess


def _vortex_dist(g, x, p):
    d = x - p
    if g.domain.kind == geo.TORUS:
        d = geo.min_image(d)
    return np.sqrt(np.sum(d * d, -1))


def log_h_jet(w: WeightSpec, g: geo.GreenTable, x):
    """log h, its gradient and Hessian. Raises at vortex points with alpha != 0."""
    x = g.domain.check(x)
    val, grad, hess = smooth_jet(w, x)
    for v in w.vortices:
        if v.alpha == 0:
            continue
        p = np.asarray(v.p, float)
        if np.any(_vortex_dist(g, x, p) < VORTEX_CLAMP):
            raise SingularEvaluationError("log h is singular at a vortex point")
        c = -4 * np.pi * v.alpha
        val = val + c * geo.green(g, x, p)
        grad = grad + c * geo.green_derivatives(g, x, p, 1, "x")
        hess = hess + c * geo.green_derivatives(g, x, p, 2, "x")
    return val, grad, hess


def h_eval(w: WeightSpec, g: geo.GreenTable, x):
    """h(x) >= 0; clamps to 0 within 1e-8 of a positive-strength vortex."""
    x = g.domain.check(x)
    shape = x.shape[:-1]
    xf = x.reshape(-1, 2)
    val = smooth_jet(w, xf)[0]
    zero = np.zeros(len(xf), dtype=bool)
    for v in w.vortices:
        if v.alpha == 0:
            continue
        p = np.asarray(v.p, float)
        near = _vortex_dist(g, xf, p) < VORTEX_CLAMP
        if v.alpha < 0 and np.any(near):
            raise SingularEvaluationError("h is infinite at a vortex with negative strength")
        zero |= near
        val[~near] -= 4 * np.pi * v.alpha * geo.green(g, xf[~near], p)
    out = np.where(zero, 0.0, np.exp(val)).reshape(shape)
    return out if shape else float(out)


def log_h_derivs(w: WeightSpec, g: geo.GreenTable, x):
    """(grad log h, Laplacian log h) away from vortices."""
    _, grad, hess = log_h_jet(w, g, x)
    return grad, np.trace(hess, axis1=-2, axis2=-1)
