"""Domains and Green functions.

Two flat domains are supported: the unit-area square torus and the unit disk.
On the torus the Green function solves -Delta G(., p) = delta_p - 1 with zero
mean; on the disk it solves -Delta G = delta_p with G = 0 on the boundary.  The
regular part is R(x, y) = G(x, y) + log|x - y| / (2 pi).

All evaluators are vectorised: points are arrays whose last axis has length 2
and broadcast against each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import exp1

from .errors import DomainError, SingularEvaluationError

EULER_GAMMA = 0.57721566490153286061
TWO_PI = 2.0 * np.pi

TORUS = "torus"
DISK = "disk"


@dataclass(frozen=True)
class DomainSpec:
    kind: str

    def __post_init__(self):
        if self.kind not in (TORUS, DISK):
            raise DomainError(f"unknown domain kind {self.kind!r}")

    @property
    def volume(self) -> float:
        return 1.0 if self.kind == TORUS else np.pi

    def curvature(self, x):
        return np.zeros(np.shape(x)[:-1])

    def check(self, x, strict=False):
        """Return x as an array, wrapped into [0,1)^2 on the torus.

        On the disk, points with |x| > 1 raise DomainError; strict=True also
        rejects boundary points.
        """
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != 2:
            raise DomainError("points must have a trailing axis of length 2")
        if self.kind == TORUS:
            return x - np.floor(x)
        r2 = np.sum(x * x, axis=-1)
        if np.any(r2 > 1.0 + 1e-12) or (strict and np.any(r2 >= 1.0)):
            raise DomainError("point outside the unit disk")
        return x


def min_image(d):
    """Representative of a torus displacement in [-1/2, 1/2)^2."""
    return d - np.floor(d + 0.5)


def _ein(s):
    """Ein(s) = int_0^s (1 - e^{-t}) / t dt, an entire function; equals E1(s) + log s + gamma."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = s < 2.0
    ss = s[small]
    term = ss.copy()
    acc = ss.copy()
    for k in range(2, 40):
        term = -term * ss / k
        acc = acc + term / k
    out[small] = acc
    sl = s[~small]
    out[~small] = exp1(sl) + np.log(sl) + EULER_GAMMA
    return out


def _beta(s):
    """(1 - e^{-s}) / s and its derivative, stable near s = 0."""
    s = np.asarray(s, dtype=float)
    b = np.empty_like(s)
    db = np.empty_like(s)
    small = s < 0.5
    ss = s[small]
    # series: sum_k (-s)^k / (k+1)!
    term = np.ones_like(ss)
    acc = np.ones_like(ss)
    dacc = np.zeros_like(ss)
    fact = 1.0
    for k in range(1, 25):
        fact *= k + 1
        acc = acc + (-ss) ** k / fact
        dacc = dacc + (-1) ** k * k * ss ** (k - 1) / fact
    b[small] = acc
    db[small] = dacc
    sl = s[~small]
    em = np.exp(-sl)
    b[~small] = -np.expm1(-sl) / sl
    db[~small] = (em * (1.0 + sl) - 1.0) / sl**2
    return b, db


@dataclass(frozen=True)
class GreenTable:
    """Green-function evaluator for one domain.

    method is "ewald" (torus default), "fourier" (torus cross-check, lattice
    sum with one direction summed in closed form) or "closed_form" (disk).
    """

    domain: DomainSpec
    method: str = ""
    xi: float = float(np.sqrt(np.pi))
    n_real: int = 3
    k_recip: int = 4
    k_max: int | None = None

    def __post_init__(self):
        if not self.method:
            object.__setattr__(self, "method", "ewald" if self.domain.kind == TORUS else "closed_form")
        allowed = ("ewald", "fourier") if self.domain.kind == TORUS else ("closed_form",)
        if self.method not in allowed:
            raise DomainError(f"method {self.method!r} not available on the {self.domain.kind}")

    @cached_property
    def _images(self):
        n = np.arange(-self.n_real, self.n_real + 1)
        nn = np.stack(np.meshgrid(n, n, indexing="ij"), -1).reshape(-1, 2).astype(float)
        return nn[np.any(nn != 0, axis=1)]

    @cached_property
    def _modes(self):
        # half lattice: k1 > 0, or k1 == 0 and k2 > 0; cosine sums pick up a factor 2
        k = np.arange(-self.k_recip, self.k_recip + 1)
        kk = np.stack(np.meshgrid(k, k, indexing="ij"), -1).reshape(-1, 2)
        keep = (kk[:, 0] > 0) | ((kk[:, 0] == 0) & (kk[:, 1] > 0))
        kk = kk[keep].astype(float)
        k2 = np.sum(kk**2, axis=1)
        coef = 2.0 * np.exp(-np.pi**2 * k2 / self.xi**2) / (4 * np.pi**2 * k2)
        return kk, coef

    @cached_property
    def robin_constant(self) -> float:
        """R(x, x) on the torus (independent of x)."""
        if self.domain.kind != TORUS:
            raise DomainError("the disk Robin function is not constant")
        return float(_torus_regular(self, np.zeros(2)))


def torus_table(method="ewald", **kw) -> GreenTable:
    return GreenTable(DomainSpec(TORUS), method, **kw)


def disk_table() -> GreenTable:
    return GreenTable(DomainSpec(DISK), "closed_form")


def make_table(kind: str, method: str = "") -> GreenTable:
    return GreenTable(DomainSpec(kind), method)


# --------------------------------------------------------------------------
# torus, Ewald split


def _torus_regular(tab, d):
    """Regular part as a function of the minimum-image displacement d."""
    xi2 = tab.xi**2
    r2 = np.sum(d * d, axis=-1)
    val = (_ein(xi2 * r2) - EULER_GAMMA) / (4 * np.pi) - np.log(tab.xi) / TWO_PI
    e = d[..., None, :] + tab._images
    val = val + np.sum(exp1(xi2 * np.sum(e * e, axis=-1)), axis=-1) / (4 * np.pi)
    kk, coef = tab._modes
    val = val + np.cos(TWO_PI * d @ kk.T) @ coef
    return val - 1.0 / (4 * xi2)


def _torus_regular_grad(tab, d):
    xi2 = tab.xi**2
    r2 = np.sum(d * d, axis=-1)
    b, _ = _beta(xi2 * r2)
    g = (xi2 / TWO_PI) * b[..., None] * d
    e = d[..., None, :] + tab._images
    s = xi2 * np.sum(e * e, axis=-1)
    c = (xi2 / TWO_PI) * np.exp(-s) / s
    g = g - np.sum(c[..., None] * e, axis=-2)
    kk, coef = tab._modes
    g = g - (np.sin(TWO_PI * d @ kk.T) * coef) @ (TWO_PI * kk)
    return g


def _torus_regular_hess(tab, d):
    xi2 = tab.xi**2
    eye = np.eye(2)
    r2 = np.sum(d * d, axis=-1)
    b, db = _beta(xi2 * r2)
    outer = d[..., :, None] * d[..., None, :]
    H = (xi2 / TWO_PI) * (b[..., None, None] * eye + 2 * xi2 * db[..., None, None] * outer)
    e = d[..., None, :] + tab._images
    s = xi2 * np.sum(e * e, axis=-1)
    em = np.exp(-s)
    c = (xi2 / TWO_PI) * em / s
    dc = -(xi2 / TWO_PI) * em * (1.0 + s) / s**2
    eo = e[..., :, None] * e[..., None, :]
    H = H - np.sum(c[..., None, None] * eye + 2 * xi2 * dc[..., None, None] * eo, axis=-3)
    kk, coef = tab._modes
    kko = (kk[:, :, None] * kk[:, None, :]) * (4 * np.pi**2)
    H = H - np.einsum("...m,mij->...ij", np.cos(TWO_PI * d @ kk.T) * coef, kko)
    return H


# --------------------------------------------------------------------------
# torus, lattice Fourier sum with one index summed in closed form


def _bernoulli2(t):
    return t * t - t + 1.0 / 6.0


def torus_green_fourier(d, k_max=None):
    """Zero-mean torus Green function from its Fourier series.

    The inner sum over k2 is done exactly,
        sum_k2 e^{2 pi i k2 t} / (k1^2 + k2^2) = (pi/k1) cosh(pi k1 (1-2t)) / sinh(pi k1),
    which leaves a series in k1 decaying like exp(-2 pi k1 tau), tau the
    distance of t to the nearest integer.  The axis with the larger tau is
    summed in closed form.  k_max=None picks the truncation for double precision.
    """
    d = np.asarray(d, dtype=float)
    t = d - np.floor(d)
    tau = np.minimum(t, 1.0 - t)
    swap = tau[..., 0] > tau[..., 1]
    ta = np.where(swap, t[..., 1], t[..., 0])  # summed numerically
    tb = np.where(swap, t[..., 0], t[..., 1])  # summed exactly
    taub = np.minimum(tb, 1.0 - tb)
    if np.any(taub == 0.0):
        raise SingularEvaluationError("coincident points")
    if k_max is None:
        k_max = int(np.ceil(40.0 / (TWO_PI * np.min(taub)))) + 1
    out = 0.5 * _bernoulli2(tb)
    for k in range(1, k_max + 1):
        a = np.pi * k
        ratio = (np.exp(-2 * a * tb) + np.exp(-2 * a * (1.0 - tb))) / (-np.expm1(-2 * a))
        out = out + np.cos(TWO_PI * k * ta) * ratio / (TWO_PI * k)
    return out


def fourier_grid_green(n: int, p, k_max: int):
    """Plain truncated Fourier series of G(., p) on the n x n grid (|k|_inf <= k_max)."""
    k = np.fft.fftfreq(n, 1.0 / n)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    k2n = k1**2 + k2**2
    mask = (np.abs(k1) <= k_max) & (np.abs(k2) <= k_max) & (k2n > 0)
    coef = np.zeros((n, n), dtype=complex)
    phase = np.exp(-2j * np.pi * (k1 * p[0] + k2 * p[1]))
    coef[mask] = phase[mask] / (4 * np.pi**2 * k2n[mask])
    return np.real(np.fft.ifft2(coef)) * n * n


# --------------------------------------------------------------------------
# disk, closed form with image point y* = y/|y|^2
#   R(x, y) = (1/4 pi) log(1 - 2 x.y + |x|^2 |y|^2),
# which is smooth for x, y inside the disk and vanishes when y = 0.


def _disk_q(x, y):
    return 1.0 - 2.0 * np.sum(x * y, -1) + np.sum(x * x, -1) * np.sum(y * y, -1)


def _log_sing(d, order):
    """Derivatives in x of -(1/2 pi) log|d|, d = x - y."""
    r2 = np.sum(d * d, -1)
    if order == 0:
        return -np.log(r2) / (4 * np.pi)
    if order == 1:
        return -d / (TWO_PI * r2[..., None])
    outer = d[..., :, None] * d[..., None, :]
    return -(np.eye(2) / r2[..., None, None] - 2 * outer / r2[..., None, None] ** 2) / TWO_PI


def _check_pair(tab, x, y, allow_diag):
    dom = tab.domain
    x = dom.check(x)
    y = dom.check(y, strict=(dom.kind == DISK))
    d = x - y
    if dom.kind == TORUS:
        d = min_image(d)
    if not allow_diag and np.any(np.sum(d * d, -1) == 0.0):
        raise SingularEvaluationError("coincident points in Green-function evaluation")
    return x, y, d


def green_regular(tab: GreenTable, x, y):
    """R(x, y); the diagonal x = y gives the Robin function."""
    x, y, d = _check_pair(tab, x, y, True)
    if tab.domain.kind == DISK:
        return np.log(_disk_q(x, y)) / (4 * np.pi)
    if tab.method == "fourier":
        r2 = np.sum(d * d, -1)
        if np.any(r2 == 0.0):
            raise SingularEvaluationError("the Fourier route cannot evaluate the diagonal")
        return torus_green_fourier(d, tab.k_max) + np.log(r2) / (4 * np.pi)
    return _torus_regular(tab, d)


def green(tab: GreenTable, x, y):
    x, y, d = _check_pair(tab, x, y, False)
    if tab.domain.kind == TORUS and tab.method == "fourier":
        return torus_green_fourier(d, tab.k_max)
    return green_regular(tab, x, y) + _log_sing(d, 0)


def green_derivatives(tab: GreenTable, x, y, order: int, wrt: str = "y", regular: bool = False):
    """Gradient (order 1) or Hessian (order 2) of G, or of R when regular=True.

    wrt selects the variable: "y", "x", or "xy" for the mixed block
    H[i, j] = d^2 / dx_i dy_j (order 2 only).
    """
    if order not in (1, 2) or wrt not in ("x", "y", "xy") or (wrt == "xy" and order != 2):
        raise ValueError("order must be 1 or 2; wrt in {x, y, xy}; mixed needs order 2")
    x, y, d = _check_pair(tab, x, y, regular)
    if tab.domain.kind == TORUS:
        # everything depends on d = x - y only
        if order == 1:
            gx = _torus_regular_grad(tab, d)
            if not regular:
                gx = gx + _log_sing(d, 1)
            return gx if wrt == "x" else -gx
        H = _torus_regular_hess(tab, d)
        if not regular:
            H = H + _log_sing(d, 2)
        return -H if wrt == "xy" else H
    return _disk_derivs(x, y, d, order, wrt, regular)


def _disk_derivs(x, y, d, order, wrt, regular):
    q = _disk_q(x, y)[..., None]
    x2 = np.sum(x * x, -1)[..., None]
    y2 = np.sum(y * y, -1)[..., None]
    a = -2 * x + 2 * x2 * y  # dQ/dy
    b = -2 * y + 2 * y2 * x  # dQ/dx
    c = 1.0 / (4 * np.pi)
    if order == 1:
        g = c * (a if wrt == "y" else b) / q
        if not regular:
            g = g + (-1.0 if wrt == "y" else 1.0) * _log_sing(d, 1)
        return g
    q2 = q[..., None]
    if wrt == "y":
        H = c * (2 * x2[..., None] * np.eye(2) / q2 - a[..., :, None] * a[..., None, :] / q2**2)
    elif wrt == "x":
        H = c * (2 * y2[..., None] * np.eye(2) / q2 - b[..., :, None] * b[..., None, :] / q2**2)
    else:
        H = c * ((-2 * np.eye(2) + 4 * x[..., :, None] * y[..., None, :]) / q2
                 - b[..., :, None] * a[..., None, :] / q2**2)
    if not regular:
        # the singular part depends on d = x - y, so only the mixed block flips sign
        H = H + (-1.0 if wrt == "xy" else 1.0) * _log_sing(d, 2)
    return H


def robin(tab: GreenTable, y):
    """Robin function y -> R(y, y) with its gradient and Hessian."""
    y = tab.domain.check(y, strict=(tab.domain.kind == DISK))
    if tab.domain.kind == TORUS:
        shape = y.shape[:-1]
        return (np.full(shape, tab.robin_constant), np.zeros(shape + (2,)), np.zeros(shape + (2, 2)))
    # R(y, y) = (1/2 pi) log(1 - |y|^2)
    s = 1.0 - np.sum(y * y, -1)
    val = np.log(s) / TWO_PI
    grad = -2 * y / (TWO_PI * s[..., None])
    hess = -(2 * np.eye(2) / s[..., None, None]
             + 4 * y[..., :, None] * y[..., None, :] / s[..., None, None] ** 2) / TWO_PI
    return val, grad, hess


def torus_green_integral(tab: GreenTable, y, n=256, a=0.2, n_r=64):
    """int_T G(x, y) dx by a cutoff split (should vanish).

    With chi the smooth cutoff on [a, 2a], G - chi * (-log r / 2 pi) is smooth
    and periodic, so the trapezoid rule is spectral; the singular piece is
    radial and done by a 1-D rule (exact on [0, a]).
    """
    from .quadrature import cutoff, gauss_legendre

    if tab.domain.kind != TORUS:
        raise DomainError("torus only")
    y = np.asarray(y, float)
    s = np.arange(n) / n + 0.5 / n
    x = np.stack(np.meshgrid(s, s, indexing="ij"), -1).reshape(-1, 2)
    d = min_image(x - y)
    r = np.sqrt(np.sum(d * d, -1))
    chi = cutoff(r, a, 2 * a)
    near = r < a
    f = np.empty(len(x))
    f[near] = green_regular(tab, x[near], y)
    far = ~near
    f[far] = green(tab, x[far], y) + chi[far] * np.log(r[far]) / TWO_PI
    smooth = float(np.mean(f))
    rr, w = gauss_legendre(n_r, a, 2 * a)
    sing = -(0.5 * a * a * np.log(a) - 0.25 * a * a) - float(np.sum(w * rr * np.log(rr) * cutoff(rr, a, 2 * a)))
    return smooth + sing
