"""Uniqueness evidence: Pohozaev identities, the entire kernel, linearised spectra, multi-start probes.

Pohozaev identities are checked on manufactured frames.  For two fields
u~_1, u~_2 on a ball B_r(x0) put v_i = u~_i - phi, E_i = rho h e^{u~_i} and
f_i = Lap v_i + E_i (zero for exact solutions; phi has Lap phi = rho on the
torus and 0 on the disk, so f_i is the PDE residual of u~_i).  With
a = v_1 - v_2, s = v_1 + v_2, zeta = a / |a|, X = x - x0 and the outer normal nu:

  (1/2) oint r <Ds, Dzeta> - oint r <nu, Ds><nu, Dzeta>
      = r oint (E1 - E2)/|a| - int (E1 - E2)/|a| (2 + <D(phi + log h), X>)
        - (1 / 2|a|) int [(f1 - f2) <Ds, X> + (f1 + f2) <Da, X>]

  oint <nu, Dzeta> D_l v_1 + <nu, Dv_2> D_l zeta - (1/2) <Ds, Dzeta> nu_l
      = -oint (E1 - E2)/|a| nu_l + int (E1 - E2)/|a| D_l(phi + log h)
        + (1/|a|) int [(f1 - f2) D_l v_1 + f2 D_l a]

The forcing terms are what the divergence manipulations leave behind when the
fields are not exact solutions; with f = 0 both reduce to the classical identities.
|a| is the sup norm of a over the closed ball.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy import ndimage

from . import geometry as geo
from . import grids
from . import quadrature as quad
from . import quantities as qt
from . import solver as sv
from . import weight as wt
from .errors import ConvergenceError, NumericalError

N_BOUNDARY = 512


# --------------------------------------------------------------------------
# fields


class Field:
    """A scalar field with value, gradient and Laplacian at arbitrary points."""

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def lap(self, x):
        raise NotImplementedError

    def __add__(self, other):
        return SumField(self, other)


@dataclass
class SumField(Field):
    a: Field
    b: Field

    def value(self, x):
        return self.a.value(x) + self.b.value(x)

    def grad(self, x):
        return self.a.grad(x) + self.b.grad(x)

    def lap(self, x):
        return self.a.lap(x) + self.b.lap(x)


@dataclass
class AnalyticField(Field):
    fn: object  # x -> (value, grad, lap)

    def value(self, x):
        return self.fn(np.asarray(x, float))[0]

    def grad(self, x):
        return self.fn(np.asarray(x, float))[1]

    def lap(self, x):
        return self.fn(np.asarray(x, float))[2]


def polynomial_field(coef):
    """sum c[i, j] x1^i x2^j."""
    c = np.asarray(coef, float)
    P = np.polynomial.polynomial

    def fn(x):
        x1, x2 = x[..., 0], x[..., 1]
        d1 = P.polyder(c, axis=0)
        d2 = P.polyder(c, axis=1)
        lap = P.polyder(c, 2, axis=0)
        lap2 = P.polyder(c, 2, axis=1)
        return (P.polyval2d(x1, x2, c),
                np.stack([P.polyval2d(x1, x2, d1), P.polyval2d(x1, x2, d2)], -1),
                P.polyval2d(x1, x2, lap) + P.polyval2d(x1, x2, lap2))
    return AnalyticField(fn)


def bandlimited_field(seed=0, kmax=3, amp=1.0):
    """Random trigonometric polynomial with |k_i| <= kmax (periodic on the unit torus)."""
    rng = np.random.default_rng(seed)
    ks = np.array([(a, b) for a in range(-kmax, kmax + 1) for b in range(-kmax, kmax + 1)], float)
    ca = rng.normal(size=len(ks)) * amp / len(ks)
    cb = rng.normal(size=len(ks)) * amp / len(ks)
    w = 2 * np.pi * ks

    def fn(x):
        arg = x @ w.T
        c, s = np.cos(arg), np.sin(arg)
        val = c @ ca + s @ cb
        grad = (-s * ca) @ w + (c * cb) @ w
        lap = -(c @ (ca * np.sum(w * w, 1)) + s @ (cb * np.sum(w * w, 1)))
        return val, grad, lap
    return AnalyticField(fn)


def radial_field(center, prof, dprof, d2prof):
    """f(|x - center|) with its derivatives; prof functions take r."""
    center = np.asarray(center, float)

    def fn(x):
        d = x - center
        r = np.sqrt(np.sum(d * d, -1))
        rs = np.where(r > 0, r, 1.0)
        g1 = dprof(r)
        grad = (g1 / rs)[..., None] * d
        lap = d2prof(r) + np.where(r > 0, g1 / rs, d2prof(r))
        return prof(r), grad, lap
    return AnalyticField(fn)


def gaussian_bump(center, width, amp=1.0, periodic=True):
    """amp exp(-|x - c|^2 / 2w^2) using the minimum-image displacement when periodic."""
    center = np.asarray(center, float)

    def fn(x):
        d = x - center
        if periodic:
            d = geo.min_image(d)
        r2 = np.sum(d * d, -1)
        g = amp * np.exp(-0.5 * r2 / width**2)
        return g, -(g / width**2)[..., None] * d, g * (r2 / width**4 - 2 / width**2)
    return AnalyticField(fn)


class GridField(Field):
    """Field on a TorusGrid: spectral derivatives, quintic-spline interpolation."""

    def __init__(self, grid: grids.TorusGrid, values, order=5):
        self.grid = grid
        self.values = np.asarray(values, float)
        self.order = order
        g = grid.gradient(self.values)
        self._arrays = [self.values, g[..., 0], g[..., 1], grid.laplacian(self.values)]
        self._coef = [None] * 4

    def _interp(self, k, x):
        if self._coef[k] is None:
            self._coef[k] = ndimage.spline_filter(self._arrays[k], order=self.order, mode="grid-wrap")
        idx = self.grid.to_index(x)
        coords = np.moveaxis(idx, -1, 0).reshape(2, -1)
        v = ndimage.map_coordinates(self._coef[k], coords, order=self.order, mode="grid-wrap",
                                    prefilter=False)
        return v.reshape(idx.shape[:-1])

    def value(self, x):
        return self._interp(0, x)

    def grad(self, x):
        return np.stack([self._interp(1, x), self._interp(2, x)], -1)

    def lap(self, x):
        return self._interp(3, x)


def grid_field(f: sv.SolutionField):
    return GridField(f.grid, f.u)


def sample_field(grid, fld: Field):
    """GridField of the point values of an analytic field on the grid."""
    return GridField(grid, fld.value(grid.points))


# --------------------------------------------------------------------------
# divergence identity and Pohozaev frames


def _ball_rules(center, r, n_r=64, n_theta=128, n_b=N_BOUNDARY):
    pts, w, _ = quad.polar_nodes(center, 0.0, r, n_r, n_theta)
    pts, w = pts.reshape(-1, 2), np.ravel(w)
    th = 2 * np.pi * np.arange(n_b) / n_b
    nu = np.stack([np.cos(th), np.sin(th)], -1)
    bpts = np.asarray(center, float) + r * nu
    bw = np.full(n_b, 2 * np.pi * r / n_b)
    return pts, w, bpts, bw, nu


def divergence_identity_check(u: Field, v: Field, center, r, n_r=64, n_theta=128, n_b=N_BOUNDARY):
    """int Lap u <Dv, X> + Lap v <Du, X> against the flux of the divergence form."""
    center = np.asarray(center, float)
    pts, w, bpts, bw, nu = _ball_rules(center, r, n_r, n_theta, n_b)
    X = pts - center
    gu, gv = u.grad(pts), v.grad(pts)
    lhs = np.sum(w * (u.lap(pts) * np.sum(gv * X, -1) + v.lap(pts) * np.sum(gu * X, -1)))
    Xb = bpts - center
    gu, gv = u.grad(bpts), v.grad(bpts)
    dnu, dnv = np.sum(gu * nu, -1), np.sum(gv * nu, -1)
    flux = dnu * np.sum(gv * Xb, -1) + dnv * np.sum(gu * Xb, -1) - np.sum(gu * gv, -1) * np.sum(Xb * nu, -1)
    rhs = np.sum(bw * flux)
    return float(lhs), float(rhs), float(abs(lhs - rhs))


@dataclass
class PohozaevFrame:
    u1: Field
    u2: Field
    cfg: qt.BlowupConfiguration
    rho: float
    centers: np.ndarray
    j: int = 0
    r: float = 0.1
    forcing: bool = True
    n_r: int = 64
    n_theta: int = 128
    n_b: int = N_BOUNDARY
    notes: list = field(default_factory=list)

    @property
    def x0(self):
        return np.asarray(self.centers[self.j], float)

    def phi(self, x):
        """phi_j and its gradient (rho/m times the Green combination around the centres)."""
        cfg, j = self.cfg, self.j
        c = self.rho / cfg.m
        xs = np.asarray(self.centers, float)
        g = cfg.table
        val = c * (geo.green_regular(g, x, xs[j]) - geo.green_regular(g, xs[j], xs[j]))
        grad = c * geo.green_derivatives(g, x, xs[j], 1, "x", regular=True)
        for l in range(cfg.m):
            if l != j:
                val = val + c * (geo.green(g, x, xs[l]) - geo.green(g, xs[j], xs[l]))
                grad = grad + c * geo.green_derivatives(g, x, xs[l], 1, "x")
        return val, grad

    def _lap_phi(self):
        return self.rho if self.cfg.kind == geo.TORUS else 0.0

    def evaluate(self, x):
        """Everything the identities need at points x."""
        xw = x - np.floor(x) if self.cfg.kind == geo.TORUS else x
        ph, dph = self.phi(xw)
        lh, dlh, _ = wt.log_h_jet(self.cfg.weight, self.cfg.table, xw)
        out = {"dphi_logh": dph + dlh}
        for i, u in ((1, self.u1), (2, self.u2)):
            uu = u.value(xw)
            E = self.rho * np.exp(lh + uu)
            dv = u.grad(xw) - dph
            f = u.lap(xw) - self._lap_phi() + E if self.forcing else np.zeros_like(E)
            out[i] = (uu, dv, E, f)
        return out


def _norm_a(fr, pts, bpts):
    a = np.concatenate([fr.u1.value(_wrap(fr, pts)) - fr.u2.value(_wrap(fr, pts)),
                        fr.u1.value(_wrap(fr, bpts)) - fr.u2.value(_wrap(fr, bpts))])
    return float(np.max(np.abs(a)))


def _wrap(fr, x):
    return x - np.floor(x) if fr.cfg.kind == geo.TORUS else x


@dataclass
class IdentityResult:
    lhs: float
    rhs: float
    gap: float
    normalized_gap: float
    trivial: bool
    terms: dict


def _result(lhs, rhs, terms):
    scale = max(abs(v) for v in list(terms.values()) + [lhs, rhs])
    gap = abs(lhs - rhs)
    return IdentityResult(float(lhs), float(rhs), float(gap),
                          float(gap / scale) if scale > 0 else 0.0, False,
                          {k: float(v) for k, v in terms.items()})


def _trivial():
    return IdentityResult(0.0, 0.0, 0.0, 0.0, True, {})


def pohozaev_identity_1(fr: PohozaevFrame):
    x0, r = fr.x0, fr.r
    pts, w, bpts, bw, nu = _ball_rules(x0, r, fr.n_r, fr.n_theta, fr.n_b)
    na = _norm_a(fr, pts, bpts)
    if na == 0.0:
        return _trivial()
    B = fr.evaluate(bpts)
    (_, dv1, E1, _), (_, dv2, E2, _) = B[1], B[2]
    ds, dz = dv1 + dv2, (dv1 - dv2) / na
    t1 = 0.5 * r * np.sum(bw * np.sum(ds * dz, -1))
    t2 = -r * np.sum(bw * np.sum(nu * ds, -1) * np.sum(nu * dz, -1))
    t3 = r * np.sum(bw * (E1 - E2)) / na
    V = fr.evaluate(pts)
    (_, dv1, E1, f1), (_, dv2, E2, f2) = V[1], V[2]
    X = pts - x0
    t4 = -np.sum(w * (E1 - E2) * (2 + np.sum(V["dphi_logh"] * X, -1))) / na
    ds, da = dv1 + dv2, dv1 - dv2
    t5 = -np.sum(w * ((f1 - f2) * np.sum(ds * X, -1) + (f1 + f2) * np.sum(da * X, -1))) / (2 * na)
    return _result(t1 + t2, t3 + t4 + t5,
                   {"boundary_grad": t1, "boundary_normal": t2, "boundary_source": t3,
                    "volume_source": t4, "forcing": t5})


def pohozaev_identity_2(fr: PohozaevFrame, direction=1):
    if direction not in (1, 2):
        raise ValueError("direction must be 1 or 2")
    l = direction - 1
    x0, r = fr.x0, fr.r
    pts, w, bpts, bw, nu = _ball_rules(x0, r, fr.n_r, fr.n_theta, fr.n_b)
    na = _norm_a(fr, pts, bpts)
    if na == 0.0:
        return _trivial()
    B = fr.evaluate(bpts)
    (_, dv1, E1, _), (_, dv2, E2, _) = B[1], B[2]
    dz = (dv1 - dv2) / na
    ds = dv1 + dv2
    t1 = np.sum(bw * (np.sum(nu * dz, -1) * dv1[:, l] + np.sum(nu * dv2, -1) * dz[:, l]))
    t2 = -0.5 * np.sum(bw * np.sum(ds * dz, -1) * nu[:, l])
    t3 = -np.sum(bw * (E1 - E2) * nu[:, l]) / na
    V = fr.evaluate(pts)
    (_, dv1, E1, f1), (_, dv2, E2, f2) = V[1], V[2]
    t4 = np.sum(w * (E1 - E2) * V["dphi_logh"][..., l]) / na
    t5 = np.sum(w * ((f1 - f2) * dv1[..., l] + f2 * (dv1 - dv2)[..., l])) / na
    return _result(t1 + t2, t3 + t4 + t5,
                   {"boundary_flux": t1, "boundary_grad": t2, "boundary_source": t3,
                    "volume_source": t4, "forcing": t5})


def forcing_norm(fr: PohozaevFrame):
    """max |f_i| over the ball: zero (to solver tolerance) when both fields solve the equation."""
    pts, _, bpts, _, _ = _ball_rules(fr.x0, fr.r, fr.n_r, fr.n_theta, fr.n_b)
    forced = fr.forcing
    fr.forcing = True
    try:
        V = fr.evaluate(np.concatenate([pts, bpts]))
    finally:
        fr.forcing = forced
    return float(max(np.max(np.abs(V[1][3])), np.max(np.abs(V[2][3]))))


def disk_frame(lam, amp=0.1, width=0.05, offset=(0.03, 0.02), r=0.2, radial=False, **kw):
    """Analytic frame on the unit disk (h = 1): exact radial solution and a bumped copy."""
    mu = np.pi * np.exp(lam) - 1.0
    rho = 8 * np.pi * mu / (1 + mu)
    u1 = radial_field((0.0, 0.0), lambda t: lam - 2 * np.log1p(mu * t * t),
                      lambda t: -4 * mu * t / (1 + mu * t * t),
                      lambda t: -4 * mu * (1 - mu * t * t) / (1 + mu * t * t) ** 2)
    c = np.zeros(2) if radial else np.asarray(offset, float)
    u2 = u1 + gaussian_bump(c, width, amp, periodic=False)
    cfg = qt.BlowupConfiguration(geo.disk_table(), wt.WeightSpec(domain_kind=geo.DISK), [[0.0, 0.0]])
    return PohozaevFrame(u1, u2, cfg, rho, cfg.q, 0, r, True, **kw)


def manufactured_frame(base: sv.SolutionField, amp=0.1, width=None, offset=None, r=None,
                       j=0, centers=None, **kw):
    """Frame (u, u + amp * bump) on the grid of a torus field, with exact forcings."""
    cfg = base.cfg
    if cfg.kind != geo.TORUS:
        raise ValueError("grid frames are built on torus fields; use analytic fields on the disk")
    centers = cfg.q if centers is None else np.asarray(centers, float)
    delta = qt.default_delta(cfg)
    r = 0.5 * delta if r is None else r
    width = 0.25 * r if width is None else width
    offset = np.array([0.3 * r, 0.2 * r]) if offset is None else np.asarray(offset, float)
    bump = gaussian_bump(np.asarray(centers[j]) + offset, width, amp)
    g = base.grid
    u1 = GridField(g, base.u)
    u2 = GridField(g, base.u + bump.value(g.points))
    return PohozaevFrame(u1, u2, cfg, base.rho, centers, j, r, True, **kw)


# --------------------------------------------------------------------------
# entire kernel


KERNEL_NAMES = ("Y0", "Y1", "Y2")


def kernel_function(name, c=1.0):
    """Kernel element and its angular mode: (profile f(r), mode k, angular factor name)."""
    if name == "Y0":
        return (lambda r: (1 - c * r * r) / (1 + c * r * r)), 0
    if name in ("Y1", "Y2"):
        return (lambda r: np.sqrt(c) * r / (1 + c * r * r)), 1
    raise ValueError(f"unknown kernel element {name!r}")


def kernel_value(name, z, c=1.0):
    z = np.asarray(z, float)
    r2 = np.sum(z * z, -1)
    if name == "Y0":
        return (1 - c * r2) / (1 + c * r2)
    i = {"Y1": 0, "Y2": 1}[name]
    return np.sqrt(c) * z[..., i] / (1 + c * r2)


def psi_scale(cfg, j):
    """c = pi m h(q_j) in the rescaled kernel psi_{j,k}(z) = Y_k(sqrt(c) z)."""
    return float(np.pi * cfg.m * wt.h_eval(cfg.weight, cfg.table, cfg.q[j]))


def _fd_radial(r, f, k, order=8):
    """Residual-ready radial Laplacian f'' + f'/r - k^2 f / r^2 with centred stencils (mirrored ghosts)."""
    h = r[1] - r[0]
    half = order // 2
    parity = 1.0 if k % 2 == 0 else -1.0
    n = len(r)
    ghost_r = -r[half:0:-1]
    ghost_f = parity * f[half:0:-1]
    rr = np.concatenate([ghost_r, r])
    ff = np.concatenate([ghost_f, f])
    out = np.full(n, np.nan)
    w_c = grids.fd_weights(0.0, h * np.arange(-half, half + 1), 2)
    for i in range(n):
        lo = i
        hi = i + 2 * half
        if hi >= len(rr):
            continue
        seg = ff[lo:hi + 1]
        d1 = seg @ w_c[:, 1]
        d2 = seg @ w_c[:, 2]
        ri = rr[i + half]
        if ri == 0.0:
            out[i] = 2 * d2 if k == 0 else np.nan
        else:
            out[i] = d2 + d1 / ri - k * k * f[i] / ri**2
    return out


def entire_kernel_residual(name, c=1.0, z_max=20.0, n=2000, order=8):
    """max |Lap phi + 8c/(1+c|z|^2)^2 phi| over the radial grid for a kernel element."""
    prof, k = kernel_function(name, c)
    r = np.linspace(0.0, z_max, n + 1)
    f = prof(r)
    lap = _fd_radial(r, f, k, order)
    res = lap + 8 * c / (1 + c * r * r) ** 2 * f
    ok = np.isfinite(res)
    return float(np.max(np.abs(res[ok])))


def bubble_profile(z, mu=0.0, a=(0.0, 0.0)):
    """v_{mu,a}(z) = log(8 e^mu / (1 + e^mu |z + a|^2)^2)."""
    z = np.asarray(z, float) + np.asarray(a, float)
    return np.log(8 * np.exp(mu)) - 2 * np.log1p(np.exp(mu) * np.sum(z * z, -1))


def entire_spectrum(z_max=20.0, n=2000, modes=(0, 1, 2), per_mode=3, c=1.0):
    """Weighted eigenvalues mu of L phi = mu w phi, w = 8c/(1+c r^2)^2, per angular mode.

    Finite volumes on [0, z_max] with a Neumann end.  Exact values on the plane
    are 1 - l(l+1)/2 (the stereographic sphere), so the kernel of L shows up as
    mu = 0 with multiplicity 3 (k = 0 once, k = 1 twice).
    Returns a sorted list of (mu, k) with k >= 1 entries listed twice.
    """
    h = z_max / n
    rc = (np.arange(n) + 0.5) * h
    re = np.arange(n + 1) * h
    wgt = 8 * c / (1 + c * rc * rc) ** 2
    out = []
    for k in modes:
        main = np.zeros(n)
        off = -re[1:-1] / h
        main[:-1] += re[1:-1] / h
        main[1:] += re[1:-1] / h
        main += k * k * h / rc
        M = wgt * rc * h
        s = 1.0 / np.sqrt(M)
        d = main * s * s
        e = off * s[:-1] * s[1:]
        nu = sla.eigh_tridiagonal(d, e, select="i", select_range=(0, per_mode - 1), eigvals_only=True)
        for v in nu:
            mu = 1.0 - v
            out.extend([(float(mu), k)] * (1 if k == 0 else 2))
    out.sort(key=lambda t: abs(t[0]))
    return out


def kernel_dimension(spectrum, small=1e-2, gap=0.1):
    mags = np.array([abs(m) for m, _ in spectrum])
    dim = int(np.sum(mags < small))
    next_mag = float(mags[dim]) if dim < len(mags) else float("inf")
    return dim, next_mag, bool(next_mag > gap)


# --------------------------------------------------------------------------
# linearised spectra


def _torus_operator(f):
    """Symmetrised W^{1/2} (Lap + V) W^{-1/2}, Laplacian with the Nyquist symbol restored."""
    g = f.grid
    V = f.rho * f.h * np.exp(f.u)
    sw = np.sqrt(g.weights)
    n = g.n

    def apply(x):
        y = x.reshape(n, n) / sw
        return ((g.laplacian(y, nyquist=True) + V * y) * sw).ravel()
    return apply, V, sw


def linearized_spectrum(f: sv.SolutionField, k=10, dense_max=64, tol=1e-10):
    """k smallest-magnitude eigenvalues of Lap + rho h e^{u~}, sorted by magnitude.

    Torus: shift-invert Lanczos about 0; inner GMRES solves preconditioned by a
    sparse LU of the finite-difference counterpart (dense for n <= dense_max).  The product-form Laplacian used by the solver
    annihilates the Nyquist mode of each axis, which would plant spurious copies
    of low eigenvalues; the spectrum uses the corrected operator.  Disk: the
    nonlocal Dirichlet linearisation, per angular mode.
    """
    if f.kind == geo.DISK:
        return _disk_spectrum(f, k)
    g = f.grid
    n = g.n
    apply, V, sw = _torus_operator(f)
    nn = n * n
    if n <= dense_max:
        A = np.column_stack([apply(e) for e in np.eye(nn)])
        ev = np.linalg.eigvalsh(0.5 * (A + A.T))
        return ev[np.argsort(np.abs(ev))[:k]]
    op = spla.LinearOperator((nn, nn), lambda v: (g.laplacian(v.reshape(n, n), nyquist=True)
                                                  + V * v.reshape(n, n)).ravel())
    # sparse LU of the sixth-order finite-difference operator as preconditioner
    lu = spla.splu((g.fd_laplacian() + sps.diags(V.ravel())).tocsc())
    M = spla.LinearOperator((nn, nn), lu.solve)

    def inv(b):
        rhs = (b.reshape(n, n) / sw).ravel()
        nb = np.linalg.norm(rhs)
        if nb == 0.0:
            return np.zeros(nn)
        x, info = spla.gmres(op, rhs, rtol=tol, atol=0.0, restart=60, maxiter=20, M=M)
        # judge by the true residual: the preconditioned one can stall below it
        if info != 0 and np.linalg.norm(op(x) - rhs) > 1e-6 * nb:
            raise NumericalError("inner solve of the shift-invert eigensolver did not converge")
        return (x.reshape(n, n) * sw).ravel()

    Aop = spla.LinearOperator((nn, nn), apply)
    OPinv = spla.LinearOperator((nn, nn), inv)
    try:
        vals = spla.eigsh(Aop, k=k, sigma=0.0, which="LM", OPinv=OPinv, return_eigenvectors=False,
                          tol=1e-9, maxiter=2000, ncv=min(nn - 1, max(4 * k, 40)),
                          v0=np.random.default_rng(0).normal(size=nn))
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError("eigensolver did not converge") from exc
    return vals[np.argsort(np.abs(vals))]


def _radial_ops(g: grids.RadialGrid, parity):
    """d/dr and d^2/dr^2 on nodes 0..n-1 with ghosts mirrored by the given parity."""
    n, r = g.n, g.r
    half = g.stencil // 2
    ext = np.concatenate([-r[half:0:-1], r])
    D1 = np.zeros((n, n + 1))
    D2 = np.zeros((n, n + 1))
    for i in range(n):
        lo, hi = i - half, i + half
        if hi > n:
            hi, lo = n, n - g.stencil
        idx = np.arange(lo, hi + 1)
        c = grids.fd_weights(r[i], ext[idx + half], 2)
        sign = np.where(idx < 0, parity, 1.0)
        for col, s1, w1, w2 in zip(np.abs(idx), sign, c[:, 1], c[:, 2]):
            D1[i, col] += s1 * w1
            D2[i, col] += s1 * w2
    return D1, D2


def _disk_spectrum(f, k):
    """Eigenvalues of the Dirichlet linearisation per angular mode 0, 1, 2 (k >= 1 twice).

    Mode 0 carries the nonlocal term -rho p <p, v> with p = h e^{u~} (unit mass);
    it vanishes for the other modes.
    """
    g = f.grid
    n = g.n
    p = f.h * np.exp(f.u)
    out = []
    for mode in (0, 1, 2):
        D1, D2 = _radial_ops(g, 1.0 if mode % 2 == 0 else -1.0)
        r = g.r[:n]
        if mode == 0:
            L = np.array(g.laplacian[:, :n])
            L += f.rho * np.diag(p[:n])
            L -= f.rho * np.outer(p[:n], (g.weights * p)[:n])
        else:
            rows = np.arange(1, n)
            L = D2[np.ix_(rows, rows)] + (D1[np.ix_(rows, rows)] / r[rows, None])
            L -= np.diag(mode * mode / r[rows] ** 2)
            L += f.rho * np.diag(p[rows])
        ev = np.linalg.eigvals(L)
        ev = ev[np.argsort(np.abs(ev))][:k]
        for v in ev:
            out.extend([(complex(v), mode)] * (1 if mode == 0 else 2))
    out.sort(key=lambda t: abs(t[0]))
    vals = np.array([v for v, _ in out[:k]])
    if np.max(np.abs(vals.imag)) < 1e-8 * max(1.0, np.max(np.abs(vals))):
        vals = vals.real
    return vals


# --------------------------------------------------------------------------
# uniqueness probe


@dataclass
class ProbeResult:
    clusters: int
    members: list
    distances: np.ndarray
    failures: list
    fields: list


def _cluster(fields, tol):
    reps, members = [], []
    for i, f in enumerate(fields):
        for c, rep in enumerate(reps):
            if np.max(np.abs(f.u - rep.u)) <= tol:
                members[c].append(i)
                break
        else:
            reps.append(f)
            members.append([i])
    m = len(fields)
    dist = np.zeros((m, m))
    for a in range(m):
        for b in range(a):
            dist[a, b] = dist[b, a] = np.max(np.abs(fields[a].u - fields[b].u))
    return members, dist


def _smooth_perturbation(rng, shape_pts, kind, scale):
    if kind == geo.DISK:
        r = shape_pts
        c = rng.normal(size=4)
        return scale * sum(ci * np.cos((i + 0.5) * np.pi * r) for i, ci in enumerate(c)) / 2
    fld = bandlimited_field(int(rng.integers(1 << 31)), kmax=2, amp=scale * 4)
    return fld.value(shape_pts)


def uniqueness_probe(cfg, rho, n_starts, scale=0.3, seed=0, base=None, shift_scale=None,
                     tol=1e-6, newton_tol=None, max_iter=40):
    """Solve at fixed rho from randomised starts; count clusters of converged solutions.

    Torus: Newton from the ansatz (optionally at randomly shifted centres) or from
    the base solution, plus a random band-limited perturbation.  Disk: the
    fixed-rho Jacobian is nearly singular along the height direction
    (d rho / d lambda = O(e^{-lambda})), so each perturbed start is first solved
    with its own height pinned and then moved to the target rho by a secant
    iteration in the height, finishing with fixed-rho Newton.
    """
    if n_starts <= 0:
        return ProbeResult(0, [], np.zeros((0, 0)), [], [])
    rng = np.random.default_rng(seed)
    if base is None:
        base = _base_solution(cfg, rho)
    fields, failures = [], []
    for s in range(n_starts):
        try:
            if cfg.kind == geo.DISK:
                pert = _smooth_perturbation(rng, base.grid.r, geo.DISK, scale)
                fields.append(solve_at_rho(base.copy(u=base.u + pert), rho, newton_tol))
                continue
            sh = shift_scale if shift_scale is not None else 0.0
            q_new = cfg.q + rng.uniform(-1, 1, size=cfg.q.shape) * sh
            trial_cfg = cfg.with_q(q_new - np.floor(q_new), validate=False)
            if s % 2 == 0 or sh > 0:
                lam_guess = float(np.max(base.u))
                a = sv.bubble_ansatz(trial_cfg, lam_guess, grid=base.grid, rho=rho)
                start = base.copy(u=a.u)
            else:
                start = base.copy()
            start.u = start.u + _smooth_perturbation(rng, base.grid.points, geo.TORUS, scale)
            fields.append(sv.newton_solve(start, rho, tol=newton_tol, max_iter=max_iter))
        except (ConvergenceError, NumericalError) as exc:
            failures.append((s, str(exc)))
    members, dist = _cluster(fields, tol)
    return ProbeResult(len(members), members, dist, failures, fields)


def solve_at_rho(start: sv.SolutionField, rho, tol=None, max_secant=60):
    """Disk: pinned solve at the start's own height, secant in the height on log|8 pi m - rho|, polish."""
    top = 8 * np.pi * start.cfg.m
    if rho == top:
        raise ValueError("rho = 8 pi m is not attained on the branch")

    def g(r):
        return np.log(abs(top - r))

    lam0 = float(start.u[0])
    f0 = sv.solve_pinned(start, lam0, tol=tol)
    lam1 = lam0 + (g(f0.rho) - g(rho))  # slope -1 along the h = 1 branch
    f = sv.solve_pinned(f0, lam1, tol=tol)
    pts = [(lam0, g(f0.rho)), (lam1, g(f.rho))]
    for _ in range(max_secant):
        if abs(f.rho - rho) <= 1e-13 * rho:
            break
        (la, ga), (lb, gb) = pts[-2], pts[-1]
        if gb == ga:
            break
        lc = lb - (gb - g(rho)) * (lb - la) / (gb - ga)
        f = sv.solve_pinned(f, lc, tol=tol)
        pts.append((lc, g(f.rho)))
    else:
        raise ConvergenceError("secant in the height did not reach the target rho")
    return sv.newton_solve(f, rho, tol=tol)


def _base_solution(cfg, rho):
    """Disk solution at the requested rho."""
    if cfg.kind != geo.DISK:
        raise ValueError("pass base= (a converged torus solution) for torus probes")
    if not 0 < rho < 8 * np.pi:
        raise ValueError("disk probes need 0 < rho < 8 pi")
    lam = float(-np.log((8 * np.pi - rho) / 8))  # exact for h = 1, a start otherwise
    return solve_at_rho(sv.disk_radial_solve(lam, cfg).field, rho)
