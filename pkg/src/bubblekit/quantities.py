"""The configuration functional f_m and the scalar quantities built on it.

For concentration points q_1..q_m:

  G*_j(x)   = 8 pi R(x, q_j) + 8 pi sum_{l != j} G(x, q_l)
  f_m(x)    = sum_j [log h(x_j) + 4 pi R(x_j, x_j)] + 4 pi sum_{l != j} G(x_l, x_j)
  ell(q)    = sum_j [Lap log h(q_j) + 8 pi m] h(q_j) e^{G*_j(q_j)}     (torus)
              sum_j  Lap log h(q_j)          h(q_j) e^{G*_j(q_j)}     (disk)
  Phi_j(x)  = 8 pi sum_l G(x, q_l) - G*_j(q_j) + log h(x) - log h(q_j)
  f_qj(x)   = 8 pi [R(x,q_j) - R(q_j,q_j) + sum_{l!=j} (G(x,q_l) - G(q_j,q_l))] + log h(x)/h(q_j)
  D(q)      = lim_{r->0} sum_j h(q_j) e^{G*_j(q_j)} (int_{M_j minus B_{r_j}} e^{Phi_j} - pi / r_j^2),
              r_j = r sqrt(8 h(q_j) e^{G*_j(q_j)}).

Since h(q_j) e^{G*_j(q_j)} e^{Phi_j(x)} = h(x) exp(8 pi sum_l G(x, q_l)) =: W(x) does
not depend on j, the bracket in D equals int_{M minus union B_{r_j}} W - m pi / (8 r^2)
for every partition; the partition only affects the per-cell split.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import quadrature as quad
from . import weight as wt
from .errors import ConvergenceError, HypothesisError, NumericalError

PARTITIONS = ("voronoi", "axis")


@dataclass(frozen=True)
class BlowupConfiguration:
    table: geo.GreenTable
    weight: wt.WeightSpec
    q: np.ndarray
    r0: float = 0.0
    partition: str = "voronoi"
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        object.__setattr__(self, "q", q)
        if not self.r0:
            object.__setattr__(self, "r0", 0.1 if self.kind == geo.TORUS else 0.2)
        if self.partition not in PARTITIONS:
            raise HypothesisError(f"unknown partition {self.partition!r}")
        if self.validate:
            check_configuration(self)

    @property
    def kind(self):
        return self.table.domain.kind

    @property
    def m(self):
        return len(self.q)

    def with_q(self, q, validate=None):
        return BlowupConfiguration(self.table, self.weight, q, self.r0, self.partition,
                                   self.validate if validate is None else validate)

    def disp(self, x, y):
        d = np.asarray(x, float) - np.asarray(y, float)
        return geo.min_image(d) if self.kind == geo.TORUS else d

    def dist(self, x, y):
        d = self.disp(x, y)
        return np.sqrt(np.sum(d * d, -1))


def check_configuration(cfg: BlowupConfiguration):
    """Standing hypotheses: distinct points, 2 r0 away from vortices and the disk boundary."""
    q = cfg.q
    if q.shape[-1] != 2 or len(q) < 1:
        raise HypothesisError("q must be a non-empty list of planar points")
    cfg.table.domain.check(q, strict=True)
    for i in range(cfg.m):
        for j in range(i):
            if cfg.dist(q[i], q[j]) == 0.0:
                raise HypothesisError("concentration points must be pairwise distinct")
        for v in cfg.weight.vortices:
            if cfg.dist(q[i], v.p) < 2 * cfg.r0:
                raise HypothesisError(
                    f"q_{i + 1} lies within 2*r0 = {2 * cfg.r0:g} of the vortex at {tuple(v.p)}; "
                    "blow-up at or near vortex points is outside the hypotheses")
        if cfg.kind == geo.DISK and 1.0 - np.hypot(*q[i]) < 2 * cfg.r0:
            raise HypothesisError(f"q_{i + 1} lies within 2*r0 of the boundary")


def min_separation(cfg: BlowupConfiguration) -> float:
    if cfg.m < 2:
        return np.inf
    return min(cfg.dist(cfg.q[i], cfg.q[j]) for i in range(cfg.m) for j in range(i))


def default_delta(cfg: BlowupConfiguration) -> float:
    """Half the minimal pairwise distance among concentration and vortex points, capped at 0.25."""
    pts = [np.asarray(p) for p in cfg.q] + [np.asarray(v.p) for v in cfg.weight.vortices]
    dmin = np.inf
    for i in range(len(pts)):
        for j in range(i):
            dmin = min(dmin, float(cfg.dist(pts[i], pts[j])))
    return float(min(0.25, 0.5 * dmin))


# --------------------------------------------------------------------------
# pointwise quantities


def g_star(cfg: BlowupConfiguration, j: int, x):
    x = np.asarray(x, dtype=float)
    g = cfg.table
    val = 8 * np.pi * geo.green_regular(g, x, cfg.q[j])
    for l in range(cfg.m):
        if l != j:
            val = val + 8 * np.pi * geo.green(g, x, cfg.q[l])
    return val


def g_star_jet(cfg: BlowupConfiguration, j: int, x):
    """G*_j with gradient and Hessian in x."""
    x = np.asarray(x, dtype=float)
    g = cfg.table
    c = 8 * np.pi
    val = c * geo.green_regular(g, x, cfg.q[j])
    grad = c * geo.green_derivatives(g, x, cfg.q[j], 1, "x", regular=True)
    hess = c * geo.green_derivatives(g, x, cfg.q[j], 2, "x", regular=True)
    for l in range(cfg.m):
        if l != j:
            val = val + c * geo.green(g, x, cfg.q[l])
            grad = grad + c * geo.green_derivatives(g, x, cfg.q[l], 1, "x")
            hess = hess + c * geo.green_derivatives(g, x, cfg.q[l], 2, "x")
    return val, grad, hess


def f_m_eval(cfg: BlowupConfiguration, q=None):
    """Value, gradient (2m) and Hessian (2m x 2m) of f_m at q (default cfg.q)."""
    q = cfg.q if q is None else np.atleast_2d(np.asarray(q, float))
    m = len(q)
    g = cfg.table
    c = 4 * np.pi
    val = 0.0
    grad = np.zeros((m, 2))
    hess = np.zeros((m, 2, m, 2))
    for j in range(m):
        lv, lg, lh = wt.log_h_jet(cfg.weight, g, q[j])
        rv, rg, rh = geo.robin(g, q[j])
        val += float(lv) + c * float(rv)
        grad[j] += lg + c * rg
        hess[j, :, j, :] += lh + c * rh
        for l in range(m):
            if l == j:
                continue
            # ordered pairs: each unordered pair appears twice
            val += c * float(geo.green(g, q[l], q[j]))
            grad[j] += 2 * c * geo.green_derivatives(g, q[j], q[l], 1, "x")
            hess[j, :, j, :] += 2 * c * geo.green_derivatives(g, q[j], q[l], 2, "x")
            hess[j, :, l, :] += 2 * c * geo.green_derivatives(g, q[j], q[l], 2, "xy")
    return val, grad.reshape(-1), hess.reshape(2 * m, 2 * m)


@dataclass
class CriticalResult:
    q: np.ndarray
    hessian: np.ndarray
    det: float
    nondegenerate: bool
    grad_norm: float
    iterations: int
    value: float


def nondegeneracy(hess, rel=1e-8):
    scale = float(np.max(np.abs(hess))) if hess.size else 0.0
    det = float(np.linalg.det(hess))
    if scale == 0.0:
        return det, False
    return det, abs(det) > rel * scale ** hess.shape[0]


def find_critical_configuration(cfg: BlowupConfiguration, tol=1e-10, max_iter=50):
    """Damped Newton iteration on grad f_m starting from cfg.q."""
    q = cfg.q.copy()
    val, grad, hess = f_m_eval(cfg, q)
    it = 0
    while np.linalg.norm(grad) > tol:
        if it >= max_iter:
            raise ConvergenceError(f"critical-point search did not converge in {max_iter} steps")
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        g0 = np.linalg.norm(grad)
        while True:
            qn = q + t * step.reshape(q.shape)
            if cfg.kind == geo.TORUS:
                qn = qn - np.floor(qn)
            try:
                trial = cfg.with_q(qn, validate=False)
                check_configuration(trial)
                vn, gn, hn = f_m_eval(trial, qn)
                if np.linalg.norm(gn) < g0 or t < 1e-3:
                    break
            except (HypothesisError, geo.SingularEvaluationError):
                if t < 1e-3:
                    raise HypothesisError("points collided or left the admissible region during the search")
            t *= 0.5
        q, val, grad, hess = qn, vn, gn, hn
        it += 1
    det, nondeg = nondegeneracy(hess)
    return CriticalResult(q, hess, det, nondeg, float(np.linalg.norm(grad)), it, val)


def lap_log_h(cfg, x):
    return wt.log_h_derivs(cfg.weight, cfg.table, x)[1]


def ell_bracket(cfg: BlowupConfiguration, x):
    """Lap log h + 8 pi m - 2K on the torus; Lap log h on the disk (K = 0 on both)."""
    b = lap_log_h(cfg, x)
    if cfg.kind == geo.TORUS:
        b = b + 8 * np.pi * cfg.m
    return b


def ell(cfg: BlowupConfiguration) -> float:
    total = 0.0
    for j in range(cfg.m):
        qj = cfg.q[j]
        total += float(ell_bracket(cfg, qj) * wt.h_eval(cfg.weight, cfg.table, qj)
                       * np.exp(g_star(cfg, j, qj)))
    return total


def bubble_weight(cfg: BlowupConfiguration, j: int) -> float:
    """h(q_j) e^{G*_j(q_j)}."""
    qj = cfg.q[j]
    return float(wt.h_eval(cfg.weight, cfg.table, qj) * np.exp(g_star(cfg, j, qj)))


def f_qj(cfg: BlowupConfiguration, j: int, x):
    x = np.asarray(x, dtype=float)
    g = cfg.table
    qj = cfg.q[j]
    val = 8 * np.pi * (geo.green_regular(g, x, qj) - geo.green_regular(g, qj, qj))
    for l in range(cfg.m):
        if l != j:
            val = val + 8 * np.pi * (geo.green(g, x, cfg.q[l]) - geo.green(g, qj, cfg.q[l]))
    lx = wt.log_h_jet(cfg.weight, g, x)[0]
    lq = wt.log_h_jet(cfg.weight, g, qj)[0]
    return val + lx - lq


def phi_exponent(cfg: BlowupConfiguration, j: int, x):
    x = np.asarray(x, dtype=float)
    g = cfg.table
    val = sum(8 * np.pi * geo.green(g, x, cfg.q[l]) for l in range(cfg.m))
    qj = cfg.q[j]
    return (val - g_star(cfg, j, qj) + wt.log_h_jet(cfg.weight, g, x)[0]
            - wt.log_h_jet(cfg.weight, g, qj)[0])


# --------------------------------------------------------------------------
# D(q)


@dataclass
class DResult:
    value: float
    log_slope: float
    r2_coef: float
    defined: bool
    radii: np.ndarray
    table: np.ndarray
    per_cell: np.ndarray
    partition: str
    predicted_log_slope: float
    fit_residual: float
    notes: list = field(default_factory=list)


def cell_index(cfg: BlowupConfiguration, x, partition=None):
    """Cell label of each point: metric Voronoi cells or axis-aligned strips in x1."""
    partition = partition or cfg.partition
    x = np.asarray(x, float)
    if cfg.m == 1:
        return np.zeros(x.shape[:-1], dtype=int)
    if partition == "voronoi":
        d = np.stack([cfg.dist(x, qj) for qj in cfg.q], -1)
        return np.argmin(d, -1)
    # strips in x1 bounded halfway between consecutive q_j: nearest q_j in the x1 coordinate
    d1 = x[..., 0, None] - cfg.q[:, 0]
    if cfg.kind == geo.TORUS:
        d1 = d1 - np.floor(d1 + 0.5)
    return np.argmin(np.abs(d1), -1)


def check_partition(cfg: BlowupConfiguration, partition=None, n=256):
    """Each cell must contain the ball of radius 2 r0 around its point."""
    partition = partition or cfg.partition
    for j, qj in enumerate(cfg.q):
        th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        rr = np.linspace(0, 2 * cfg.r0, 9)[1:]
        pts = qj + rr[:, None, None] * np.stack([np.cos(th), np.sin(th)], -1)[None]
        if cfg.kind == geo.TORUS:
            pts = pts - np.floor(pts)
        if np.any(cell_index(cfg, pts, partition) != j):
            raise HypothesisError(f"partition cell {j + 1} does not contain the 2*r0 ball around q_{j + 1}")


def _weight_field(cfg, x):
    """W(x) = h(x) exp(8 pi sum_l G(x, q_l)) away from the q_l."""
    val = np.log(np.maximum(wt.h_eval(cfg.weight, cfg.table, x), 1e-300))
    for ql in cfg.q:
        val = val + 8 * np.pi * geo.green(cfg.table, x, ql)
    return np.exp(val)


def default_radii(cfg: BlowupConfiguration, count=6):
    cmax = max(np.sqrt(8 * bubble_weight(cfg, j)) for j in range(cfg.m))
    rmax = min(cfg.r0, cfg.r0 / (4 * cmax))
    return rmax * 0.5 ** np.arange(count)


def d_of_q(cfg: BlowupConfiguration, radii=None, partition=None, n_grid=512, n_r=96,
           n_theta=128, slope_tol=1e-6, require_defined=False):
    """Regularised outer integral D(q) with its logarithmic slope.

    The per-radius values are fitted by a + b log r + c r^2; a is D(q) when
    b vanishes. A materially nonzero b means ell(q) != 0 and D(q) is reported
    as undefined (the finite-r table remains usable).
    """
    partition = partition or cfg.partition
    radii = default_radii(cfg) if radii is None else np.asarray(radii, float)
    if len(radii) < 3:
        raise NumericalError("insufficient radii for extrapolation (need at least 3)")
    if np.any(np.diff(radii) >= 0):
        raise NumericalError("radii must be strictly decreasing")
    if np.any(radii <= 0) or np.any(radii > cfg.r0):
        raise NumericalError("radii must lie in (0, r0]")
    _, grad, _ = f_m_eval(cfg)
    notes = []
    if np.linalg.norm(grad) > 1e-6:
        warnings.warn("d_of_q evaluated away from a critical point of f_m", RuntimeWarning)
        notes.append(f"|grad f_m| = {np.linalg.norm(grad):.3e} (not critical)")
    if cfg.m > 1:
        check_partition(cfg, partition)

    b_out = cfg.r0
    a_in = 0.5 * cfg.r0
    weights = np.array([bubble_weight(cfg, j) for j in range(cfg.m)])
    scale = np.sqrt(8 * weights)
    if np.max(radii) * np.max(scale) >= a_in:
        raise NumericalError("largest radius too large: r_j must stay below r0/2")

    per_cell_fixed = np.zeros(cfg.m)
    # far part: W (1 - sum chi_j)
    if cfg.kind == geo.TORUS:
        pts, w = quad.torus_grid(n_grid)
    else:
        pts, w, _ = quad.disk_nodes(max(n_r * 2, 192), max(n_theta * 2, 256))
    chi = np.zeros(pts.shape[:-1])
    for qj in cfg.q:
        chi += quad.cutoff(cfg.dist(pts, qj), a_in, b_out)
    mask = chi < 1.0 - 1e-15
    far = np.zeros(pts.shape[:-1])
    far[mask] = _weight_field(cfg, pts[mask]) * (1.0 - chi[mask])
    lab = cell_index(cfg, pts, partition)
    for j in range(cfg.m):
        per_cell_fixed[j] += np.sum((far * w)[lab == j])

    # shells a_in < |x - q_j| < b_out with the cutoff, and the radius-dependent cores
    cores = np.zeros((len(radii), cfg.m))
    for j in range(cfg.m):
        qj = cfg.q[j]
        P, wq, rr = quad.polar_nodes(qj, a_in, b_out, n_r, n_theta)
        shell = weights[j] * np.exp(f_qj(cfg, j, P)) / rr**4 * quad.cutoff(rr, a_in, b_out)
        per_cell_fixed[j] += np.sum(shell * wq)
        for i, r in enumerate(radii):
            rj = r * scale[j]
            P, wq, rr = quad.polar_nodes(qj, rj, a_in, n_r, n_theta, log_radial=True)
            core = weights[j] * np.exp(f_qj(cfg, j, P)) / rr**4
            cores[i, j] = np.sum(core * wq) - np.pi / (8 * r**2)
    per_cell = cores + per_cell_fixed[None, :]
    values = per_cell.sum(axis=1)

    A = np.stack([np.ones_like(radii), np.log(radii), radii**2], -1)
    coef, *_ = np.linalg.lstsq(A, values, rcond=None)
    resid = float(np.max(np.abs(A @ coef - values)))
    a, b, c = (float(v) for v in coef)
    ell_q = ell(cfg)
    predicted = -0.5 * np.pi * ell_q
    defined = abs(b) <= slope_tol * max(1.0, abs(a))
    if require_defined and not defined:
        raise NumericalError(f"log slope {b:.3e} is not small although ell(q) = 0 was asserted")
    return DResult(a if defined else float("nan"), b, c, bool(defined), radii, values, per_cell,
                   partition, predicted, resid, notes)


def d_regularized(res: DResult, r: float) -> float:
    """Finite-r value a + b log r of the regularised bracket (O(r^2) term dropped)."""
    A = np.stack([np.ones_like(res.radii), np.log(res.radii), res.radii**2], -1)
    a, b, _ = np.linalg.lstsq(A, res.table, rcond=None)[0]
    return float(a + b * np.log(r))
