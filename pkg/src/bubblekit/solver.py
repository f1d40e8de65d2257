"""Discrete mean field equation, bubbling branches and blow-up descriptors.

Torus: the shifted unknown u~ (with int h e^{u~} = 1) solves
    Lap u~ + rho (h e^{u~} - 1) = 0
on a stretched Fourier grid (see grids.TorusGrid).  Newton steps are solved
by GMRES preconditioned with the exact inverse of (Lap - shift).

Disk (radial configuration q = 0, radial h): u~ solves Lap u~ + rho h e^{u~} = 0
with the mass condition int h e^{u~} = 1 in place of the boundary condition;
the Dirichlet solution is u = u~ - u~(1).

Amplitude continuation pins u~ at the node on q_1 and treats rho as unknown.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline

from . import geometry as geo
from . import grids
from . import quadrature as quad
from . import quantities as qt
from . import weight as wt
from .errors import (ConfigError, ContinuationError, ConvergenceError, HypothesisError,
                     NumericalError, ResolutionError)

RESOLUTION_CELLS = 8


# --------------------------------------------------------------------------
# fields


@dataclass
class SolutionField:
    cfg: qt.BlowupConfiguration
    grid: object
    u: np.ndarray
    rho: float
    h: np.ndarray
    converged: bool = False
    iterations: int = 0
    residual_norm: float = np.nan
    history: list = field(default_factory=list)

    @property
    def kind(self):
        return self.cfg.kind

    def copy(self, u=None, rho=None):
        return SolutionField(self.cfg, self.grid, self.u.copy() if u is None else u,
                             self.rho if rho is None else rho, self.h)

    def mass(self):
        return self.grid.integrate(self.h * np.exp(self.u))

    def dirichlet_shift(self):
        """Constant c with u = u~ + c (disk: u(1) = 0; torus: 0)."""
        return -float(self.u[-1]) if self.kind == geo.DISK else 0.0


@dataclass
class BlowupDescriptors:
    lam: np.ndarray
    x: np.ndarray
    x_star: np.ndarray
    rho_j: np.ndarray
    eta_sup: np.ndarray
    eta_shape_coef: np.ndarray
    eta_shape_corr: np.ndarray
    w_sup: float
    w_c1: float
    lam_global: float
    delta: float
    mean_u: float
    outer_mass: float
    mass_total: float
    core_radius: np.ndarray
    spacing: np.ndarray
    matching_residual: np.ndarray
    lam_identity: np.ndarray
    height_spread: float

    @property
    def resolved(self):
        return bool(np.all(self.core_radius >= RESOLUTION_CELLS * self.spacing))


@dataclass
class BranchRecord:
    lambda_target: float
    field: SolutionField
    blowup: BlowupDescriptors
    newton_iters: int
    residual_norm: float
    seconds: float = 0.0

    @property
    def rho(self):
        return self.field.rho

    @property
    def resolved(self):
        return self.blowup.resolved


# --------------------------------------------------------------------------
# weights on grids


def _h_grid(cfg, grid):
    if cfg.kind == geo.TORUS:
        return grids.chunked(lambda p: wt.h_eval(cfg.weight, cfg.table, p), grid.points)
    pts = np.stack([grid.r, np.zeros_like(grid.r)], -1)
    pts[-1, 0] = 1.0 - 1e-15
    return np.asarray(wt.h_eval(cfg.weight, cfg.table, pts))


def _check_radial(cfg):
    if cfg.kind != geo.DISK:
        return
    if cfg.m != 1 or np.hypot(*cfg.q[0]) > 0:
        raise ConfigError("the disk solver handles the radial configuration m = 1, q = 0 only")
    r = np.linspace(0.05, 0.95, 7)
    th = np.linspace(0, 2 * np.pi, 9, endpoint=False)
    pts = r[:, None, None] * np.stack([np.cos(th), np.sin(th)], -1)[None]
    h = wt.h_eval(cfg.weight, cfg.table, pts)
    if np.max(np.abs(h - h[:, :1])) > 1e-12 * np.max(h):
        raise ConfigError("the disk solver needs a radially symmetric weight")


def make_field(cfg, grid, u, rho):
    return SolutionField(cfg, grid, np.asarray(u, float), float(rho), _h_grid(cfg, grid))


# --------------------------------------------------------------------------
# residual and linearisation


def residual(f: SolutionField):
    """Pointwise residual and its discrete L2 norm."""
    g = f.grid
    if f.kind == geo.TORUS:
        F = g.laplacian(f.u) + f.rho * (f.h * np.exp(f.u) - 1.0)
        return F, float(np.sqrt(g.integrate(F * F)))
    F = g.laplacian @ f.u + f.rho * f.h[:-1] * np.exp(f.u[:-1])
    w = g.weights[:-1]
    return F, float(np.sqrt(np.sum(w * F * F)))


def _disk_system(f, pinned=None):
    """Residual vector and dense Jacobian of the radial system.

    Unknowns u~ (n+1 nodes) [, rho]; equations: PDE on nodes 0..n-1, mass
    condition [, pin u~(0) = pinned].
    """
    g = f.grid
    L = g.laplacian
    e = f.h * np.exp(f.u)
    F = np.concatenate([L @ f.u + f.rho * e[:-1], [g.integrate(e) - 1.0]])
    n = g.n
    J = np.zeros((n + 1, n + 1))
    J[:n] = L
    J[np.arange(n), np.arange(n)] += f.rho * e[:-1]
    J[n] = g.weights * e
    if pinned is None:
        return F, J
    col = np.concatenate([e[:-1], [0.0]])
    J = np.hstack([J, col[:, None]])
    row = np.zeros(g.n + 2)
    row[0] = 1.0
    J = np.vstack([J, row])
    F = np.concatenate([F, [f.u[0] - pinned]])
    return F, J


class _TorusLinear:
    """GMRES solves with the Jacobian of the (optionally pinned) torus system."""

    def __init__(self, f, pin=None, rtol=1e-7, restart=80, maxiter=6):
        self.f = f
        self.g = f.grid
        self.n = self.g.n
        self.e = f.h * np.exp(f.u)
        self.V = f.rho * self.e
        self.shift = max(f.rho, 1.0)
        self.pin = pin
        self.rtol, self.restart, self.maxiter = rtol, restart, maxiter
        self.c = self.e - 1.0
        if pin is not None:
            self.zc = self.g.solve_shifted(self.c, self.shift)

    def _A(self, v):
        return self.g.laplacian(v) + self.V * v

    def solve(self, rhs_u, rhs_pin=0.0):
        nn = self.n * self.n
        g = self.g
        if self.pin is None:
            op = spla.LinearOperator((nn, nn), lambda v: self._A(v.reshape(self.n, self.n)).ravel())
            M = spla.LinearOperator((nn, nn),
                                    lambda v: g.solve_shifted(v.reshape(self.n, self.n), self.shift).ravel())
            b = rhs_u.ravel()
        else:
            i, j = self.pin

            def mv(z):
                du = z[:nn].reshape(self.n, self.n)
                return np.concatenate([(self._A(du) + self.c * z[nn]).ravel(), [du[i, j]]])

            def pc(z):
                x0 = g.solve_shifted(z[:nn].reshape(self.n, self.n), self.shift)
                y = (x0[i, j] - z[nn]) / self.zc[i, j]
                return np.concatenate([(x0 - self.zc * y).ravel(), [y]])

            op = spla.LinearOperator((nn + 1, nn + 1), mv)
            M = spla.LinearOperator((nn + 1, nn + 1), pc)
            b = np.concatenate([rhs_u.ravel(), [rhs_pin]])
        x, info = spla.gmres(op, b, rtol=self.rtol, atol=0.0, restart=self.restart,
                             maxiter=self.maxiter, M=M)
        if info < 0 or not np.all(np.isfinite(x)):
            raise NumericalError("linear solve broke down")
        if self.pin is None:
            return x.reshape(self.n, self.n), 0.0
        return x[:nn].reshape(self.n, self.n), float(x[nn])


def _merit(f, pinned, pin):
    """Residual, its L2 norm, and the norm of the full system (mass and pin rows scaled by rho)."""
    F, nrm = residual(f)
    scale = max(f.rho, 1.0)
    extra = 0.0
    if f.kind == geo.DISK:
        extra = scale * (f.mass() - 1.0)
    if pinned is not None:
        pr = float(f.u[pin] - pinned) if f.kind == geo.TORUS else float(f.u[0] - pinned)
        extra = np.hypot(extra, scale * pr)
    return F, nrm, float(np.hypot(nrm, extra))


def _newton(f0, tol, max_iter, pinned=None, pin=None, rtol=1e-7, step_tol=1e-12):
    """Damped Newton; rho is an unknown when a pinned value is given.

    Stops when the residual reaches tol or when a full step changes u~ and rho
    by less than step_tol relative (the round-off floor of the discretisation).
    """
    f = f0.copy()
    F, nrm, merit = _merit(f, pinned, pin)
    hist = [merit]
    rises = 0
    it = 0
    while merit > tol:
        if it >= max_iter:
            raise ConvergenceError(f"Newton did not reach {tol:g} in {max_iter} steps "
                                   f"(last residual {merit:.3e})", hist)
        if f.kind == geo.TORUS:
            lin = _TorusLinear(f, pin if pinned is not None else None, rtol=rtol)
            if pinned is None:
                du, drho = lin.solve(-F)
            else:
                du, drho = lin.solve(-F, -(f.u[pin] - pinned))
        else:
            Fd, J = _disk_system(f, pinned)
            try:
                step = np.linalg.solve(J, -Fd)
            except np.linalg.LinAlgError as exc:
                raise NumericalError("singular radial Jacobian") from exc
            du = step[: f.grid.n + 1]
            drho = float(step[-1]) if pinned is not None else 0.0
        tiny = (np.max(np.abs(du)) <= step_tol * (1 + np.max(np.abs(f.u)))
                and abs(drho) <= step_tol * f.rho)
        t = 1.0
        while True:
            trial = f.copy(u=f.u + t * du, rho=f.rho + t * drho)
            if np.all(np.isfinite(trial.u)):
                Ft, nt, mt = _merit(trial, pinned, pin)
                if mt < merit or t < 1.0 / 64:
                    break
            t *= 0.5
        rises = rises + 1 if mt >= merit else 0
        if rises >= 3 and not tiny:
            raise ConvergenceError("Newton residual increased over 3 successive steps", hist + [mt])
        f, F, nrm, merit = trial, Ft, nt, mt
        hist.append(merit)
        it += 1
        if tiny:
            break
    f.converged = True
    f.iterations = it
    f.residual_norm = nrm
    f.history = hist
    return f


def default_tol(cfg, lam=None):
    """Residual tolerance (discrete L2) scaled to the size of the source term."""
    return 1e-9 * max(1.0, np.exp(0.5 * (lam or 0.0)))


def newton_solve(u0: SolutionField, rho, tol=None, max_iter=30):
    """Newton for fixed rho with linearisation Lap + rho h e^{u~}."""
    if not rho > 0 or not np.all(np.isfinite(u0.u)):
        raise ValueError("need rho > 0 and a finite initial field")
    tol = default_tol(u0.cfg, float(np.max(u0.u))) if tol is None else tol
    return _newton(u0.copy(rho=float(rho)), tol, max_iter)


def solve_pinned(u0: SolutionField, lam, tol=None, max_iter=30):
    """Newton on (u~, rho) with u~ fixed to lam at the node on q_1 (disk: at r = 0)."""
    tol = default_tol(u0.cfg, lam) if tol is None else tol
    pin = u0.grid.nearest_node(u0.cfg.q[0]) if u0.kind == geo.TORUS else 0
    return _newton(u0, tol, max_iter, pinned=float(lam), pin=pin)


# --------------------------------------------------------------------------
# initial data


def disk_exact_solution(lam, r=None):
    """Exact radial Dirichlet solution on the unit disk with h = 1.

    Returns (u~ on r, rho) where u~ = lam - 2 log(1 + mu r^2), mu = pi e^lam - 1,
    and rho = 8 pi mu / (1 + mu).  The Dirichlet solution is u = 2 log((1+mu)/(1+mu r^2)).
    """
    mu = np.pi * np.exp(lam) - 1.0
    rho = 8 * np.pi * mu / (1 + mu)
    if r is None:
        return (lambda rr: lam - 2 * np.log1p(mu * np.asarray(rr) ** 2)), rho
    return lam - 2 * np.log1p(mu * np.asarray(r, float) ** 2), rho


def bubble_heights(cfg, lam1):
    """Heights from the equal e^{lam_j} h(q_j)^2 e^{G*_j(q_j)} relation."""
    hq = np.array([float(wt.h_eval(cfg.weight, cfg.table, qj)) for qj in cfg.q])
    gs = np.array([float(qt.g_star(cfg, j, cfg.q[j])) for j in range(cfg.m)])
    k = 2 * np.log(hq) + gs
    return lam1 + k[0] - k, hq, gs


def core_radius(rho, h, lam):
    return np.sqrt(8.0 / (rho * h)) * np.exp(-0.5 * np.asarray(lam))


def auto_map_strength(cfg, lam_max, n, cells=12):
    """Smallest stretching giving `cells` grid cells across the core at lam_max."""
    if cfg.kind != geo.TORUS:
        return 0.0
    lams, hq, _ = bubble_heights(cfg, lam_max)
    a = np.min(core_radius(8 * np.pi * cfg.m, hq, lams))
    return float(np.clip(1.0 - a * n / cells, 0.0, 0.95))


def bubble_ansatz(cfg, lam, grid=None, rho=None, n=512, strength=None):
    """Glued standard bubbles matched to sum_l 8 pi G(., q_l) plus a constant.

    Each bubble enters through chi_j (2 log mu_j - 2 log(1 + mu_j r^2)) with a smooth
    cutoff chi_j equal to 1 for r < r0 and 0 for r > 2 r0.
    """
    m = cfg.m
    rho = 8 * np.pi * m if rho is None else float(rho)
    if cfg.kind == geo.DISK:
        _check_radial(cfg)
        if grid is None:
            grid = grids.RadialGrid(400, grids.beta_for_core(float(core_radius(rho, 1.0, lam))))
        hq = float(wt.h_eval(cfg.weight, cfg.table, cfg.q[0]))
        mu = rho * hq * np.exp(lam) / 8
        return make_field(cfg, grid, lam - 2 * np.log1p(mu * grid.r**2), rho)
    lams, hq, gs = bubble_heights(cfg, lam)
    sep = qt.min_separation(cfg)
    a = core_radius(rho, hq, lams)
    if np.isfinite(sep) and sep < 4 * np.max(a):
        raise HypothesisError("bubbles overlap at this height (separation < 4 core radii)")
    if grid is None:
        s = auto_map_strength(cfg, lam, n) if strength is None else strength
        grid = grids.torus_grid_for(cfg.q, n, s)
    pts = grid.points
    mean0 = -lams[0] - 2 * np.log(rho * hq[0] / 8) - gs[0]
    u = np.full(pts.shape[:-1], mean0)
    for j, qj in enumerate(cfg.q):
        mu = rho * hq[j] * np.exp(lams[j]) / 8
        d = grids.min_image_disp(pts, qj)
        r = np.sqrt(np.sum(d * d, -1))
        chi = quad.cutoff(r, cfg.r0, 2 * cfg.r0)
        u += 8 * np.pi * grids.chunked(lambda p: geo.green_regular(cfg.table, p, qj), pts)
        u += chi * (2 * np.log(mu) - 2 * np.log1p(mu * r * r))
        far = chi < 1.0
        u[far] -= 4 * (1.0 - chi[far]) * np.log(r[far])
    return make_field(cfg, grid, u, rho)


# --------------------------------------------------------------------------
# disk radial solver


def disk_radial_solve(lam_target, cfg=None, n_r=400, beta=None, tol=1e-10, max_iter=40):
    """Pinned radial Newton for (u~, rho) with u~(0) = lam_target."""
    if cfg is None:
        cfg = qt.BlowupConfiguration(geo.disk_table(), wt.WeightSpec(domain_kind=geo.DISK), [[0.0, 0.0]])
    _check_radial(cfg)
    t0 = time.perf_counter()
    if beta is None:
        hq = float(wt.h_eval(cfg.weight, cfg.table, cfg.q[0]))
        beta = grids.beta_for_core(float(core_radius(8 * np.pi, hq, lam_target)))
    grid = grids.RadialGrid(n_r, beta)
    f0 = bubble_ansatz(cfg, lam_target, grid=grid)
    f = solve_pinned(f0, lam_target, tol=tol, max_iter=max_iter)
    desc = extract_blowup(f, cfg)
    return BranchRecord(float(lam_target), f, desc, f.iterations, f.residual_norm,
                        time.perf_counter() - t0)


# --------------------------------------------------------------------------
# continuation


def continue_branch(cfg, schedule, n=512, strength=None, tol=None, delta=None, max_bisect=4,
                    max_iter=30, log=None):
    """Amplitude continuation through the increasing heights in `schedule`."""
    schedule = [float(s) for s in schedule]
    if not schedule:
        return []
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ConfigError("the height schedule must be strictly increasing")
    if cfg.kind == geo.DISK:
        return [disk_radial_solve(lam, cfg) for lam in schedule]
    det, nondeg = qt.nondegeneracy(qt.f_m_eval(cfg)[2])
    if not nondeg and log:
        log(f"warning: configuration is degenerate (det = {det:.3e})")
    s = auto_map_strength(cfg, schedule[-1], n) if strength is None else strength
    grid = grids.torus_grid_for(cfg.q, n, s)
    _refuse_unresolved(cfg, grid, schedule[-1])
    records = []
    prev = None
    prev_lam = None
    for lam in schedule:
        target = lam
        step_fail = 0
        while True:
            t0 = time.perf_counter()
            try:
                if prev is None:
                    guess = bubble_ansatz(cfg, target, grid=grid)
                else:
                    a_new = bubble_ansatz(cfg, target, grid=grid, rho=prev.rho)
                    a_old = bubble_ansatz(cfg, prev_lam, grid=grid, rho=prev.rho)
                    guess = prev.copy(u=prev.u + a_new.u - a_old.u)
                f = solve_pinned(guess, target, tol=tol, max_iter=max_iter)
            except (ConvergenceError, NumericalError) as exc:
                step_fail += 1
                if step_fail > max_bisect or prev is None:
                    raise ContinuationError(f"continuation failed at lambda = {target:.6g}: {exc}",
                                            records) from exc
                target = 0.5 * (prev_lam + target)
                continue
            desc = extract_blowup(f, cfg, delta)
            rec = BranchRecord(target, f, desc, f.iterations, f.residual_norm,
                               time.perf_counter() - t0)
            if log:
                log(f"lambda* = {target:.4f}  rho = {f.rho:.12f}  iters = {f.iterations}  "
                    f"res = {f.residual_norm:.2e}  resolved = {desc.resolved}  "
                    f"({rec.seconds:.1f}s)")
            if not desc.resolved:
                raise ResolutionError(f"bubble core under-resolved at lambda = {target:.4g}")
            prev, prev_lam = f, target
            if target == lam:
                records.append(rec)
                break
            target = lam
            step_fail = 0
    return records


def _refuse_unresolved(cfg, grid, lam_max):
    lams, hq, _ = bubble_heights(cfg, lam_max)
    a = core_radius(8 * np.pi * cfg.m, hq, lams)
    sp = np.array([float(grid.spacing(qj)) for qj in cfg.q])
    if np.any(a < RESOLUTION_CELLS * sp):
        j = int(np.argmin(a / sp))
        raise ResolutionError(
            f"bubble {j + 1} core radius {a[j]:.3e} spans {a[j] / sp[j]:.1f} cells at lambda = {lam_max:g}; "
            f"{RESOLUTION_CELLS} are required. Refine the grid or lower the schedule.")


# --------------------------------------------------------------------------
# blow-up descriptors


def _quad_fit_max(vals, disp):
    """Stationary point of the least-squares quadratic through 3x3 samples."""
    x, y = disp[..., 0].ravel(), disp[..., 1].ravel()
    A = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], -1)
    c = np.linalg.lstsq(A, vals.ravel(), rcond=None)[0]
    H = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
    gr = np.array([c[1], c[2]])
    try:
        p = -np.linalg.solve(H, gr)
    except np.linalg.LinAlgError:
        p = np.zeros(2)
    span = np.max(np.abs(disp), axis=(0, 1))
    if np.any(np.abs(p) > span):
        p = np.zeros(2)
    val = c[0] + gr @ p + 0.5 * p @ H @ p
    return val, p


def _shape_fit(eta, prof, w):
    """Weighted fit eta ~ a prof + b; returns a and the weighted correlation."""
    sw = np.sqrt(w)
    A = np.stack([prof, np.ones_like(prof)], -1) * sw[:, None]
    a = np.linalg.lstsq(A, eta * sw, rcond=None)[0][0]
    pe = eta - np.sum(w * eta) / np.sum(w)
    pp = prof - np.sum(w * prof) / np.sum(w)
    den = np.sqrt(np.sum(w * pe * pe) * np.sum(w * pp * pp))
    return float(a), float(np.sum(w * pe * pp) / den) if den > 0 else 0.0


def _wrap(x):
    x = x - np.floor(x)
    return np.where(x >= 1.0, 0.0, x)


def _ball_mass(f, center, delta):
    """int_{B_delta(center)} h e^{u~}, split with a smooth cutoff for spectral accuracy."""
    g = f.grid
    d = grids.min_image_disp(g.points, center)
    r = np.sqrt(np.sum(d * d, -1))
    e = f.h * np.exp(f.u)
    chi = quad.cutoff(r, 0.5 * delta, delta)
    inner = g.integrate(e * chi)
    pts, w, rr = quad.polar_nodes(center, 0.5 * delta, delta, n_r=32, n_theta=256)
    pts = pts - np.floor(pts)
    uu = g.interpolate(f.u, pts)
    hh = wt.h_eval(f.cfg.weight, f.cfg.table, pts)
    ring = np.sum(w * hh * np.exp(uu) * (1.0 - quad.cutoff(rr, 0.5 * delta, delta)))
    return inner + float(ring)


def extract_blowup(f: SolutionField, cfg=None, delta=None):
    cfg = cfg or f.cfg
    delta = qt.default_delta(cfg) if delta is None else float(delta)
    if f.kind == geo.DISK:
        return _extract_disk(f, cfg, delta)
    g = f.grid
    m = cfg.m
    rho = f.rho
    pts = g.points
    lam = np.zeros(m)
    xs = np.zeros((m, 2))
    for j, qj in enumerate(cfg.q):
        d = grids.min_image_disp(pts, qj)
        r = np.sqrt(np.sum(d * d, -1))
        masked = np.where(r < delta, f.u, -np.inf)
        i0, j0 = np.unravel_index(np.argmax(masked), masked.shape)
        ii = (i0 + np.arange(-1, 2)) % g.n
        jj = (j0 + np.arange(-1, 2)) % g.n
        block = f.u[np.ix_(ii, jj)]
        disp = grids.min_image_disp(pts[np.ix_(ii, jj)], pts[i0, j0])
        lam[j], p = _quad_fit_max(block, disp)
        xs[j] = pts[i0, j0] + p
    xs = _wrap(xs)
    hx = np.array([float(wt.h_eval(cfg.weight, cfg.table, x)) for x in xs])
    glog = np.array([wt.log_h_jet(cfg.weight, cfg.table, x)[1] for x in xs])
    x_star = xs + (2.0 / (rho * hx * np.exp(lam)))[:, None] * glog
    x_star = _wrap(x_star)
    mean_u = g.integrate(f.u)
    mass_total = f.mass()
    rho_j = np.array([rho * _ball_mass(f, qj, delta) for qj in cfg.q])
    eta_sup = np.zeros(m)
    shape = np.zeros(m)
    corr = np.zeros(m)
    match = np.zeros(m)
    lam_id = np.zeros(m)
    heights = np.zeros(m)
    for j, qj in enumerate(cfg.q):
        mu = rho * hx[j] * np.exp(lam[j]) / 8
        dx = grids.min_image_disp(xs[j], x_star[j])
        match[j] = np.linalg.norm(-4 * mu * dx / (1 + mu * dx @ dx) - glog[j])
        gsx = float(qt.g_star(cfg, j, xs[j]))
        lam_id[j] = lam[j] + mean_u + 2 * np.log(rho * hx[j] / 8) + gsx
        heights[j] = lam[j] + 2 * np.log(hx[j]) + gsx
        d = grids.min_image_disp(pts, xs[j])
        r2 = np.sum(d * d, -1)
        inside = r2 < delta**2
        p_in = pts[inside]
        ds = grids.min_image_disp(p_in, x_star[j])
        U = lam[j] - 2 * np.log1p(mu * np.sum(ds * ds, -1))
        gs = grids.chunked(lambda p: qt.g_star(cfg, j, p), p_in)
        eta = f.u[inside] - U - (gs - gsx)
        eta_sup[j] = np.max(np.abs(eta))
        prof = np.log(np.sqrt(mu) * np.sqrt(r2[inside]) + 2) ** 2
        shape[j], corr[j] = _shape_fit(eta, prof, g.weights[inside])
    outer = np.ones(pts.shape[:-1], dtype=bool)
    for x in xs:
        d = grids.min_image_disp(pts, x)
        outer &= np.sum(d * d, -1) >= delta**2
    p_out = pts[outer]
    wv = f.u[outer] - mean_u
    wgrad = g.gradient(f.u)[outer]
    for j, x in enumerate(xs):
        wv = wv - rho_j[j] * grids.chunked(lambda p: geo.green(cfg.table, p, x), p_out)
        wgrad = wgrad - rho_j[j] * grids.chunked(
            lambda p: geo.green_derivatives(cfg.table, p, x, 1, "x"), p_out)
    w_sup = float(np.max(np.abs(wv)))
    w_c1 = w_sup + float(np.max(np.linalg.norm(wgrad, axis=-1)))
    a = core_radius(rho, hx, lam)
    sp = np.array([float(g.spacing(x)) for x in xs])
    return BlowupDescriptors(
        lam=lam, x=xs, x_star=x_star, rho_j=rho_j, eta_sup=eta_sup, eta_shape_coef=shape,
        eta_shape_corr=corr,
        w_sup=w_sup, w_c1=w_c1, lam_global=float(np.max(f.u)), delta=delta, mean_u=mean_u,
        outer_mass=float(rho - rho_j.sum()), mass_total=mass_total, core_radius=a, spacing=sp,
        matching_residual=match, lam_identity=lam_id,
        height_spread=float(np.max(heights) - np.min(heights)))


def _extract_disk(f, cfg, delta):
    g = f.grid
    rho = f.rho
    lam = np.array([float(f.u[0])])
    xs = np.zeros((1, 2))
    hx = float(f.h[0])
    e = f.h * np.exp(f.u)
    if delta >= 1.0:
        mass = g.integrate(e)
    else:
        sp = CubicSpline(g.s, 2 * np.pi * e * g.r * g.dr_ds)
        s_d = np.arcsinh(delta * np.sinh(g.beta)) / g.beta if g.beta else delta
        mass = float(sp.integrate(0.0, s_d))
    rho_j = np.array([rho * mass])
    mu = rho * hx * np.exp(lam[0]) / 8
    inside = g.r < delta
    U = lam[0] - 2 * np.log1p(mu * g.r**2)
    # G*_1(x) = 8 pi R(x, 0) vanishes identically on the unit disk
    eta = (f.u - U)[inside]
    c = f.dirichlet_shift()
    outer = g.r >= delta
    r_out = g.r[outer]
    with np.errstate(divide="ignore"):
        G = -np.log(r_out) / (2 * np.pi)
    wv = f.u[outer] + c - rho_j[0] * G
    dw = np.gradient(wv, r_out) if len(r_out) > 2 else np.zeros(1)
    w_sup = float(np.max(np.abs(wv))) if len(wv) else 0.0
    lam_id = lam + c - 2 * np.log(mu)
    a = core_radius(rho, hx, lam)
    spacing = np.array([float(np.interp(a[0], g.r, np.gradient(g.r)))])
    prof = np.log(np.sqrt(mu) * g.r[inside] + 2) ** 2
    coef, cc = _shape_fit(eta, prof, g.weights[inside])
    return BlowupDescriptors(
        lam=lam, x=xs, x_star=xs.copy(), rho_j=rho_j, eta_sup=np.array([np.max(np.abs(eta))]),
        eta_shape_coef=np.array([coef]), eta_shape_corr=np.array([cc]), w_sup=w_sup,
        w_c1=w_sup + (float(np.max(np.abs(dw))) if len(wv) else 0.0),
        lam_global=float(np.max(f.u)), delta=delta, mean_u=-c, outer_mass=float(rho - rho_j[0]),
        mass_total=g.integrate(e), core_radius=a, spacing=spacing,
        matching_residual=np.zeros(1), lam_identity=lam_id, height_spread=0.0)
