"""Expansions of rho - 8 pi m along a bubbling branch and fits against solver data.

With A = h(q_1)^2 e^{G*_1(q_1)} and lambda = lambda_1:

  leading   rho - 8 pi m ~ (2 / m) lambda e^{-lambda} ell / A
  refined   rho - 8 pi m ~ (2 ell e^{-lambda} / (m A)) (lambda + log(8 pi m A delta^2) - 2)
                           + (8 e^{-lambda} / (pi m A)) D
  local     rho_j - 8 pi ~ (16 pi / (rho h(q_j))) [Lap log h(q_j) + rho] lambda_j e^{-lambda_j}

On the disk the bracket of the local mass loses the rho term.  When ell != 0 the
limit D is replaced by its regularised value at r = delta, which makes the
refined prediction independent of delta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import quantities as qt
from . import weight as wt
from .errors import ConditioningError, NumericalError

BASES = {
    "two": ("lam*exp(-lam)", "exp(-lam)"),
    "three": ("lam*exp(-lam)", "exp(-lam)", "lam^2*exp(-1.5*lam)"),
}


def _basis(name, lam):
    lam = np.asarray(lam, float)
    cols = [lam * np.exp(-lam), np.exp(-lam)]
    if name == "three":
        cols.append(lam**2 * np.exp(-1.5 * lam))
    elif name != "two":
        raise ValueError(f"unknown basis {name!r}")
    return np.stack(cols, -1)


@dataclass(frozen=True)
class Constants:
    """Configuration constants entering every prediction."""
    m: int
    ell: float
    A: float
    h: np.ndarray
    lap_log_h: np.ndarray
    kind: str


def constants(cfg: qt.BlowupConfiguration) -> Constants:
    hq = np.array([float(wt.h_eval(cfg.weight, cfg.table, qj)) for qj in cfg.q])
    A = hq[0] * qt.bubble_weight(cfg, 0)
    lap = np.array([float(qt.lap_log_h(cfg, qj)) for qj in cfg.q])
    return Constants(cfg.m, float(qt.ell(cfg)), float(A), hq, lap, cfg.kind)


def leading_coefficient(c: Constants) -> float:
    """c1 = 2 ell / (m A)."""
    return 2 * c.ell / (c.m * c.A)


def second_coefficient(c: Constants, D, delta) -> float:
    """c2 = (2 ell / (m A)) (log(8 pi m A delta^2) - 2) + 8 D / (pi m A)."""
    c1 = leading_coefficient(c)
    return c1 * (np.log(8 * np.pi * c.m * c.A * delta**2) - 2) + 8 * D / (np.pi * c.m * c.A)


def predict_rho_leading(cfg, lam1, const: Constants | None = None):
    c = const or constants(cfg)
    lam1 = np.asarray(lam1, float)
    return 8 * np.pi * c.m + leading_coefficient(c) * lam1 * np.exp(-lam1)


def d_value(dres: qt.DResult, delta, strict=False):
    """D for the refined prediction and whether it is the regularised stand-in."""
    if dres.defined:
        return dres.value, False
    if strict:
        raise NumericalError("D(q) is log-divergent here (ell != 0); refusing the strict D-term")
    return qt.d_regularized(dres, delta), True


def predict_rho_refined(cfg, lam1, delta, dres: qt.DResult, const: Constants | None = None,
                        strict=False):
    c = const or constants(cfg)
    lam1 = np.asarray(lam1, float)
    D, _ = d_value(dres, delta, strict)
    c1 = leading_coefficient(c)
    return (8 * np.pi * c.m + c1 * np.exp(-lam1) * (lam1 + np.log(8 * np.pi * c.m * c.A * delta**2) - 2)
            + 8 * np.exp(-lam1) * D / (np.pi * c.m * c.A))


def predict_local_mass(cfg, lam_j, j=0, const: Constants | None = None):
    c = const or constants(cfg)
    lam_j = np.asarray(lam_j, float)
    rho = 8 * np.pi * c.m
    bracket = c.lap_log_h[j] + (rho if c.kind == geo.TORUS else 0.0)
    return 8 * np.pi + 16 * np.pi / (rho * c.h[j]) * bracket * lam_j * np.exp(-lam_j)


# --------------------------------------------------------------------------
# fits


@dataclass
class FitResult:
    basis: str
    coef: np.ndarray
    cov: np.ndarray
    stderr: np.ndarray
    residuals: np.ndarray
    cond: float


def fit_coefficients(lam, excess, basis="two", max_cond=1e6, min_points=4):
    """Weighted least squares of excess = rho - 8 pi m on the basis (weights e^{lam})."""
    lam = np.asarray(lam, float)
    y = np.asarray(excess, float)
    A = _basis(basis, lam)
    k = A.shape[1]
    if len(lam) < max(min_points, k):
        raise ConditioningError(f"need at least {max(min_points, k)} records for the {basis}-term fit")
    w = np.exp(lam)
    Aw = A * w[:, None]
    yw = y * w
    scale = np.linalg.norm(Aw, axis=0)
    cond = float(np.linalg.cond(Aw / scale))
    if not np.isfinite(cond) or cond > max_cond:
        raise ConditioningError(
            f"design matrix condition {cond:.3g} exceeds {max_cond:.0e}; the height range "
            f"[{lam.min():.3g}, {lam.max():.3g}] is too narrow, widen the schedule (e.g. by 2 units)")
    coef, *_ = np.linalg.lstsq(Aw, yw, rcond=None)
    res = yw - Aw @ coef
    dof = len(lam) - k
    s2 = float(res @ res / dof) if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(Aw.T @ Aw)
    return FitResult(basis, coef, cov, np.sqrt(np.diag(cov)), y - A @ coef, cond)


@dataclass
class ExpansionReport:
    m: int
    ell: float
    A: float
    D: float
    D_regularized: bool
    delta: float
    deltas: list
    lam_target: np.ndarray
    lam1: np.ndarray
    measured: np.ndarray
    leading: np.ndarray
    refined: np.ndarray
    refined_spread: np.ndarray
    local_measured: np.ndarray
    local_predicted: np.ndarray
    fit: FitResult | None
    c1_pred: float
    c2_pred: float
    ratios: dict
    rel_err: dict
    notes: list = field(default_factory=list)

    def table(self):
        """Plot-data rows (lambda, measured, leading, refined)."""
        return np.stack([self.lam1, self.measured + 8 * np.pi * self.m,
                         self.leading, self.refined], -1)


def verify_expansion(cfg, lam_target, lam1, rho, rho1=None, dres=None, delta=None,
                     basis="two", use_measured=False, x1=None, extra_deltas=(0.5,)):
    """Compare measured rho along a branch with the predictions and fit c1, c2."""
    c = constants(cfg)
    if use_measured and x1 is not None:
        c = _measured_constants(cfg, c, x1)
    lam1 = np.asarray(lam1, float)
    rho = np.asarray(rho, float)
    delta = qt.default_delta(cfg) if delta is None else float(delta)
    notes = []
    if dres is None:
        dres = qt.d_of_q(cfg)
    D, reg = d_value(dres, delta)
    if reg:
        notes.append("D(q) undefined (ell != 0): regularised value at r = delta used; flagged approximate")
    leading = predict_rho_leading(cfg, lam1, c)
    refined = predict_rho_refined(cfg, lam1, delta, dres, c)
    deltas = [delta] + [delta * f for f in extra_deltas]
    spread = np.max([np.abs(predict_rho_refined(cfg, lam1, d, dres, c) - refined) for d in deltas], axis=0)
    local_pred = predict_local_mass(cfg, lam1, 0, c)
    excess = rho - 8 * np.pi * c.m
    c1p = leading_coefficient(c)
    c2p = second_coefficient(c, D, delta)
    ratios, rel = {}, {}
    fit = None
    try:
        fit = fit_coefficients(lam1, excess, basis)
        for name, pred, val, err in (("c1", c1p, fit.coef[0], fit.stderr[0]),
                                     ("c2", c2p, fit.coef[1], fit.stderr[1])):
            if abs(pred) > 1e-12:
                ratios[name] = (float(val / pred), float(err / abs(pred)))
                rel[name] = float(abs(val - pred) / abs(pred))
            else:
                ratios[name] = (float("nan"), float("nan"))
                rel[name] = float(abs(val - pred))
                notes.append(f"predicted {name} vanishes; absolute error reported")
    except ConditioningError as exc:
        notes.append(str(exc))
    if fit is not None and fit.stderr[0] > 0.5 * abs(fit.coef[0]):
        notes.append("c1 indistinguishable from zero at this scale")
    return ExpansionReport(
        m=c.m, ell=c.ell, A=c.A, D=float(D), D_regularized=reg, delta=delta, deltas=deltas,
        lam_target=np.asarray(lam_target, float), lam1=lam1, measured=excess, leading=leading,
        refined=refined, refined_spread=spread,
        local_measured=np.asarray(rho1, float) if rho1 is not None else np.full(len(lam1), np.nan),
        local_predicted=local_pred, fit=fit, c1_pred=c1p, c2_pred=c2p, ratios=ratios,
        rel_err=rel, notes=notes)


def _measured_constants(cfg, c, x1):
    """Constants with h and G* evaluated at the measured maximum point of bubble 1."""
    x1 = np.asarray(x1, float)
    h1 = float(wt.h_eval(cfg.weight, cfg.table, x1))
    A = h1 * h1 * float(np.exp(qt.g_star(cfg, 0, x1)))
    return Constants(c.m, c.ell, A, c.h, c.lap_log_h, c.kind)


def eta_profile_check(record, cfg=None):
    """sup |eta_j| / (lambda_j^2 e^{-lambda_j}) and the log^2 shape coefficient vs. its prediction."""
    b = record.blowup
    cfg = cfg or record.field.cfg
    c = constants(cfg)
    rho = record.field.rho
    lam = b.lam
    out = []
    for j in range(len(lam)):
        hx = float(wt.h_eval(cfg.weight, cfg.table, b.x[j]))
        bracket = float(qt.lap_log_h(cfg, b.x[j])) + (8 * np.pi * c.m if c.kind == geo.TORUS else 0.0)
        pred = -(8.0 / (rho * hx)) * bracket * np.exp(-lam[j])
        out.append({
            "j": j + 1,
            "lambda": float(lam[j]),
            "sup_ratio": float(b.eta_sup[j] / (lam[j] ** 2 * np.exp(-lam[j]))),
            "shape_coef": float(b.eta_shape_coef[j]),
            "shape_coef_pred": float(pred),
            "shape_corr": float(b.eta_shape_corr[j]),
        })
    return out


def stability(values, factor=2.0):
    """A constant is called stable when max |C| <= factor * median |C|."""
    v = np.abs(np.asarray(values, float))
    return bool(np.max(v) <= factor * np.median(v)), float(np.max(v)), float(np.median(v))
