"""Experiment runner: TOML configuration in, CSV/JSON (and optional figures) out.

    bubblekit run --config torus_cos --out results/
    bubblekit branch --config my.toml --out results/ --threads 2
    bubblekit disk-exact --out results/

Stages run in the order green-table, critical-points, quantities, disk-exact,
branch, verify-expansion, diagnostics.  Exit codes: 0 success, 2 configuration
or hypothesis violation, 3 numerical failure (partial artifacts plus
failure.json), 4 resolution refusal.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import asymptotics as asy
from . import diagnostics as dg
from . import geometry as geo
from . import grids
from . import quantities as qt
from . import solver as sv
from . import weight as wt
from .errors import BubblekitError, ConfigError, ContinuationError, HypothesisError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("bubblekit")

STAGES = ("green-table", "critical-points", "quantities", "disk-exact", "branch",
          "verify-expansion", "diagnostics")

_SCHEMA = {
    "name": str, "stages": list, "seed": int,
    "domain": {"kind": str, "green": str},
    "weight": {"family": str, "value": float, "c0": float, "trig": list, "poly": list,
               "vortices": list, "sigma": float},
    "configuration": {"q": list, "critical": str, "r0": float, "partition": str},
    "branch": {"lambda": (dict, list), "n": int, "strength": (float, str), "tol": float,
               "n_r": int, "max_bisect": int},
    "quantities": {"delta": float, "radii": list, "n_grid": int},
    "expansion": {"basis": str, "deltas": list},
    "diagnostics": {"pohozaev": bool, "pohozaev_lambda": float, "pohozaev_amp": float,
                    "spectrum_lambdas": list, "spectrum_k": int, "spectrum_n": int, "probe_starts": int,
                    "probe_scale": float, "probe_shift": float, "probe_lambda": float,
                    "probe_rho": float, "kernel_zmax": float, "kernel_n": int},
    "report": {"figures": bool, "save_fields": str},
}


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    name: str
    raw: dict
    domain: str
    green: str
    weight: wt.WeightSpec
    q: list
    critical: str
    r0: float
    partition: str
    schedule: list
    n: int
    strength: float | None
    tol: float | None
    n_r: int
    max_bisect: int
    delta: float | None
    radii: list | None
    n_grid: int
    basis: str
    deltas: list
    diag: dict
    figures: bool
    save_fields: str
    stages: list
    seed: int
    hash: str = field(default="")


def _check_schema(d, schema, path=""):
    for k, v in d.items():
        where = f"{path}{k}"
        if k not in schema:
            raise ConfigError(f"unknown configuration key {where!r}")
        want = schema[k]
        if isinstance(want, dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where!r} must be a table")
            _check_schema(v, want, where + ".")
            continue
        types = want if isinstance(want, tuple) else (want,)
        ok = any(isinstance(v, t) and not (t in (int, float) and isinstance(v, bool)) for t in types)
        if float in types and isinstance(v, int) and not isinstance(v, bool):
            ok = True
        if not ok:
            raise ConfigError(f"{where!r} has the wrong type ({type(v).__name__})")


def _schedule(spec):
    if isinstance(spec, list):
        lam = [float(v) for v in spec]
    else:
        try:
            a, b, s = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        except KeyError as exc:
            raise ConfigError(f"branch.lambda needs start, stop and step (missing {exc})") from None
        if s <= 0 or b < a:
            raise ConfigError("branch.lambda needs step > 0 and stop >= start")
        k = int(np.floor((b - a) / s + 1e-9))
        lam = [round(a + i * s, 12) for i in range(k + 1)]
    if not lam or any(v <= 0 for v in lam):
        raise ConfigError("heights must be positive")
    if any(y <= x for x, y in zip(lam, lam[1:])):
        raise ConfigError("the height schedule must be strictly increasing")
    return lam


def _weight(d, kind):
    try:
        return wt.WeightSpec(
            family=d.get("family", "constant"),
            value=float(d.get("value", 1.0)),
            c0=float(d.get("c0", 0.0)),
            trig=tuple(wt.TrigTerm(float(t["amp"]), tuple(float(v) for v in t["k"]),
                                   float(t.get("phase", 0.0))) for t in d.get("trig", [])),
            poly=tuple(wt.PolyTerm(float(t["coef"]), tuple(int(v) for v in t["powers"]))
                       for t in d.get("poly", [])),
            vortices=tuple(wt.Vortex(tuple(float(v) for v in t["p"]), float(t["alpha"]))
                           for t in d.get("vortices", [])),
            sigma=float(d.get("sigma", 1.0)),
            domain_kind=kind)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed weight entry: {exc}") from None


def _in_range(name, v, lo, hi, lo_open=False):
    if v is None:
        return
    if not (lo < v if lo_open else lo <= v) or not v <= hi:
        raise ConfigError(f"{name} = {v} outside the documented range")


def config_hash(raw: dict, seed: int) -> str:
    blob = json.dumps({"config": raw, "seed": seed}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def parse_config(raw: dict, seed=None) -> ExperimentConfig:
    _check_schema(raw, _SCHEMA)
    dom = raw.get("domain", {})
    kind = dom.get("kind", geo.TORUS)
    if kind not in (geo.TORUS, geo.DISK):
        raise ConfigError(f"domain.kind must be 'torus' or 'disk', not {kind!r}")
    green = dom.get("green", "")
    if green and green not in (("ewald", "fourier") if kind == geo.TORUS else ("closed_form",)):
        raise ConfigError(f"domain.green {green!r} not available on the {kind}")
    weight = _weight(raw.get("weight", {}), kind)
    c = raw.get("configuration", {})
    q = c.get("q", [[0.0, 0.0]])
    if not q or any(len(p) != 2 for p in q):
        raise ConfigError("configuration.q must be a non-empty list of points [x1, x2]")
    critical = c.get("critical", "newton")
    if critical not in ("newton", "grid_max", "none"):
        raise ConfigError("configuration.critical must be newton, grid_max or none")
    r0 = float(c.get("r0", 0.1 if kind == geo.TORUS else 0.2))
    _in_range("configuration.r0", r0, 0.0, 0.25, lo_open=True)
    b = raw.get("branch", {})
    sched = _schedule(b.get("lambda", {"start": 6.0, "stop": 9.0, "step": 0.25}))
    n = int(b.get("n", 512))
    if n % 2 or n < 16:
        raise ConfigError("branch.n must be even and at least 16")
    strength = b.get("strength", "auto")
    if isinstance(strength, str):
        if strength != "auto":
            raise ConfigError("branch.strength must be a number in [0, 1) or 'auto'")
        strength = None
    else:
        strength = float(strength)
        _in_range("branch.strength", strength, 0.0, 0.95)
    tol = b.get("tol")
    _in_range("branch.tol", tol, 0.0, 1e-3, lo_open=True)
    n_r = int(b.get("n_r", 400))
    if n_r % 4 or n_r < 52:
        raise ConfigError("branch.n_r must be a multiple of 4 and at least 52")
    qd = raw.get("quantities", {})
    delta = qd.get("delta")
    _in_range("quantities.delta", delta, 0.0, 0.25, lo_open=True)
    radii = qd.get("radii")
    ex = raw.get("expansion", {})
    basis = ex.get("basis", "two")
    if basis not in asy.BASES:
        raise ConfigError(f"expansion.basis must be one of {sorted(asy.BASES)}")
    dd = raw.get("diagnostics", {})
    if dd.get("probe_starts", 0) < 0 or dd.get("spectrum_k", 10) < 1 or dd.get("kernel_n", 2000) < 100:
        raise ConfigError("diagnostics: probe_starts >= 0, spectrum_k >= 1, kernel_n >= 100")
    rep = raw.get("report", {})
    save_fields = rep.get("save_fields", "last")
    if save_fields not in ("none", "last", "all"):
        raise ConfigError("report.save_fields must be none, last or all")
    stages = raw.get("stages", list(STAGES))
    for s in stages:
        if s not in STAGES:
            raise ConfigError(f"unknown stage {s!r}")
    seed = int(raw.get("seed", 0)) if seed is None else int(seed)
    cfg = ExperimentConfig(
        name=raw.get("name", "experiment"), raw=raw, domain=kind, green=green, weight=weight,
        q=[[float(v) for v in p] for p in q], critical=critical, r0=r0,
        partition=c.get("partition", "voronoi"), schedule=sched, n=n, strength=strength,
        tol=None if tol is None else float(tol), n_r=n_r, max_bisect=int(b.get("max_bisect", 4)),
        delta=None if delta is None else float(delta),
        radii=None if radii is None else [float(v) for v in radii],
        n_grid=int(qd.get("n_grid", 512)), basis=basis,
        deltas=[float(v) for v in ex.get("deltas", [0.5])], diag=dict(dd),
        figures=bool(rep.get("figures", False)), save_fields=save_fields, stages=list(stages),
        seed=seed)
    cfg.hash = config_hash(raw, seed)
    return cfg


def bundled_configs():
    return sorted(p.name[:-5] for p in resources.files("bubblekit.configs").iterdir()
                  if p.name.endswith(".toml"))


def load_config(path, seed=None) -> ExperimentConfig:
    """Read a TOML file; a bare name such as 'disk_exact' selects a bundled config."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        res = resources.files("bubblekit.configs") / f"{path}.toml"
        if res.is_file():
            return parse_config(tomllib.loads(res.read_text()), seed)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None
    return parse_config(raw, seed)


# --------------------------------------------------------------------------
# output helpers


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.16g" % float(v)
    return str(v)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        v = float(o)
        return v if np.isfinite(v) else None
    if isinstance(o, complex):
        return [o.real, o.imag]
    return o


class Experiment:
    """Stage runner bound to one configuration and output directory."""

    def __init__(self, cfg: ExperimentConfig, out):
        self.cfg = cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.table = geo.make_table(cfg.domain, cfg.green)
        self._bcfg = None
        self.crit = None
        self.dres = None
        self.records = None
        self.report = None
        self.diag = None
        self.stage_log = []

    # -- writing

    def _header(self):
        return f"# bubblekit {__version__} config {self.cfg.hash}"

    def write_csv(self, name, columns, rows):
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(self._header() + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.files.append(name)
        return path

    def write_json(self, name, obj):
        body = {"tool": "bubblekit", "version": __version__, "config_hash": self.cfg.hash}
        body.update(_jsonable(obj))
        path = self.out / name
        path.write_text(json.dumps(body, indent=2, sort_keys=False) + "\n")
        self.files.append(name)
        return path

    def write_field(self, rec: sv.BranchRecord):
        f = rec.field
        d = self.out / "fields"
        d.mkdir(exist_ok=True)
        stem = f"u_lambda_{rec.lambda_target:.4f}"
        np.ascontiguousarray(f.u, dtype="<f8").tofile(d / f"{stem}.f64")
        self.write_json(f"fields/{stem}.json", {
            "file": f"{stem}.f64", "dtype": "float64-le", "shape": list(f.u.shape),
            "kind": f.kind, "grid": f.grid.describe(), "rho": f.rho, "lambda_target": rec.lambda_target,
            "residual_norm": f.residual_norm, "newton_iters": f.iterations})
        self.files.append(f"fields/{stem}.f64")

    # -- shared state

    @property
    def bcfg(self) -> qt.BlowupConfiguration:
        if self._bcfg is None:
            c = self.cfg
            base = qt.BlowupConfiguration(self.table, c.weight, c.q, c.r0, c.partition)
            if c.critical != "none":
                self.crit = self._critical(base)
                base = base.with_q(self.crit.q)
            self._bcfg = base
        return self._bcfg

    def _critical(self, base):
        c = self.cfg
        if c.critical == "grid_max" and base.m == 1:
            base = base.with_q([_grid_max_seed(base)], validate=False)
        if base.kind == geo.DISK and base.m == 1 and np.allclose(base.q, 0.0):
            # radial weights: the origin is critical by symmetry
            val, grad, hess = qt.f_m_eval(base)
            det, nd = qt.nondegeneracy(hess)
            return qt.CriticalResult(base.q, hess, det, nd, float(np.linalg.norm(grad)), 0, val)
        return qt.find_critical_configuration(base)

    def branch_records(self):
        if self.records is None:
            self.stage_branch()
        return self.records

    # -- stages

    def stage_green_table(self):
        rng = np.random.default_rng(self.cfg.seed)
        t = self.table
        rows = []
        if self.cfg.domain == geo.TORUS:
            tf = geo.torus_table("fourier")
            x = rng.random((100, 2))
            y = rng.random((100, 2))
            ge = geo.green(t, x, y)
            gf = geo.green(tf, x, y)
            sym = geo.green(t, y, x)
            for i in range(len(x)):
                rows.append([*x[i], *y[i], ge[i], gf[i], abs(ge[i] - gf[i]), abs(ge[i] - sym[i])])
            ints = [geo.torus_green_integral(t, yy) for yy in y[:5]]
            summary = {"max_ewald_fourier": float(np.max(np.abs(ge - gf))),
                       "max_asymmetry": float(np.max(np.abs(ge - sym))),
                       "robin_constant": t.robin_constant,
                       "max_abs_integral": float(np.max(np.abs(ints)))}
            cols = ["x1", "x2", "y1", "y2", "G_ewald", "G_fourier", "abs_diff", "abs_asym"]
        else:
            r = np.sqrt(rng.random(100)) * 0.95
            th = rng.random(100) * 2 * np.pi
            y = np.stack([r * np.cos(th), r * np.sin(th)], -1)
            phi = rng.random(100) * 2 * np.pi
            xb = np.stack([np.cos(phi), np.sin(phi)], -1)
            gb = geo.green(t, xb, y)
            x = rng.random((100, 2)) * 1.2 - 0.6
            x = x[np.sum(x * x, -1) < 0.95**2][:50]
            ok = np.sum((x - y[:len(x)]) ** 2, -1) > 0
            ga = geo.green(t, x[ok], y[:len(x)][ok])
            gs = geo.green(t, y[:len(x)][ok], x[ok])
            for i in range(len(y)):
                rows.append([*xb[i], *y[i], gb[i], abs(gb[i])])
            summary = {"max_boundary_value": float(np.max(np.abs(gb))),
                       "max_asymmetry": float(np.max(np.abs(ga - gs)))}
            cols = ["x1", "x2", "y1", "y2", "G_boundary", "abs_G"]
        self.write_csv("green_table.csv", cols, rows)
        self.write_json("green.json", summary)

    def stage_critical_points(self):
        b = self.bcfg
        val, grad, hess = qt.f_m_eval(b)
        det, nd = qt.nondegeneracy(hess)
        if not nd:
            log.warning("configuration is degenerate (det Hess f_m = %.3e)", det)
        self.write_json("critical_points.json", {
            "mode": self.cfg.critical, "q": b.q, "f_m": val, "grad_norm": float(np.linalg.norm(grad)),
            "hessian": hess, "det": det, "nondegenerate": nd,
            "iterations": self.crit.iterations if self.crit else 0})

    def stage_quantities(self):
        b = self.bcfg
        c = asy.constants(b)
        self.dres = qt.d_of_q(b, radii=self.cfg.radii, n_grid=self.cfg.n_grid)
        delta = self.cfg.delta or qt.default_delta(b)
        D, reg = asy.d_value(self.dres, delta)
        out = {
            "m": b.m, "q": b.q, "kind": b.kind, "ell": c.ell, "A": c.A, "h_q": c.h,
            "lap_log_h_q": c.lap_log_h,
            "G_star_q": [float(qt.g_star(b, j, b.q[j])) for j in range(b.m)],
            "delta": delta, "D": self.dres.value, "D_defined": self.dres.defined,
            "D_used": D, "D_regularized": reg, "D_log_slope": self.dres.log_slope,
            "D_log_slope_predicted": self.dres.predicted_log_slope,
            "c1_predicted": asy.leading_coefficient(c),
            "c2_predicted": asy.second_coefficient(c, D, delta),
            "notes": self.dres.notes,
        }
        self.write_json("quantities.json", out)
        rows = [[r, v, *pc] for r, v, pc in zip(self.dres.radii, self.dres.table, self.dres.per_cell)]
        self.write_csv("d_table.csv", ["radius", "D_r"] + [f"cell_{j + 1}" for j in range(b.m)], rows)

    def stage_disk_exact(self):
        if self.cfg.domain != geo.DISK:
            log.info("disk-exact: not a disk configuration, skipped")
            return
        b = self.bcfg
        if not (b.weight.family == "constant" and not b.weight.vortices):
            raise ConfigError("disk-exact needs h = const on the disk")
        rows = []
        for lam in self.cfg.schedule:
            rec = sv.disk_radial_solve(lam, b, n_r=self.cfg.n_r)
            # h = c rescales rho by 1/c
            hc = float(wt.h_eval(b.weight, b.table, np.zeros(2)))
            u_ex, rho_ex = sv.disk_exact_solution(lam + np.log(hc), rec.field.grid.r)
            rho_ex = rho_ex / hc
            u_ex = u_ex - np.log(hc)
            rows.append([lam, rec.rho, rho_ex, abs(rec.rho - rho_ex),
                         float(np.max(np.abs(rec.field.u - u_ex))), 8 * np.pi - 8 * np.exp(-lam) / hc])
        self.write_csv("disk_exact.csv", ["lambda", "rho_solver", "rho_exact", "abs_err_rho",
                                          "sup_err_u", "rho_8pi_minus_8e"], rows)

    def stage_branch(self):
        c = self.cfg
        b = self.bcfg
        if b.kind == geo.DISK:
            recs = [sv.disk_radial_solve(lam, b, n_r=c.n_r) for lam in c.schedule]
        else:
            try:
                recs = sv.continue_branch(b, c.schedule, n=c.n, strength=c.strength, tol=c.tol,
                                          max_bisect=c.max_bisect, log=log.info)
            except ContinuationError as exc:
                if exc.records:
                    self._write_branch(exc.records, "branch_partial.csv")
                raise
        self.records = recs
        self._write_branch(recs, "branch.csv")
        if c.save_fields != "none" and recs:
            for rec in (recs if c.save_fields == "all" else recs[-1:]):
                self.write_field(rec)

    def _write_branch(self, recs, name):
        m = self.bcfg.m
        cols = ["lambda_target", "rho", "rho_minus_8pim"]
        for j in range(1, m + 1):
            cols += [f"lambda_{j}", f"rho_{j}", f"x_{j}_1", f"x_{j}_2", f"eta_sup_{j}",
                     f"lam_identity_{j}"]
        cols += ["w_sup", "w_c1", "mean_u", "mass_total", "newton_iters", "residual_norm", "resolved"]
        rows = []
        for r in recs:
            d = r.blowup
            row = [r.lambda_target, r.rho, r.rho - 8 * np.pi * m]
            for j in range(m):
                row += [d.lam[j], d.rho_j[j], d.x[j][0], d.x[j][1], d.eta_sup[j], d.lam_identity[j]]
            row += [d.w_sup, d.w_c1, d.mean_u, d.mass_total, r.newton_iters, r.residual_norm, d.resolved]
            rows.append(row)
        self.write_csv(name, cols, rows)

    def _branch_table(self):
        """(lambda_target, lambda_1, rho, rho_1, x_1) from memory or a matching branch.csv."""
        if self.records is None:
            path = self.out / "branch.csv"
            if path.exists():
                with open(path) as fh:
                    head = fh.readline().strip()
                    if head == self._header():
                        rows = list(csv.DictReader(fh))
                        if rows:
                            log.info("verify-expansion: using %s", path)
                            g = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
                            return (g("lambda_target"), g("lambda_1"), g("rho"), g("rho_1"),
                                    np.stack([g("x_1_1"), g("x_1_2")], -1))
        recs = self.branch_records()
        return (np.array([r.lambda_target for r in recs]), np.array([r.blowup.lam[0] for r in recs]),
                np.array([r.rho for r in recs]), np.array([r.blowup.rho_j[0] for r in recs]),
                np.array([r.blowup.x[0] for r in recs]))

    def stage_verify_expansion(self):
        b = self.bcfg
        lt, lam1, rho, rho1, x1 = self._branch_table()
        if self.dres is None:
            self.dres = qt.d_of_q(b, radii=self.cfg.radii, n_grid=self.cfg.n_grid)
        rep = asy.verify_expansion(b, lt, lam1, rho, rho1=rho1, dres=self.dres, delta=self.cfg.delta,
                                   basis=self.cfg.basis, extra_deltas=tuple(self.cfg.deltas))
        self.report = rep
        e = np.exp(-lam1)
        local_ratio = np.abs(rho1 - rep.local_predicted) / e
        rows = []
        for i in range(len(lam1)):
            rows.append([lt[i], lam1[i], rho[i], rep.measured[i], rep.leading[i], rep.refined[i],
                         rep.refined_spread[i], (rho[i] - rep.refined[i]) / e[i], rho1[i],
                         rep.local_predicted[i], local_ratio[i]])
        self.write_csv("expansion.csv", ["lambda_target", "lambda_1", "rho", "measured_excess",
                                         "leading", "refined", "refined_delta_spread",
                                         "remainder_scaled", "rho_1", "rho_1_predicted",
                                         "local_mass_ratio"], rows)
        fit = rep.fit
        out = {"m": rep.m, "ell": rep.ell, "A": rep.A, "D": rep.D, "D_regularized": rep.D_regularized,
               "delta": rep.delta, "deltas": rep.deltas, "c1_predicted": rep.c1_pred,
               "c2_predicted": rep.c2_pred, "ratios": rep.ratios, "rel_err": rep.rel_err,
               "fit": None if fit is None else {"basis": fit.basis, "coef": fit.coef,
                                                "stderr": fit.stderr, "cond": fit.cond},
               "local_mass_stable": asy.stability(local_ratio)[0], "notes": rep.notes}
        if self.records is not None and b.kind == geo.TORUS:
            eta = [r.blowup.eta_sup[0] / (r.blowup.lam[0] ** 2 * np.exp(-r.blowup.lam[0]))
                   for r in self.records]
            ident = [abs(r.blowup.lam_identity[0]) / (r.blowup.lam[0] ** 2 * np.exp(-r.blowup.lam[0]))
                     for r in self.records]
            out["eta_ratio"] = eta
            out["lam_identity_ratio"] = ident
            out["eta_stable"] = asy.stability(eta)[0]
            out["lam_identity_stable"] = asy.stability(ident)[0]
        self.write_json("expansion.json", out)

    def stage_diagnostics(self):
        c = self.cfg
        dd = c.diag
        b = self.bcfg
        recs = self.branch_records()
        out = {"pohozaev": [], "divergence": None, "kernel_residuals": {}, "entire_spectrum": None,
               "spectrum_trace": [], "uniqueness_clusters": None}

        u = dg.polynomial_field([[1.0, 2.0, 3.0], [0.5, 1.0, 0.0], [2.0, 0.0, 0.0]])
        v = dg.polynomial_field([[0.0, 1.0, -1.0], [2.0, 0.3, 0.0], [1.0, 0.0, 0.0]])
        lhs, rhs, gap = dg.divergence_identity_check(u, v, [0.1, 0.2], 0.3)
        out["divergence"] = {"lhs": lhs, "rhs": rhs, "gap": gap}

        if dd.get("pohozaev", True) and recs:
            lam_p = dd.get("pohozaev_lambda", recs[0].lambda_target)
            rec = min(recs, key=lambda r: abs(r.lambda_target - lam_p))
            amp = dd.get("pohozaev_amp", 0.1)
            if b.kind == geo.DISK:
                fr = dg.disk_frame(rec.blowup.lam[0], amp=amp)
            else:
                fr = dg.manufactured_frame(rec.field, amp=amp)
            for name, fn in (("identity_1", dg.pohozaev_identity_1),
                             ("identity_2_dir1", lambda f: dg.pohozaev_identity_2(f, 1)),
                             ("identity_2_dir2", lambda f: dg.pohozaev_identity_2(f, 2))):
                r = fn(fr)
                out["pohozaev"].append({"identity": name, "lambda": rec.lambda_target, "r": fr.r,
                                        "lhs": r.lhs, "rhs": r.rhs, "gap": r.gap,
                                        "normalized_gap": r.normalized_gap, "trivial": r.trivial})

        zmax, nk = dd.get("kernel_zmax", 20.0), dd.get("kernel_n", 2000)
        for name in dg.KERNEL_NAMES:
            out["kernel_residuals"][name] = dg.entire_kernel_residual(name, 1.0, zmax, nk)
        for j in range(b.m):
            cj = dg.psi_scale(b, j)
            for k, name in enumerate(dg.KERNEL_NAMES):
                out["kernel_residuals"][f"psi_{j + 1}_{k}"] = dg.entire_kernel_residual(name, cj, zmax, nk)
        spec = dg.entire_spectrum(zmax, nk)
        dim, nxt, gap_ok = dg.kernel_dimension(spec)
        out["entire_spectrum"] = {"eigenvalues": [s[0] for s in spec[:8]],
                                  "modes": [s[1] for s in spec[:8]], "kernel_dimension": dim,
                                  "next_magnitude": nxt, "gap_ok": gap_ok}

        lams = dd.get("spectrum_lambdas")
        if lams is None:
            chosen = recs if b.kind == geo.DISK else recs[:1]
        else:
            chosen = [min(recs, key=lambda r: abs(r.lambda_target - x)) for x in lams]
        rows = []
        k = dd.get("spectrum_k", 10)
        sn = dd.get("spectrum_n", 128)
        for rec in chosen:
            f = rec.field
            if b.kind == geo.TORUS and f.grid.n != sn:
                # the shift-invert solve is too slow at production resolution; re-solve coarser
                f = sv.continue_branch(b, [rec.lambda_target], n=sn, tol=c.tol)[0].field
            ev = np.real_if_close(dg.linearized_spectrum(f, k=k))
            ev = np.asarray(ev, float)
            out["spectrum_trace"].append({"lambda": rec.lambda_target, "eigenvalues": ev,
                                          "min_abs": float(np.min(np.abs(ev)))})
            rows.append([rec.lambda_target, float(np.min(np.abs(ev))), *ev])
        if rows:
            self.write_csv("spectrum_trace.csv", ["lambda", "min_abs"] + [f"eig_{i + 1}" for i in range(k)],
                           rows)

        starts = dd.get("probe_starts", 0)
        if starts and recs:
            lam_q = dd.get("probe_lambda", recs[-1].lambda_target)
            rec = min(recs, key=lambda r: abs(r.lambda_target - lam_q))
            rho = dd.get("probe_rho", rec.rho)
            base = rec.field if b.kind == geo.TORUS else None
            pr = dg.uniqueness_probe(b, rho, starts, scale=dd.get("probe_scale", 0.3), seed=c.seed,
                                     base=base, shift_scale=dd.get("probe_shift"))
            out["uniqueness_clusters"] = {"rho": rho, "starts": starts, "clusters": pr.clusters,
                                          "members": pr.members, "failures": pr.failures,
                                          "max_distance": float(np.max(pr.distances)) if pr.fields else 0.0}
        self.write_json("diagnostics.json", out)
        self.diag = out

    # -- figures

    def figures(self):
        from . import plots
        if not plots.available():
            log.warning("matplotlib not installed; figures skipped")
            return []
        made = []
        rep = self.report
        if rep is not None:
            made.append(plots.expansion_figure(rep.lam1, rep.measured, rep.leading, rep.refined, rep.m,
                                               self.out / "expansion.png"))
            e = np.exp(rep.lam1)
            made.append(plots.residual_figure(
                rep.lam1, [(rep.measured + 8 * np.pi * rep.m - rep.refined) * e,
                           (rep.measured + 8 * np.pi * rep.m - rep.leading) * e],
                ["(measured - refined) e^lambda", "(measured - leading) e^lambda"],
                self.out / "remainder.png"))
        tr = self.diag["spectrum_trace"] if self.diag else None
        if tr:
            made.append(plots.spectrum_figure([t["lambda"] for t in tr], [t["eigenvalues"] for t in tr],
                                              self.out / "spectrum.png"))
        if self.records and self.bcfg.kind == geo.TORUS:
            f = self.records[-1].field
            # centre the first bubble: grid index 0 sits on q_1, so roll by half a period
            k = f.grid.n // 2
            q = np.asarray(f.cfg.q[0], float)
            pts = np.roll(geo.min_image(f.grid.points - q) + q, (k, k), (0, 1))
            made.append(plots.field_figure(pts, np.roll(f.u, (k, k), (0, 1)), self.out / "field.png",
                                           f"lambda = {self.records[-1].lambda_target:g}"))
        self.files += [p.name for p in made]
        return made

    def run(self, stages, figures=False):
        order = [s for s in STAGES if s in stages]
        for s in order:
            t0 = time.perf_counter()
            log.info("stage %s", s)
            getattr(self, "stage_" + s.replace("-", "_"))()
            self.stage_log.append({"stage": s, "seconds": round(time.perf_counter() - t0, 3)})
        if figures:
            self.figures()
        self.write_manifest("ok")

    def write_manifest(self, status, error=None):
        body = {"status": status, "name": self.cfg.name, "config": self.cfg.raw, "seed": self.cfg.seed,
                "stages": self.stage_log, "files": sorted(set(self.files))}
        if error is not None:
            body["error"] = {"type": type(error).__name__, "message": str(error)}
            self.write_json("failure.json", body)
        else:
            self.write_json("manifest.json", body)


def _grid_max_seed(cfg, n=32):
    """Grid point maximising f_1 (m = 1 only)."""
    if cfg.kind == geo.TORUS:
        s = (np.arange(n) + 0.5) / n
        pts = np.stack(np.meshgrid(s, s, indexing="ij"), -1).reshape(-1, 2)
    else:
        s = np.linspace(-0.7, 0.7, n)
        pts = np.stack(np.meshgrid(s, s, indexing="ij"), -1).reshape(-1, 2)
        pts = pts[np.sum(pts * pts, -1) < 0.49]
    best, arg = -np.inf, pts[0]
    for p in pts:
        try:
            val = qt.f_m_eval(cfg.with_q([p], validate=False))[0]
        except (BubblekitError, ValueError):
            continue
        if val > best:
            best, arg = val, p
    return arg


# --------------------------------------------------------------------------
# entry point


def _threads(arg):
    if arg is not None:
        return int(arg)
    env = os.environ.get("BUBBLEKIT_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"BUBBLEKIT_THREADS must be an integer, got {env!r}") from None
    return 1


def build_parser():
    p = argparse.ArgumentParser(prog="bubblekit", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"bubblekit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES + ("run",):
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None,
                        help="TOML file or bundled name (" + ", ".join(bundled_configs()) + ")")
        sp.add_argument("--stage", default=None, help="comma-separated stages (run only)")
        sp.add_argument("--out", default="bubblekit_out")
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--figures", action="store_true", help="also render PNG figures (needs matplotlib)")
        sp.add_argument("-q", "--quiet", action="store_true")
    sub.add_parser("list-configs")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "list-configs":
        print("\n".join(bundled_configs()))
        return 0
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    exp = None
    try:
        grids.set_threads(_threads(args.threads))
        default = {"disk-exact": "disk_exact", "green-table": "torus_cos"}.get(args.command)
        if args.config is None and default is None:
            raise ConfigError(f"{args.command} needs --config")
        cfg = load_config(args.config or default, args.seed)
        if args.command == "run":
            stages = args.stage.split(",") if args.stage else cfg.stages
            bad = [s for s in stages if s not in STAGES]
            if bad:
                raise ConfigError(f"unknown stage(s): {', '.join(bad)}")
        else:
            stages = [args.command]
        exp = Experiment(cfg, args.out)
        exp.run(stages, figures=args.figures or cfg.figures)
    except BubblekitError as exc:
        code = exc.exit_code
        kind = "configuration" if code == 2 else ("resolution" if code == 4 else "numerical")
        print(f"bubblekit: {kind} error: {exc}", file=sys.stderr)
        if exp is not None:
            exp.write_manifest("failed", exc)
        return code
    print(f"bubblekit: wrote {len(set(exp.files))} files to {exp.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
