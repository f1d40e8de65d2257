"""Acceptance suite.  Each test checks one criterion at its stated tolerance and
records a PASS/FAIL line that is printed in the terminal summary.

The torus runs use the bundled torus_cos config (512^2 grid, heights 6..9) and
take several minutes; everything else reads the files that run writes.
"""

import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

from bubblekit import asymptotics as asy
from bubblekit import cli
from bubblekit import diagnostics as dg
from bubblekit import geometry as geo
from bubblekit import quantities as qt
from bubblekit import solver as sv
from bubblekit import weight as wt

pytestmark = pytest.mark.acceptance


def _run(name, out, stages=None):
    argv = ["run", "--config", name, "--out", str(out), "-q"]
    if stages:
        argv += ["--stage", ",".join(stages)]
    t0 = time.perf_counter()
    code = cli.main(argv)
    return code, time.perf_counter() - t0


def _csv(path):
    with open(path) as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    head, body = rows[0], rows[1:]
    out = {}
    for i, k in enumerate(head):
        col = [r[i] for r in body]
        try:
            out[k] = np.array([float(v) for v in col])
        except ValueError:
            out[k] = np.array(col)
    return out


def _json(path):
    return json.loads(Path(path).read_text())


def _check(record, k, ok, detail):
    record(k, ok, detail)
    assert ok, detail


@pytest.fixture(scope="module")
def cos_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("torus_cos")
    code, wall = _run("torus_cos", out)
    assert code == 0
    return out, wall


@pytest.fixture(scope="module")
def disk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("disk_exact")
    code, wall = _run("disk_exact", out)
    assert code == 0
    return out, wall


@pytest.fixture(scope="module")
def flat_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("torus_flat")
    code, wall = _run("torus_flat", out)
    assert code == 0
    return out, wall


def _top_lambdas(b, targets):
    idx = [int(np.argmin(np.abs(b["lambda_target"] - t))) for t in targets]
    assert np.allclose(b["lambda_target"][idx], targets)
    return idx


def test_criterion_1_disk_exact_family(tmp_path, record_criterion):
    stages = ["quantities", "disk-exact", "branch", "verify-expansion"]
    code, wall = _run("disk_exact", tmp_path, stages)
    assert code == 0
    b = _csv(tmp_path / "branch.csv")
    lam = b["lambda_target"]
    exact = 8 * np.pi - 8 * np.exp(-lam)
    err_branch = float(np.max(np.abs(b["rho"] - exact)))
    ex = _csv(tmp_path / "disk_exact.csv")
    err_exact = float(np.max(ex["abs_err_rho"]))
    D = _json(tmp_path / "quantities.json")["D"]
    e = _csv(tmp_path / "expansion.csv")
    rem = np.abs(e["rho"] - e["refined"]) / (np.exp(-e["lambda_1"]) * e["lambda_1"] ** 2)
    ok = (sorted(lam) == [4.0, 5.0, 6.0, 7.0] and err_branch <= 1e-7 and err_exact <= 1e-7
          and abs(D + np.pi) <= 1e-3 and float(np.max(rem)) <= 1e-4 and wall <= 60.0)
    _check(record_criterion, 1, ok,
           f"max|rho - (8pi - 8e^-lam)| = {err_branch:.2e} (branch), {err_exact:.2e} (disk-exact); "
           f"D = {D:.6f}; max remainder/(lam^2 e^-lam) = {np.max(rem):.2e}; {wall:.1f} s")


def test_criterion_2_leading_coefficient(cos_run, record_criterion):
    out, wall = cos_run
    cp = _json(out / "critical_points.json")
    ex = _json(out / "expansion.json")
    b = _csv(out / "branch.csv")
    cfg = cli.load_config("torus_cos")
    ratio = ex["ratios"]["c1"][0]
    ok = (cfg.n == 512 and b["lambda_target"].min() == 6.0 and b["lambda_target"].max() == 9.0
          and bool(np.all(b["resolved"] == 1)) and _nondegenerate(cp)
          and 0.85 <= ratio <= 1.15 and wall <= 900.0)
    _check(record_criterion, 2, ok,
           f"fitted c1 / predicted = {ratio:.4f} (c1 fit {ex['fit']['coef'][0]:.4f}, "
           f"predicted {ex['c1_predicted']:.4f}); run {wall:.0f} s")


def _nondegenerate(cp):
    pts = cp["points"] if "points" in cp else [cp]
    return all(bool(p.get("nondegenerate", False)) for p in pts)


def test_criterion_3_eta_bound(cos_run, record_criterion):
    out, _ = cos_run
    b = _csv(out / "branch.csv")
    idx = _top_lambdas(b, [7.0, 8.0, 9.0])
    lam = b["lambda_1"][idx]
    c = b["eta_sup_1"][idx] / (lam**2 * np.exp(-lam))
    spread = float(c.max() / c.min())
    _check(record_criterion, 3, bool(spread < 2.0),
           f"sup|eta|/(lam^2 e^-lam) at 7, 8, 9 = {np.array2string(c, precision=4)}; max/min = {spread:.3f}")


def test_criterion_4_lambda_identity(cos_run, record_criterion):
    out, _ = cos_run
    b = _csv(out / "branch.csv")
    lam = b["lambda_1"]
    c = np.abs(b["lam_identity_1"]) / (lam**2 * np.exp(-lam))
    ok, mx, med = asy.stability(c)
    _check(record_criterion, 4, ok,
           f"C = |identity|/(lam^2 e^-lam) in [{c.min():.4f}, {mx:.4f}], median {med:.4f}; stable (max <= 2 median)")


def test_criterion_5_local_mass(cos_run, record_criterion):
    out, _ = cos_run
    e = _csv(out / "expansion.csv")
    c = np.abs(e["rho_1"] - e["rho_1_predicted"]) * np.exp(e["lambda_1"])
    ok, mx, med = asy.stability(c)
    _check(record_criterion, 5, ok,
           f"C = |rho_1 - predicted| e^lam in [{c.min():.3f}, {mx:.3f}], median {med:.3f}; stable (max <= 2 median)")


def test_criterion_6_green_fidelity(cos_run, disk_run, record_criterion):
    tg = _json(cos_run[0] / "green.json")
    rows = _csv(cos_run[0] / "green_table.csv")
    dgj = _json(disk_run[0] / "green.json")
    ok = (len(rows["abs_diff"]) == 100 and tg["max_ewald_fourier"] <= 1e-10
          and dgj["max_boundary_value"] <= 1e-12 and tg["max_abs_integral"] <= 1e-10)
    _check(record_criterion, 6, ok,
           f"Ewald vs Fourier {tg['max_ewald_fourier']:.1e} over {len(rows['abs_diff'])} pairs; "
           f"disk boundary {dgj['max_boundary_value']:.1e}; integral {tg['max_abs_integral']:.1e}")


def test_criterion_7_kernel_dimension(cos_run, record_criterion):
    d = _json(cos_run[0] / "diagnostics.json")
    ev = np.sort(np.abs(d["entire_spectrum"]["eigenvalues"]))
    res = d["kernel_residuals"]
    worst = max(res.values())
    ok = (int(np.sum(ev < 1e-2)) == 3 and ev[3] > 0.1 and d["entire_spectrum"]["kernel_dimension"] == 3
          and worst <= 1e-6 and {"Y0", "Y1", "Y2", "psi_1_0", "psi_1_1", "psi_1_2"} <= set(res))
    _check(record_criterion, 7, ok,
           f"|eigenvalues| {np.array2string(ev[:4], precision=3)}; worst residual of Y_k, psi_jk = {worst:.1e}")


def test_criterion_8_pohozaev(cos_run, record_criterion):
    d = _json(cos_run[0] / "diagnostics.json")
    at512 = {p["identity"]: p["normalized_gap"] for p in d["pohozaev"]}
    lam = d["pohozaev"][0]["lambda"]
    cfg = qt.BlowupConfiguration(
        geo.torus_table(),
        wt.WeightSpec("exp_trig", trig=(wt.TrigTerm(0.5, (1, 0)), wt.TrigTerm(0.25, (0, 1)))),
        [[0.0, 0.0]])
    ladder = {k: [] for k in at512}
    for n in (128, 256):
        fr = dg.manufactured_frame(sv.continue_branch(cfg, [lam], n=n)[0].field, amp=0.1)
        ladder["identity_1"].append(dg.pohozaev_identity_1(fr).normalized_gap)
        ladder["identity_2_dir1"].append(dg.pohozaev_identity_2(fr, 1).normalized_gap)
        ladder["identity_2_dir2"].append(dg.pohozaev_identity_2(fr, 2).normalized_gap)
    for k in ladder:
        ladder[k].append(at512[k])
    converging = all(v[0] > v[1] > v[2] for v in ladder.values())
    u = dg.polynomial_field([[1.0, 2.0, 3.0], [0.5, 1.0, 0.0], [2.0, 0.0, 0.0]])
    v = dg.polynomial_field([[0.0, 1.0, -1.0], [2.0, 0.3, 0.0], [1.0, 0.0, 0.0]])
    div_gap = dg.divergence_identity_check(u, v, [0.1, 0.2], 0.3)[2]
    ok = max(at512.values()) <= 1e-6 and converging and div_gap <= 1e-10 and d["divergence"]["gap"] <= 1e-10
    lines = "; ".join(f"{k} " + " > ".join(f"{g:.1e}" for g in vals) for k, vals in ladder.items())
    _check(record_criterion, 8, ok, f"gaps N=128,256,512: {lines}; divergence identity {div_gap:.1e}")


def test_criterion_9_uniqueness(disk_run, flat_run, record_criterion):
    dcfg = qt.BlowupConfiguration(geo.disk_table(), wt.WeightSpec(domain_kind=geo.DISK), [[0.0, 0.0]])
    rho = 8 * np.pi - 8 * np.exp(-7.0)
    pr = dg.uniqueness_probe(dcfg, rho, 20, scale=0.3, seed=0, tol=1e-6)
    cli_disk = _json(disk_run[0] / "diagnostics.json")["uniqueness_clusters"]
    cli_flat = _json(flat_run[0] / "diagnostics.json")["uniqueness_clusters"]
    ok = (pr.clusters == 1 and not pr.failures and len(pr.fields) == 20
          and cli_disk["clusters"] == 1 and cli_flat["clusters"] > 1)
    _check(record_criterion, 9, ok,
           f"disk: 20 starts -> {pr.clusters} cluster (max distance {pr.distances.max():.1e}); "
           f"flat torus control: {cli_flat['starts']} starts -> {cli_flat['clusters']} clusters")


def test_criterion_10_determinism(cos_run, disk_run, flat_run, tmp_path, record_criterion):
    bad, n = [], 0
    for name, (first, _) in (("torus_cos", cos_run), ("disk_exact", disk_run), ("torus_flat", flat_run)):
        again = tmp_path / name
        assert _run(name, again)[0] == 0
        files = sorted(p.name for p in first.glob("*.csv"))
        assert files == sorted(p.name for p in again.glob("*.csv"))
        for f in files:
            n += 1
            if (first / f).read_bytes() != (again / f).read_bytes():
                bad.append(f"{name}/{f}")
    _check(record_criterion, 10, not bad,
           f"{n} CSV files across 3 bundled configs; differing: {', '.join(bad) or 'none'}")
