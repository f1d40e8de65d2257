import numpy as np
import pytest
from hypothesis import given, strategies as st

from bubblekit import geometry as geo
from bubblekit import quantities as qt
from bubblekit import weight as wt
from bubblekit.errors import HypothesisError, NumericalError

from conftest import fd_grad

coord = st.floats(0.0, 1.0, allow_nan=False, exclude_max=True)


def test_g_star(disk_cfg, flat_cfg, torus, flat_weight):
    x = np.array([[0.3, 0.1], [-0.5, 0.2]])
    assert np.allclose(qt.g_star(disk_cfg, 0, x), 0.0, atol=1e-15)
    r0 = 8 * np.pi * torus.robin_constant
    assert qt.g_star(flat_cfg, 0, flat_cfg.q[0]) == pytest.approx(r0, abs=1e-13)
    cfg2 = qt.BlowupConfiguration(torus, flat_weight, [[0.1, 0.2], [0.6, 0.7]])
    q1, q2 = cfg2.q
    expect = 8 * np.pi * geo.green_regular(torus, q1, q1) + 8 * np.pi * geo.green(torus, q1, q2)
    assert qt.g_star(cfg2, 0, q1) == pytest.approx(expect, abs=1e-14)


def test_f_m_symmetric_cases(disk_cfg, flat_cfg, disk):
    val, grad, hess = qt.f_m_eval(flat_cfg)
    assert np.allclose(grad, 0.0, atol=1e-14)
    val, grad, _ = qt.f_m_eval(disk_cfg)
    assert np.allclose(grad, 0.0, atol=1e-15)
    q = np.array([[0.3, -0.2]])
    assert qt.f_m_eval(disk_cfg, q)[0] == pytest.approx(4 * np.pi * geo.green_regular(disk, q[0], q[0]))


def test_f_m_derivatives_cos(cos_cfg):
    # near the grid maximum of f_1, analytic derivatives against finite differences
    q = np.array([0.02, -0.03])
    f = lambda y: qt.f_m_eval(cos_cfg, y[None, :])[0]
    _, grad, hess = qt.f_m_eval(cos_cfg, q[None, :])
    assert np.allclose(grad, fd_grad(f, q), atol=1e-6)
    H = np.stack([fd_grad(lambda y: qt.f_m_eval(cos_cfg, y[None, :])[1][i], q) for i in range(2)])
    assert np.allclose(hess, H, atol=1e-6)


def test_f_m_two_points_derivatives(torus, cos_weight):
    cfg = qt.BlowupConfiguration(torus, cos_weight, [[0.1, 0.2], [0.55, 0.7]])
    q = cfg.q.ravel()
    f = lambda z: qt.f_m_eval(cfg, z.reshape(2, 2))[0]
    _, grad, hess = qt.f_m_eval(cfg)
    fd = np.zeros(4)
    for i in range(4):
        e = np.zeros(4)
        e[i] = 1e-4
        fd[i] = (-f(q + 2 * e) + 8 * f(q + e) - 8 * f(q - e) + f(q - 2 * e)) / 12e-4
    assert np.allclose(grad, fd, atol=1e-6)
    assert np.allclose(hess, hess.T, atol=1e-12)


@given(coord, coord, coord, coord)
def test_f_m_relabeling(a, b, c, d):
    tab = geo.torus_table()
    w = wt.WeightSpec("exp_trig", trig=(wt.TrigTerm(0.5, (1, 0)), wt.TrigTerm(0.25, (0, 1))))
    q = np.array([[a, b], [c, d]])
    if np.hypot(*geo.min_image(q[0] - q[1])) < 0.05:
        return
    cfg = qt.BlowupConfiguration(tab, w, q)
    v1, g1, h1 = qt.f_m_eval(cfg)
    v2, g2, h2 = qt.f_m_eval(cfg, q[::-1])
    perm = [2, 3, 0, 1]
    assert v1 == pytest.approx(v2, abs=1e-10)
    assert np.allclose(g1[perm], g2, atol=1e-9)
    assert np.allclose(h1[np.ix_(perm, perm)], h2, atol=1e-8)


def test_critical_points(flat_cfg, cos_cfg, disk_cfg):
    r = qt.find_critical_configuration(flat_cfg)
    assert r.iterations == 0 and not r.nondegenerate and abs(r.det) < 1e-20
    r = qt.find_critical_configuration(cos_cfg.with_q([[0.1, 0.1]]))
    assert np.allclose(geo.min_image(r.q[0]), 0.0, atol=1e-10)
    assert r.grad_norm <= 1e-10 and r.nondegenerate
    r = qt.find_critical_configuration(disk_cfg.with_q([[0.2, 0.1]]))
    assert np.allclose(r.q[0], 0.0, atol=1e-10) and r.nondegenerate
    # sampled values never exceed the centre value (Robin function maximised there)
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.5, 0.5, (50, 2))
    vals = [qt.f_m_eval(disk_cfg, p[None, :])[0] for p in pts]
    assert max(vals) <= r.value


def test_hypothesis_violations(torus):
    w = wt.WeightSpec(vortices=(wt.Vortex((0.5, 0.5), 1.0),))
    with pytest.raises(HypothesisError):
        qt.BlowupConfiguration(torus, w, [[0.45, 0.5]])
    with pytest.raises(HypothesisError):
        qt.BlowupConfiguration(torus, wt.WeightSpec(), [[0.1, 0.1], [1.1, 0.1]])
    with pytest.raises(HypothesisError):
        qt.BlowupConfiguration(geo.disk_table(), wt.WeightSpec(domain_kind=geo.DISK), [[0.8, 0.0]])


def test_ell(disk_cfg, flat_cfg, torus):
    assert qt.ell(disk_cfg) == 0.0
    assert qt.ell(flat_cfg) == pytest.approx(8 * np.pi * np.exp(8 * np.pi * torus.robin_constant), rel=1e-13)
    w = wt.WeightSpec("exp_trig", trig=(wt.TrigTerm(0.5, (1, 0)),))
    cfg = qt.BlowupConfiguration(torus, w, [[0.0, 0.0]])
    expect = (-2 * np.pi**2 + 8 * np.pi) * np.exp(0.5) * np.exp(8 * np.pi * torus.robin_constant)
    assert qt.ell(cfg) == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("c", [0.5, 2.0, 7.0])
def test_ell_scales_with_weight(c, torus):
    trig = (wt.TrigTerm(0.5, (1, 0)), wt.TrigTerm(0.25, (0, 1)))
    base = qt.BlowupConfiguration(torus, wt.WeightSpec("exp_trig", trig=trig), [[0.1, 0.3]])
    scaled = qt.BlowupConfiguration(torus, wt.WeightSpec("exp_trig", c0=np.log(c), trig=trig), [[0.1, 0.3]])
    assert qt.ell(scaled) == pytest.approx(c * qt.ell(base), rel=1e-12)


def test_phi_identities(disk_cfg, torus, cos_weight):
    x = np.array([[0.3, 0.1], [-0.2, 0.5]])
    assert np.allclose(qt.phi_exponent(disk_cfg, 0, x), -4 * np.log(np.hypot(x[:, 0], x[:, 1])), atol=1e-13)
    cfg = qt.BlowupConfiguration(torus, cos_weight, [[0.1, 0.2], [0.6, 0.7]])
    rng = np.random.default_rng(4)
    for j in range(2):
        assert abs(qt.f_qj(cfg, j, cfg.q[j])) < 1e-14
        xs = rng.random((40, 2))
        r = cfg.dist(xs, cfg.q[j])
        phi = qt.phi_exponent(cfg, j, xs)
        f = qt.f_qj(cfg, j, xs)
        assert np.max(np.abs(phi + 4 * np.log(r) - f)) < 1e-10
        assert np.allclose(np.exp(phi) * r**4, np.exp(f), rtol=1e-10)


def test_d_of_q_disk(disk_cfg):
    res = qt.d_of_q(disk_cfg)
    assert res.defined
    assert res.value == pytest.approx(-np.pi, abs=1e-3)
    assert abs(res.log_slope) < 1e-6
    # every radius reproduces the annulus value int |x|^-4 - pi / r^2 = -pi
    assert np.allclose(res.table, -np.pi, atol=1e-8)


def test_d_of_q_flat_torus_slope(flat_cfg):
    res = qt.d_of_q(flat_cfg)
    assert not res.defined and np.isnan(res.value)
    assert res.log_slope == pytest.approx(-0.5 * np.pi * qt.ell(flat_cfg), rel=1e-6)
    assert res.log_slope < 0
    assert np.all(np.diff(res.table) > 0)  # radii decrease, bracket grows like -b log(1/r)


def test_d_of_q_partition_insensitive(torus, cos_weight):
    cfg = qt.BlowupConfiguration(torus, cos_weight, [[0.0, 0.0], [0.5, 0.5]])
    a = qt.d_of_q(cfg, partition="voronoi", n_grid=256)
    b = qt.d_of_q(cfg, partition="axis", n_grid=256)
    assert np.allclose(a.table, b.table, atol=1e-12)


def test_d_of_q_needs_radii(disk_cfg):
    with pytest.raises(NumericalError, match="insufficient radii"):
        qt.d_of_q(disk_cfg, radii=[0.01])
