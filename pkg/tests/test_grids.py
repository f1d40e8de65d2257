import numpy as np
import pytest
from hypothesis import given, strategies as st

from bubblekit import grids


def trig_field(g):
    x = g.points
    u = np.cos(2 * np.pi * x[..., 0]) * np.sin(4 * np.pi * x[..., 1]) + 0.3 * np.sin(2 * np.pi * (x[..., 0] + x[..., 1]))
    lap = (-20 * np.pi**2 * np.cos(2 * np.pi * x[..., 0]) * np.sin(4 * np.pi * x[..., 1])
           - 0.3 * 8 * np.pi**2 * np.sin(2 * np.pi * (x[..., 0] + x[..., 1])))
    return u, lap


@pytest.mark.parametrize("strength", [0.0, 0.5])
def test_spectral_laplacian(strength):
    g = grids.TorusGrid(64, (0.3, 0.7), strength)
    u, lap = trig_field(g)
    assert np.max(np.abs(g.laplacian(u) - lap)) < 1e-8 * np.max(np.abs(lap))
    assert np.max(np.abs(g.laplacian(u, nyquist=True) - lap)) < 1e-8 * np.max(np.abs(lap))


def test_integrate_and_index():
    g = grids.TorusGrid(64, (0.1, 0.2), 0.6)
    x = g.points
    assert g.integrate(np.cos(2 * np.pi * x[..., 0]) ** 2) == pytest.approx(0.5, abs=1e-13)
    assert g.integrate(np.ones((64, 64))) == pytest.approx(1.0, abs=1e-14)
    idx = g.to_index(x)
    n = np.arange(64)
    assert np.allclose(idx[..., 0], n[:, None], atol=1e-10)
    assert np.allclose(idx[..., 1], n[None, :], atol=1e-10)
    assert g.nearest_node([0.1, 0.2]) == (0, 0)


def test_interpolation():
    g = grids.TorusGrid(128, (0.0, 0.0), 0.4)
    u, _ = trig_field(g)
    pts = np.random.default_rng(0).random((50, 2))
    exact = np.cos(2 * np.pi * pts[:, 0]) * np.sin(4 * np.pi * pts[:, 1]) + 0.3 * np.sin(2 * np.pi * pts.sum(1))
    assert np.max(np.abs(g.interpolate(u, pts) - exact)) < 1e-6


def test_self_adjoint():
    g = grids.TorusGrid(32, (0.0, 0.0), 0.5)
    rng = np.random.default_rng(1)
    u, v = rng.standard_normal((2, 32, 32))
    for nyq in (False, True):
        a = g.integrate(g.laplacian(u, nyq) * v)
        b = g.integrate(u * g.laplacian(v, nyq))
        assert a == pytest.approx(b, rel=1e-10)


def dense(op, n):
    eye = np.eye(n * n)
    return np.stack([op(e.reshape(n, n)).ravel() for e in eye], 1)


def test_nyquist_symbol():
    # flat grid: with the correction every Fourier mode keeps -4 pi^2 |k|^2
    n = 12
    g = grids.TorusGrid(n)
    k = np.fft.fftfreq(n, 1.0 / n)
    exact = np.sort((-4 * np.pi**2 * (k[:, None] ** 2 + k[None, :] ** 2)).ravel())
    ev = np.sort(np.linalg.eigvals(dense(lambda u: g.laplacian(u, True), n)).real)
    assert np.allclose(ev, exact, atol=1e-8 * np.pi**2 * n * n)
    ev0 = np.sort(np.linalg.eigvals(dense(g.laplacian, n)).real)
    # uncorrected, each Nyquist axis contributes 0: four null modes and 2n - 1 misplaced ones
    assert np.sum(np.abs(ev0) < 1e-8) == 4
    assert np.sum(np.abs(ev0 - exact) > 1.0) > 0


@pytest.mark.parametrize("nyq", [False, True])
def test_solve_shifted_inverts(nyq):
    g = grids.TorusGrid(32, (0.2, 0.4), 0.6)
    u = np.random.default_rng(2).standard_normal((32, 32))
    b = g.laplacian(u, nyq) - 3.0 * u
    assert np.allclose(g.solve_shifted(b, 3.0, nyq), u, atol=1e-9)


def test_fd_laplacian_order():
    errs = []
    for n in (32, 64):
        g = grids.TorusGrid(n, (0.0, 0.0), 0.5)
        u, lap = trig_field(g)
        errs.append(np.max(np.abs(g.fd_laplacian() @ u.ravel() - lap.ravel())))
    assert 40 < errs[0] / errs[1] < 90  # sixth order


def test_fd_weights():
    c = grids.fd_weights(0.0, np.array([-2.0, -1.0, 0.0, 1.0, 2.0]), 2)
    assert np.allclose(c[:, 2], np.array([-1, 16, -30, 16, -1]) / 12)
    assert np.allclose(c[:, 1], np.array([1, -8, 0, 8, -1]) / 12)


@pytest.mark.parametrize("beta", [0.0, 4.0])
def test_radial_grid(beta):
    g = grids.RadialGrid(200, beta)
    r = g.r
    assert g.integrate(np.ones_like(r)) == pytest.approx(np.pi, rel=1e-10)
    L = g.laplacian
    assert np.allclose(L @ r**2, 4.0, atol=1e-7)
    assert np.allclose(L @ r**4, 16 * r[:-1] ** 2, atol=1e-6)


def test_grid_validation():
    with pytest.raises(ValueError):
        grids.TorusGrid(31)
    with pytest.raises(ValueError):
        grids.TorusGrid(32, strength=1.0)
    with pytest.raises(ValueError):
        grids.RadialGrid(102)


@given(st.floats(0.0, 0.9), st.floats(0.0, 1.0, exclude_max=True), st.floats(0.0, 1.0, exclude_max=True))
def test_mapped_grid_roundtrip(a, x, y):
    g = grids.TorusGrid(16, (0.25, 0.5), a)
    idx = g.to_index(np.array([x, y]))
    (x1, _), (x2, _) = g.axes
    # inverse map lands on the right cell
    s = idx / 16
    back = np.array([0.25, 0.5]) + s - a / (2 * np.pi) * np.sin(2 * np.pi * s)
    assert np.allclose(back - np.floor(back), [x, y], atol=1e-10) or np.allclose(
        np.abs(back - np.floor(back) - [x, y]) % 1.0, 0.0, atol=1e-10)
