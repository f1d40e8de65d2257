import numpy as np
import pytest
from hypothesis import given, strategies as st

from bubblekit import geometry as geo
from bubblekit import weight as wt
from bubblekit.errors import ConfigError, HypothesisError, SingularEvaluationError

from conftest import fd_grad, fd_lap

coord = st.floats(0.0, 1.0, allow_nan=False, exclude_max=True)


def vortex_weight(alpha=2.0, p=(0.5, 0.5)):
    return wt.WeightSpec(vortices=(wt.Vortex(p, alpha),))


def test_constant_weight(torus):
    w = wt.WeightSpec()
    x = np.random.default_rng(0).random((10, 2))
    assert np.all(wt.h_eval(w, torus, x) == 1.0)
    grad, lap = wt.log_h_derivs(w, torus, x)
    assert np.all(grad == 0.0) and np.all(lap == 0.0)


def test_vortex_zero(torus):
    w = vortex_weight(1.0, (0.3, 0.4))
    assert wt.h_eval(w, torus, [0.3, 0.4]) == 0.0
    # within the clamp radius the limiting value is returned
    assert wt.h_eval(w, torus, [0.3 + 1e-9, 0.4]) == 0.0
    assert wt.h_eval(w, torus, [0.6, 0.1]) > 0.0


def test_negative_vortex_is_singular(torus):
    w = vortex_weight(-0.5, (0.3, 0.4))
    with pytest.raises(SingularEvaluationError):
        wt.h_eval(w, torus, [0.3, 0.4])


def test_disk_vortex_at_centre(disk):
    w = wt.WeightSpec(vortices=(wt.Vortex((0.0, 0.0), 1.0),), domain_kind=geo.DISK)
    assert wt.h_eval(w, disk, [0.5, 0.0]) == pytest.approx(0.25, rel=1e-14)
    assert wt.h_eval(w, disk, [0.0, 0.3]) == pytest.approx(0.09, rel=1e-14)


def test_torus_vortex_laplacian(torus):
    # -Lap G = delta - 1, so Lap log h = -4 pi alpha away from the vortex
    w = vortex_weight(2.0)
    x = np.array([0.1, 0.2])
    _, lap = wt.log_h_derivs(w, torus, x)
    assert lap == pytest.approx(-8 * np.pi, rel=1e-12)
    assert fd_lap(lambda y: np.log(wt.h_eval(w, torus, y)), x) == pytest.approx(-8 * np.pi, rel=1e-6)


def test_cos_laplacian(torus):
    w = wt.WeightSpec("exp_trig", trig=(wt.TrigTerm(0.5, (1, 0)),))
    _, lap = wt.log_h_derivs(w, torus, [0.0, 0.0])
    assert lap == pytest.approx(-2 * np.pi**2, rel=1e-13)


def test_validation():
    with pytest.raises(ConfigError):
        wt.WeightSpec(value=-1.0)
    with pytest.raises(ConfigError):
        wt.WeightSpec(vortices=(wt.Vortex((0.1, 0.1), -1.5),))
    with pytest.raises(ConfigError):
        wt.WeightSpec("exp_trig", trig=(wt.TrigTerm(0.5, (0.5, 0)),))
    with pytest.raises(HypothesisError):
        wt.WeightSpec(vortices=(wt.Vortex((0.1, 0.1), 1.0), wt.Vortex((1.1, 0.1), 1.0)))
    with pytest.raises(ConfigError):
        wt.WeightSpec("gaussian")


@given(coord, coord)
def test_log_derivatives_match_finite_differences(a, b):
    tab = geo.torus_table()
    w = wt.WeightSpec("exp_trig", trig=(wt.TrigTerm(0.5, (1, 0)), wt.TrigTerm(0.25, (0, 1)),
                                        wt.TrigTerm(0.1, (1, 1), 0.3)),
                      vortices=(wt.Vortex((0.5, 0.5), 1.0),))
    x = np.array([a, b])
    if np.hypot(*geo.min_image(x - 0.5)) < 0.05:
        return
    grad, lap = wt.log_h_derivs(w, tab, x)
    f = lambda y: float(np.log(wt.h_eval(w, tab, y)))
    assert np.allclose(grad, fd_grad(f, x), atol=1e-6)
    assert lap == pytest.approx(fd_lap(f, x), abs=1e-5)


@given(coord, coord)
def test_positive_off_vortices(a, b):
    tab = geo.torus_table()
    w = vortex_weight(1.5, (0.2, 0.2))
    x = np.array([a, b])
    if np.hypot(*geo.min_image(x - 0.2)) > 1e-6:
        assert wt.h_eval(w, tab, x) > 0.0
