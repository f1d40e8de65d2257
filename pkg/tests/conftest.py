import numpy as np
import pytest
from hypothesis import settings

from bubblekit import geometry as geo
from bubblekit import quantities as qt
from bubblekit import weight as wt

settings.register_profile("bubblekit", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("bubblekit")


@pytest.fixture(scope="session")
def torus():
    return geo.torus_table()


@pytest.fixture(scope="session")
def disk():
    return geo.disk_table()


@pytest.fixture(scope="session")
def cos_weight():
    return wt.WeightSpec("exp_trig", trig=(wt.TrigTerm(0.5, (1, 0)), wt.TrigTerm(0.25, (0, 1))))


@pytest.fixture(scope="session")
def flat_weight():
    return wt.WeightSpec()


@pytest.fixture(scope="session")
def disk_cfg(disk):
    return qt.BlowupConfiguration(disk, wt.WeightSpec(domain_kind=geo.DISK), [[0.0, 0.0]])


@pytest.fixture(scope="session")
def cos_cfg(torus, cos_weight):
    return qt.BlowupConfiguration(torus, cos_weight, [[0.0, 0.0]])


@pytest.fixture(scope="session")
def flat_cfg(torus, flat_weight):
    return qt.BlowupConfiguration(torus, flat_weight, [[0.5, 0.5]])


def fd_grad(f, x, h=1e-4):
    """Fourth-order central differences of a scalar function of a 2-vector."""
    x = np.asarray(x, float)
    g = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        g[i] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)
    return g


def fd_lap(f, x, h=1e-3):
    x = np.asarray(x, float)
    out = 0.0
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        out += (-f(x + 2 * e) + 16 * f(x + e) - 30 * f(x) + 16 * f(x - e) - f(x - 2 * e)) / (12 * h * h)
    return out


_CRITERIA = {}


@pytest.fixture
def record_criterion():
    def rec(k, ok, detail):
        _CRITERIA[k] = (ok, detail)
    return rec


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"CRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}")
