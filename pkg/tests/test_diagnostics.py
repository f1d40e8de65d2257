import numpy as np
import pytest
from hypothesis import given, strategies as st

from bubblekit import diagnostics as dg
from bubblekit import geometry as geo
from bubblekit import grids
from bubblekit import quantities as qt
from bubblekit import solver as sv
from bubblekit import weight as wt


@pytest.fixture(scope="module")
def cos_fields(cos_cfg):
    # the same branch point on three grids for refinement studies
    return {n: sv.continue_branch(cos_cfg, [5.0], n=n)[0].field for n in (64, 128, 256)}


@given(st.lists(st.floats(-2, 2), min_size=9, max_size=9), st.lists(st.floats(-2, 2), min_size=9, max_size=9),
       st.floats(0.05, 0.5))
def test_divergence_identity_polynomials(a, b, r):
    u = dg.polynomial_field(np.reshape(a, (3, 3)))
    v = dg.polynomial_field(np.reshape(b, (3, 3)))
    lhs, rhs, gap = dg.divergence_identity_check(u, v, [0.1, -0.2], r)
    assert gap <= 1e-10 * max(1.0, abs(lhs))


def test_divergence_identity_constant():
    u = dg.polynomial_field([[2.5]])
    v = dg.polynomial_field([[0.0, 1.0], [3.0, 0.0]])
    lhs, rhs, gap = dg.divergence_identity_check(u, v, [0.3, 0.3], 0.2)
    assert lhs == 0.0 and abs(rhs) < 1e-15


def test_divergence_identity_bandlimited_converges():
    u = dg.bandlimited_field(1, kmax=3)
    v = dg.bandlimited_field(2, kmax=3)
    gaps = [dg.divergence_identity_check(u, v, [0.4, 0.6], 0.2, n_r=n, n_theta=2 * n, n_b=4 * n)[2]
            for n in (4, 8, 16)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-10


def test_pohozaev_trivial(cos_fields):
    f = cos_fields[64]
    u = dg.grid_field(f)
    fr = dg.PohozaevFrame(u, u, f.cfg, f.rho, f.cfg.q, r=0.1)
    assert dg.pohozaev_identity_1(fr).trivial
    assert dg.pohozaev_identity_2(fr, 1).trivial
    with pytest.raises(ValueError):
        dg.pohozaev_identity_2(fr, 3)


def test_unforced_frame_solves_equation():
    fr = dg.disk_frame(6.0, amp=0.0)
    # v = u - phi with Lap v + rho h e^{v + phi} = 0: exact radial solution
    assert dg.forcing_norm(fr) < 1e-9 * fr.rho * np.exp(6.0)


def test_unforced_grid_frame_small_forcing(cos_fields):
    f = cos_fields[256]
    fr = dg.PohozaevFrame(dg.grid_field(f), dg.grid_field(f), f.cfg, f.rho, f.cfg.q, r=0.1)
    assert dg.forcing_norm(fr) < 1e-4 * f.rho * np.exp(5.0)


def test_disk_frames_spectral():
    gaps = []
    for nq in (8, 16, 32):
        fr = dg.disk_frame(6.0, n_r=nq, n_theta=2 * nq, n_b=4 * nq)
        gaps.append(dg.pohozaev_identity_1(fr).normalized_gap)
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-12
    fr = dg.disk_frame(6.0)
    assert dg.pohozaev_identity_2(fr, 1).normalized_gap < 1e-12
    assert dg.pohozaev_identity_2(fr, 2).normalized_gap < 1e-12


def test_disk_radial_frame_symmetry():
    # radial pair: both translational identities reduce to 0 = 0 up to round-off
    fr = dg.disk_frame(6.0, radial=True)
    a = dg.pohozaev_identity_2(fr, 1)
    b = dg.pohozaev_identity_2(fr, 2)
    assert a.gap < 1e-12 and b.gap < 1e-12
    # a quarter turn swaps the directions; coarse rules keep the gaps visible
    kw = dict(n_r=6, n_theta=16, n_b=16)
    a = dg.pohozaev_identity_2(dg.disk_frame(6.0, offset=(0.03, 0.0), **kw), 1)
    b = dg.pohozaev_identity_2(dg.disk_frame(6.0, offset=(0.0, 0.03), **kw), 2)
    assert a.gap > 1e-3
    assert a.gap == pytest.approx(b.gap, rel=1e-10)


def test_unforced_bumped_pair_fails():
    fr = dg.disk_frame(6.0)
    fr.forcing = False
    assert dg.pohozaev_identity_1(fr).normalized_gap > 1e-3


def test_manufactured_frames_converge(cos_fields):
    gaps = {n: [dg.pohozaev_identity_1(dg.manufactured_frame(f)).normalized_gap,
                dg.pohozaev_identity_2(dg.manufactured_frame(f), 1).normalized_gap,
                dg.pohozaev_identity_2(dg.manufactured_frame(f), 2).normalized_gap]
            for n, f in cos_fields.items()}
    for i in range(3):
        assert gaps[64][i] > gaps[128][i] > gaps[256][i]
    assert max(gaps[256]) < 1e-6


def test_kernel_values():
    assert dg.kernel_value("Y0", [0.0, 0.0]) == 1.0
    assert dg.bubble_profile([0.0, 0.0]) == pytest.approx(np.log(8.0), abs=1e-15)
    assert dg.kernel_value("Y0", [1.0, 0.0]) == 0.0


def test_kernel_residuals():
    for name in dg.KERNEL_NAMES:
        assert dg.entire_kernel_residual(name) <= 1e-8
    for c in (np.pi, 2.7):
        for name in dg.KERNEL_NAMES:
            assert dg.entire_kernel_residual(name, c) <= 1e-6


def test_kernel_functions_solve_linearisation():
    # Y_k are derivatives of the bubble family: check against central differences of v(z; mu, a)
    z = np.array([[0.3, -0.4], [1.2, 0.5]])
    e = 1e-6
    dmu = (dg.bubble_profile(z, e) - dg.bubble_profile(z, -e)) / (2 * e)
    assert np.allclose(dmu, dg.kernel_value("Y0", z), atol=1e-8)


def test_psi_scale(cos_cfg):
    from bubblekit import weight as wt
    assert dg.psi_scale(cos_cfg, 0) == pytest.approx(np.pi * wt.h_eval(cos_cfg.weight, cos_cfg.table, [0, 0]))


def test_entire_spectrum_kernel_dimension():
    spec = dg.entire_spectrum()
    dim, nxt, ok = dg.kernel_dimension(spec)
    assert dim == 3 and ok and nxt > 0.1
    assert sorted(k for m, k in spec[:3]) == [0, 1, 1]


def test_flat_torus_spectrum():
    cfg = qt.BlowupConfiguration(geo.torus_table(), wt.WeightSpec(), [[0.5, 0.5]])
    for n in (32, 96):  # dense path and the shift-invert path
        f = sv.make_field(cfg, grids.TorusGrid(n), np.zeros((n, n)), 1.0)
        ev = dg.linearized_spectrum(f, k=9)
        exact = np.array([1.0] + [1 - 4 * np.pi**2] * 4 + [1 - 8 * np.pi**2] * 4)
        assert np.allclose(np.sort(ev)[::-1], exact, atol=1e-7)


def test_disk_spectrum_bounded_away():
    mins = []
    for lam in (4.0, 5.0, 6.0, 7.0):
        ev = dg.linearized_spectrum(sv.disk_radial_solve(lam).field, k=6)
        mins.append(np.min(np.abs(ev)))
    assert min(mins) > 1e-2


def test_probe_empty(disk_cfg):
    r = dg.uniqueness_probe(disk_cfg, 8 * np.pi - 1e-3, 0)
    assert r.clusters == 0 and r.members == []


def test_probe_disk_small(disk_cfg):
    rho = 8 * np.pi - 8 * np.exp(-6.0)
    r = dg.uniqueness_probe(disk_cfg, rho, 4, seed=3)
    assert r.clusters == 1 and not r.failures
    assert r.fields[0].u[0] == pytest.approx(6.0, abs=1e-6)
