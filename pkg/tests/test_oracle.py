import math

import numpy as np
import pytest
from scipy.integrate import dblquad

from cshalo import HaloGeometry, SourceParams
from cshalo.oracle import (
    GaussianStateSpec, GaussianTerm, axis_overlap, box_integrated_c, box_overlap, classical_bound,
    fock_zone_moments, gaussian_wick_moments, pair_capture, predict_sweep, prediction_report,
    product_distribution, single_capture, thermal_cutoff, thermal_distribution,
    tmsv_joint_distribution, tmsv_moments,
)


def test_tmsv_half_occupation():
    # [DERIVED] Fock sum at n_bar = 0.5: G12 = 1, G11 = 0.5, C = 2
    m = tmsv_moments(0.5)
    assert m.G12 == pytest.approx(1.0, abs=1e-10)
    assert m.G11 == pytest.approx(0.5, abs=1e-10)
    assert m.C == pytest.approx(2.0, abs=1e-10)


@pytest.mark.parametrize("n_bar", [1e-3, 0.02, 0.5, 3.0, 40.0, 500.0])
def test_tmsv_matches_closed_form(n_bar):
    m = tmsv_moments(n_bar)
    assert m.G12 == pytest.approx(m.G12_closed, rel=1e-10)
    assert m.G11 == pytest.approx(m.G11_closed, rel=1e-10)
    assert m.C == pytest.approx(m.C_closed, rel=1e-10)
    # [PAPER] pair correlations beat the classical bound for every occupation
    assert m.G12 > classical_bound(m.G11, m.G11)


def test_tmsv_classical_limit():
    Cs = [tmsv_moments(n).C for n in (1.0, 10.0, 100.0, 1000.0)]
    assert all(c > 1 for c in Cs) and np.all(np.diff(Cs) < 0)
    assert Cs[-1] - 1 < 1e-3


def test_thermal_distribution_mass():
    for n_bar in (0.01, 1.0, 50.0):
        p = thermal_distribution(n_bar)
        assert 1 - p.sum() < 1e-12
        assert len(p) == thermal_cutoff(n_bar) + 1
    with pytest.raises(ValueError):
        thermal_cutoff(0.0)


def test_vacuum_moments():
    assert np.all(gaussian_wick_moments(GaussianStateSpec.vacuum(4), [0, 1, 1, 2]) == 0)


@pytest.mark.parametrize("n_bar", [0.02, 0.5, 2.0])
def test_wick_tmsv_closure(n_bar):
    # [DERIVED] Wick, Fock enumeration and the two-mode sum agree
    G = gaussian_wick_moments(GaussianStateSpec.tmsv(n_bar), [0, 1])
    F = fock_zone_moments(tmsv_joint_distribution(n_bar), [0, 1])
    t = tmsv_moments(n_bar)
    assert np.allclose(G, F, rtol=1e-10, atol=0)
    assert G[0, 1] == pytest.approx(t.G12, rel=1e-10)
    assert G[0, 0] == pytest.approx(t.G11, rel=1e-10)


def test_wick_two_thermal_modes_one_zone():
    # [DERIVED] ground truth is the two-mode Fock enumeration
    n = 0.7
    joint = product_distribution(thermal_distribution(n), thermal_distribution(n))
    F = fock_zone_moments(joint, [0, 0])
    G = gaussian_wick_moments(GaussianStateSpec.thermal([n, n]), [0, 0])
    assert G[0, 0] == pytest.approx(F[0, 0], rel=1e-10)
    assert G[0, 0] == pytest.approx(6 * n * n, rel=1e-12)


def test_wick_mixed_zones_vs_fock():
    # thermal modes in three zones: cross moments factorise
    occ = [0.3, 1.2, 0.5]
    joint = product_distribution(*(thermal_distribution(o) for o in occ))
    F = fock_zone_moments(joint, [0, 1, 1])
    G = gaussian_wick_moments(GaussianStateSpec.thermal(occ), [0, 1, 1])
    assert np.allclose(G, F, rtol=1e-10)


def test_unphysical_state_rejected():
    m = math.sqrt(0.5 * 1.5) * 1.2
    with pytest.raises(ValueError, match="unphysical"):
        GaussianStateSpec(np.diag([0.5, 0.5]), [[0, m], [m, 0]])
    with pytest.raises(ValueError, match="Hermitian"):
        GaussianStateSpec([[0.1, 0.2], [0.0, 0.1]], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        gaussian_wick_moments(GaussianStateSpec.vacuum(13), list(range(13)))


@pytest.mark.parametrize("L,s,d", [(1.0, 0.3, 0.0), (0.2, 0.5, 0.2), (2.0, 0.1, 2.0), (1.0, 0.3, -0.4)])
def test_axis_overlap_vs_quadrature(L, s, d):
    phi = lambda y, x: math.exp(-0.5 * ((x - y) / s) ** 2) / (s * math.sqrt(2 * math.pi))
    ref = dblquad(phi, 0, L, lambda x: d, lambda x: d + L, epsabs=1e-12)[0]
    assert axis_overlap(L, s, d) == pytest.approx(ref, rel=1e-7, abs=1e-12)


def test_box_overlap_converges_to_closed_form():
    dims, sig, off = (0.3, 0.05, 0.02), (0.04, 0.01, 0.003), (0.0, 0.05, 0.0)
    val, nodes, delta = box_overlap(dims, sig, off, rtol=1e-9)
    exact = math.prod(axis_overlap(L, s, d) for L, s, d in zip(dims, sig, off))
    assert val == pytest.approx(exact, rel=1e-8)
    assert delta <= 1e-9 and nodes >= 64


def test_pair_capture_unbounded_centres():
    # uniform centres on a wide interval reduce to the plain overlap
    for vu, vv, c in [(0.01, 0.02, 0.0), (0.01, 0.03, 0.01)]:
        width = math.sqrt(vu + vv - 2 * c)
        got = pair_capture((0.0, 0.4), (-20.0, 20.0), vu, vv, c, rtol=1e-10)
        assert got == pytest.approx(axis_overlap(0.4, width), rel=1e-8)
    assert single_capture((0.0, 0.4), (-20.0, 20.0), 0.01) == pytest.approx(0.4, rel=1e-12)


def _peak_terms(rho, h, sig):
    amp = h * rho**2 * (2 * math.pi) ** 1.5 * math.prod(sig)
    return [GaussianTerm(amp, sig)]


def test_small_zone_peak_ratio():
    # [TRIVIAL] zones far below the widths see only the peak heights
    rho, sb, sc = 50.0, (0.2, 0.2, 0.02), (0.04, 0.04, 0.002)
    for hb, hc in [(0.3, 0.45), (0.6, 0.45)]:
        dims = tuple(1e-4 * s for s in sc)
        pred = box_integrated_c(dims, rho * math.prod(dims), _peak_terms(rho, hb, sb), _peak_terms(rho, hc, sc))
        assert pred.C == pytest.approx((1 + hb) / (1 + hc), rel=1e-6)
        assert pred.violates == (hb > hc)


def test_dilution_limit_and_monotone():
    rho, sb, sc = 50.0, (0.2, 0.2, 0.02), (0.04, 0.04, 0.002)
    bb, cl = _peak_terms(rho, 0.3, sb), _peak_terms(rho, 0.45, sc)
    Cs = []
    # monotone once the zones exceed every width
    for scale in (4, 16, 64, 256):
        dims = (0.1 * scale, 0.1 * scale, 0.01 * scale)
        Cs.append(box_integrated_c(dims, rho * math.prod(dims), bb, cl).C)
    assert np.all(np.diff(Cs) < 0) and Cs[0] > 1
    assert abs(Cs[-1] - 1) < 1e-4


def test_violation_iff_bb_volume_exceeds_cl(rng):
    for _ in range(40):
        dims = tuple(rng.uniform(0.01, 1.0, 3))
        bb = [GaussianTerm(rng.uniform(0, 2), tuple(rng.uniform(0.01, 0.5, 3)))]
        cl = [GaussianTerm(rng.uniform(0, 2), tuple(rng.uniform(0.01, 0.5, 3)))]
        p = box_integrated_c(dims, rng.uniform(0, 1), bb, cl)
        assert p.violates == (p.I_BB > p.I_CL)


def test_box_integrated_validation_and_report():
    with pytest.raises(ValueError):
        box_integrated_c((0.0, 1, 1), 1.0, [], [])
    t = GaussianTerm(1.0, (0.1, 0.1, 0.1))
    with pytest.raises(ValueError, match="spreads"):
        box_integrated_c((1, 1, 1), 1.0, [t], [], confined=((0, 1), None, None))
    rep = prediction_report(box_integrated_c((1, 1, 1), 1.0, [t], [t]))
    assert rep["C"] == 1.0 and rep["quadrature_nodes"] >= 64 and "quadrature_delta" in rep


def test_predict_sweep_shape():
    pred = predict_sweep(SourceParams(), HaloGeometry(), azim_list=(2, 8, 80))
    assert pred.M.tolist() == [16, 64, 640]
    assert np.all(pred.C_opp > 1) and np.all(np.diff(pred.C_opp) > 0)
    assert np.all(pred.C_nbr <= 1)
    assert len(pred.per_band) == 24
    # more pairs per mode raise the bunching floor and lower C
    dense = predict_sweep(SourceParams(n_bar=0.2), HaloGeometry(), azim_list=(8,))
    assert dense.C_opp[0] < pred.C_opp[1]
