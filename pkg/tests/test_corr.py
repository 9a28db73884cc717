import math
import warnings

import numpy as np
import pytest

from cshalo import HaloGeometry, SourceParams, generate_dataset
from cshalo.corr import (
    BinGrid, CorrelationEstimate, accumulate_bb, accumulate_cl, accumulate_norm, correlate,
    export_fit_report, export_g2_csv, export_projection_csv, fit_correlation, fit_gaussian,
    fit_gaussian_counts, normalize, partner_shots, project_2d, reference_histogram,
)
from cshalo.pairgen import Dataset

from _reference import naive, random_shots, with_partners

SMALL = BinGrid((0.02, 0.02, 0.004), (0.1, 0.1, 0.02))


def test_bingrid_shape_and_index():
    g = BinGrid((0.1, 0.1, 0.01), (0.3, 0.32, 0.05))
    assert g.shape == (7, 7, 11)
    assert np.allclose(g.half, (0.35, 0.35, 0.055))
    assert g.bin_index([0, 0, 0]).tolist() == [[3, 3, 5]]
    assert g.bin_index([1, 0, 0])[0, 0] == -1
    with pytest.raises(ValueError):
        BinGrid((0, 1, 1), (1, 1, 1))


def test_bb_antipodal_pair():
    # [TRIVIAL] both orderings land in the dk = 0 bin
    h = accumulate_bb([np.array([[1.0, 0, 0], [-1.0, 0, 0]])], SMALL)
    assert h.sum() == 2 and h[SMALL.m] == 2


def test_single_event_gives_nothing():
    assert accumulate_bb([np.array([[1.0, 0, 0]])], SMALL).sum() == 0
    assert accumulate_cl([np.array([[1.0, 0, 0]])], SMALL).sum() == 0


def test_cl_normal_ordering():
    # [TRIVIAL] two identical events: two ordered pairs, no self-pairs
    h = accumulate_cl([np.array([[1.0, 0, 0], [1.0, 0, 0]])], SMALL)
    assert h.sum() == 2 and h[SMALL.m] == 2
    three = np.array([[0.0, 0, 0], [0.01, 0, 0], [0, 0.01, 0.001]])
    assert accumulate_cl([three], SMALL).sum() == 6


@pytest.mark.parametrize("kind", ["BB", "CL"])
def test_kernels_match_double_loop(kind, rng):
    # [DERIVED] 100 random small shots, integer equality bin for bin
    shots = random_shots(rng)
    if kind == "BB":
        shots = with_partners(shots, rng)
    acc = accumulate_bb if kind == "BB" else accumulate_cl
    ref = naive(shots, shots, kind, SMALL, True)
    assert ref.sum() > 100
    assert np.array_equal(acc(shots, SMALL), ref)
    ref2 = sum(reference_histogram(s, s, kind, SMALL, True) for s in shots)
    assert np.array_equal(ref2, ref)


@pytest.mark.parametrize("kind", ["BB", "CL"])
def test_norm_matches_double_loop(kind, rng):
    shots = random_shots(rng, n=30)
    nh = accumulate_norm(shots, SMALL, kind, n_partners=5, seed=2)
    partners = [[shots[p] for p in partner_shots(len(shots), i, 5, 2)] for i in range(len(shots))]
    flat_a = [s for i, s in enumerate(shots) for _ in partners[i]]
    flat_b = [p for ps in partners for p in ps]
    assert np.array_equal(nh.counts, naive(flat_a, flat_b, kind, SMALL, False))
    counts = np.array([len(s) for s in shots])
    assert nh.same_slots == int(np.sum(counts * (counts - 1)))
    assert nh.cross_slots == sum(len(a) * len(b) for a, b in zip(flat_a, flat_b))


def test_norm_two_single_event_shots():
    # [TRIVIAL] no same-shot pairs, two ordered cross-shot pairs
    shots = [np.array([[0.0, 0, 0]]), np.array([[0.01, 0, 0]])]
    assert accumulate_cl(shots, SMALL).sum() == 0
    nh = accumulate_norm(shots, SMALL, "CL", n_partners=1)
    assert nh.cross_slots == 2 and nh.counts.sum() == 2 and nh.same_slots == 0


def test_partner_shots():
    p = partner_shots(100, 7, 10, seed=1)
    assert len(p) == 10 == len(set(p.tolist())) and 7 not in p
    assert np.array_equal(p, partner_shots(100, 7, 10, seed=1))
    assert partner_shots(4, 2, 10, 0).tolist() == [0, 1, 3]


def test_workers_do_not_change_histograms(rng):
    shots = random_shots(rng, n=60)
    for kind in ("BB", "CL"):
        a = correlate(shots, kind, SMALL, n_partners=7, seed=3, workers=1)
        b = correlate(shots, kind, SMALL, n_partners=7, seed=3, workers=8)
        assert np.array_equal(a.raw, b.raw) and np.array_equal(a.norm, b.norm)


def test_norm_symmetric_for_cl():
    # [TRIVIAL] ordered pairs fill dk and -dk alike
    ds = generate_dataset(HaloGeometry(), SourceParams(n_shots=100, seed=4))
    nh = accumulate_norm(ds, BinGrid.cl_default(), "CL", n_partners=10)
    flipped = nh.counts[::-1, ::-1, ::-1]
    tot = nh.counts + flipped
    ok = tot > 0
    z = (nh.counts - flipped)[ok] / np.sqrt(tot[ok])
    assert abs(z.mean()) < 0.05 and z.std() < 1.2


def test_shuffled_events_are_uncorrelated():
    # [DERIVED] reassigning events to random shots destroys every correlation
    ds = generate_dataset(HaloGeometry(), SourceParams(n_shots=600, seed=8, n_bar=0.1))
    rng = np.random.default_rng(0)
    shuffled = Dataset(ds.geometry, ds.params, rng.integers(0, ds.n_shots, len(ds.k)), ds.k, ds.n_shots)
    grid = BinGrid((0.1, 0.1, 0.02), (0.15, 0.15, 0.03))
    for kind in ("CL", "BB"):
        est = correlate(shuffled, kind, grid, n_partners=20)
        # ordered pairs double the counts, so the Poisson error understates by sqrt(2)
        assert np.all(np.abs(est.g2 - 1) < 3 * math.sqrt(2) * est.g2_err)


def test_normalize_examples():
    norm = np.full((3, 3, 3), 50.0)
    g2, err, undef = normalize(norm, norm)
    assert np.all(g2 == 1) and undef == 0
    raw = norm.copy()
    raw[1, 1, 1] = 100
    assert normalize(raw, norm)[0][1, 1, 1] == 2
    norm[0, 0, 0] = 0
    g2, _, undef = normalize(raw, norm)
    assert np.isnan(g2[0, 0, 0]) and undef == 1
    with pytest.raises(ValueError, match="mismatch"):
        normalize(np.zeros((3, 3, 3)), np.zeros((3, 3, 5)))


def test_projection_constant_and_radial():
    g = BinGrid((0.01, 0.01, 0.001), (0.05, 0.05, 0.003))
    rho, z, proj = project_2d(np.full(g.shape, 1.7), g)
    assert np.allclose(proj, 1.7)
    cx, cy = g.centers(0), g.centers(1)
    f = lambda r2: 1 + np.exp(-r2 / 0.001)
    arr = np.repeat(f(cx[:, None] ** 2 + cy[None, :] ** 2)[:, :, None], g.shape[2], axis=2)
    rho, z, proj = project_2d(arr, g)
    assert np.allclose(proj, f(rho**2)[:, None])
    assert rho[0] == 0 and np.all(np.diff(rho) > 0)


def test_projected_width_equals_axis_width():
    # [DERIVED] anisotropic Gaussian, sigma_x = sigma_y: transverse fit of the projection
    g = BinGrid.cl_default()
    X, Y, Z = np.meshgrid(*(g.centers(i) for i in range(3)), indexing="ij")
    arr = 1 + 0.4 * np.exp(-(X**2 + Y**2) / (2 * 0.036**2) - Z**2 / (2 * 0.002**2))
    rho, z, proj = project_2d(arr, g)
    fit = fit_gaussian(rho, proj[:, g.m[2]])
    assert fit.sigma == pytest.approx(0.036, rel=1e-6)


def test_fit_noiseless():
    # [TRIVIAL] 4-digit recovery on an exact curve
    x = BinGrid.cl_default().centers(0)
    fit = fit_gaussian(x, 1 + 0.4 * np.exp(-x**2 / (2 * 0.036**2)))
    assert fit.ok
    assert fit.h == pytest.approx(0.4, rel=1e-4) and fit.sigma == pytest.approx(0.036, rel=1e-4)


def test_fit_flat_input():
    # [TRIVIAL] no peak: failure, or a height consistent with zero
    x = np.linspace(-0.1, 0.1, 21)
    fit = fit_gaussian(x, np.ones_like(x), np.full_like(x, 0.01))
    assert (not fit.ok) or fit.h < 2 * fit.h_err
    rng = np.random.default_rng(5)
    y = 1 + rng.normal(0, 0.01, x.shape)
    fit = fit_gaussian(x, y, np.full_like(x, 0.01))
    assert (not fit.ok) or fit.h < 2 * fit.h_err + 0.02


def test_fit_reports_too_few_points():
    assert not fit_gaussian([0, 1], [2, 1]).ok


def test_count_fit_recovers_width():
    # [DERIVED] Poisson counts from a known profile; truth inside 3 sigma
    rng = np.random.default_rng(11)
    x = np.arange(-14, 15) * 0.009
    expo = np.full(x.shape, 40.0)
    hits = 0
    for _ in range(20):
        counts = rng.poisson(expo * (1 + 0.5 * np.exp(-x**2 / (2 * 0.036**2))))
        fit = fit_gaussian_counts(x, counts, expo)
        hits += fit.ok and abs(fit.sigma - 0.036) < 3 * fit.sigma_err
    assert hits >= 18


def _synthetic_estimate(kind, sigma, h, grid, counts=1e6):
    X, Y, Z = np.meshgrid(*(grid.centers(i) for i in range(3)), indexing="ij")
    g2 = 1 + h * np.exp(-X**2 / (2 * sigma[0] ** 2) - Y**2 / (2 * sigma[1] ** 2) - Z**2 / (2 * sigma[2] ** 2))
    norm = np.full(grid.shape, int(counts), dtype=np.int64)
    raw = np.rint(norm * g2).astype(np.int64)
    return CorrelationEstimate(kind, grid, raw, norm, 1, 1, 100)


def test_fit_correlation_on_exact_peak():
    sig = (0.036, 0.036, 0.002)
    fit = fit_correlation(_synthetic_estimate("CL", sig, 0.45, BinGrid.cl_default()))
    assert fit.ok and not fit.warnings
    assert fit.sigma == pytest.approx(sig, rel=2e-3)
    assert fit.sigma_transverse == pytest.approx(0.036, rel=2e-3)
    assert fit.peak == pytest.approx(1.45, rel=1e-5)


def test_fit_correlation_warns_on_clipping():
    # [TRIVIAL] range below 3 widths: warning with the clipped fraction
    grid = BinGrid((0.009, 0.009, 0.0005), (0.06, 0.06, 0.004))
    with pytest.warns(UserWarning, match="clipped pair fraction"):
        fit = fit_correlation(_synthetic_estimate("CL", (0.036, 0.036, 0.002), 0.45, grid))
    assert fit.clipped_fraction > 0.05


def test_default_peak_ordering(default_estimates):
    # [PAPER] collinear peak above the back-to-back peak
    cl, bb = default_estimates["CL"][1], default_estimates["BB"][1]
    assert cl.transverse.h > bb.transverse.h
    assert cl.peak > bb.peak


def test_exports(tmp_path):
    est = _synthetic_estimate("CL", (0.036, 0.036, 0.002), 0.45, BinGrid.cl_default())
    meta = {"format_version": "v", "config_hash": "abc"}
    p = export_g2_csv(est, tmp_path / "g2.csv", meta)
    lines = p.read_text().splitlines()
    assert lines[:2] == ["# format_version=v", "# config_hash=abc"]
    assert lines[2] == "dkx,dky,dkz,raw,norm,g2,err"
    assert len(lines) == 3 + int(np.prod(est.grid.shape))
    p = export_projection_csv(est, tmp_path / "proj.csv", meta)
    assert p.read_text().splitlines()[2] == "dkxy,dkz,g2,err"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_correlation(est)
    text = export_fit_report(fit, tmp_path / "fit.txt", meta).read_text()
    assert "config_hash=abc" in text and "transverse.sigma=" in text
