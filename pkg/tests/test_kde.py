import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_density, brute_loocv
from pcdenoise.geometry import BandwidthDiag, PointCloud, scott_seed_bandwidth
from pcdenoise.kde import DensityModel, estimate_density, kernel_norm, loo_densities, loocv_log_likelihood
from pcdenoise.spatial import SpatialIndex

PEAK = (2 * np.pi) ** -1.5


def single(h=1.0, truncate=6.0):
    return DensityModel(PointCloud([[0.0, 0.0, 0.0]]), BandwidthDiag.isotropic(h), truncate=truncate)


def test_kernel_peak():
    assert estimate_density(single(), [0, 0, 0]) == pytest.approx(0.0634936, abs=5e-8)
    assert kernel_norm(BandwidthDiag.isotropic(1.0)) == pytest.approx(PEAK, rel=1e-15)


def test_unit_offset():
    # (2 pi)^(-3/2) e^(-1/2) = 0.03851083...
    got = estimate_density(single(truncate=None), [1, 0, 0])
    assert got == pytest.approx(PEAK * np.exp(-0.5), rel=1e-14)
    assert got == pytest.approx(0.0385108, abs=5e-8)


def test_far_query():
    assert estimate_density(single(), [100, 0, 0]) == 0.0
    assert estimate_density(single(truncate=None), [10, 0, 0]) < 1e-12


def test_density_non_negative():
    pts = np.random.default_rng(0).normal(size=(200, 3))
    m = DensityModel(PointCloud(pts), BandwidthDiag(0.3, 0.5, 0.2))
    q = np.random.default_rng(1).uniform(-6, 6, size=(500, 3))
    assert np.all(m.density(q) >= 0)


def test_matches_double_loop():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(300, 3)) * [1.0, 2.0, 0.5]
    h = np.array([0.4, 0.7, 0.2])
    m = DensityModel(PointCloud(pts), BandwidthDiag.from_array(h), truncate=None)
    for x in rng.normal(size=(10, 3)):
        assert m.density(x[None])[0] == pytest.approx(brute_density(pts, h, x), rel=1e-9)


def test_truncated_is_lower_bound():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(500, 3))
    bw = BandwidthDiag(0.3, 0.3, 0.3)
    q = rng.normal(size=(200, 3))
    exact = DensityModel(PointCloud(pts), bw, truncate=None).density(q)
    trunc = DensityModel(PointCloud(pts), bw).density(q)
    assert np.all(trunc <= exact)
    np.testing.assert_allclose(trunc, exact, rtol=1e-6)


def test_integrates_to_one():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(20, 3))
    m = DensityModel(PointCloud(pts), BandwidthDiag(0.5, 0.8, 0.6), truncate=None)
    lo, hi = pts.min(0) - 5, pts.max(0) + 5
    q = rng.uniform(lo, hi, size=(200_000, 3))
    integral = m.density(q).mean() * np.prod(hi - lo)
    assert integral == pytest.approx(1.0, abs=0.03)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50))
def test_translation_invariance(seed, a, b, c):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(30, 3))
    x = rng.normal(size=(1, 3))
    shift = np.array([a, b, c])
    bw = BandwidthDiag(0.5, 0.5, 0.5)
    f0 = DensityModel(PointCloud(pts), bw, truncate=None).density(x)[0]
    f1 = DensityModel(PointCloud(pts + shift), bw, truncate=None).density(x + shift)[0]
    assert abs(f1 - f0) <= 1e-12


def test_loocv_two_points():
    c = PointCloud([[0, 0, 0], [1, 0, 0]])
    L = loocv_log_likelihood(c, BandwidthDiag.isotropic(1.0), truncate=None)
    assert L == pytest.approx(np.log(PEAK * np.exp(-0.5)), rel=1e-14)
    assert L == pytest.approx(-3.2568, abs=5e-5)


def test_loocv_needs_two():
    with pytest.raises(ValueError, match="LOOCV requires at least two points"):
        loocv_log_likelihood(PointCloud([[0, 0, 0]]), BandwidthDiag.isotropic(1.0))


def test_loocv_scaling():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(200, 3))
    bw = BandwidthDiag(0.3, 0.4, 0.5)
    s = 3.7
    L0 = loocv_log_likelihood(PointCloud(pts), bw, truncate=None)
    L1 = loocv_log_likelihood(PointCloud(pts * s), BandwidthDiag.from_array(bw.as_array() * s), truncate=None)
    assert L0 - L1 == pytest.approx(3 * np.log(s), abs=1e-10)


def test_loocv_matches_oracle():
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(400, 3)) * [0.5, 1.0, 2.0]
    h = np.array([0.2, 0.35, 0.6])
    got = loocv_log_likelihood(PointCloud(pts), BandwidthDiag.from_array(h), truncate=None)
    assert got == pytest.approx(brute_loocv(pts, h), rel=1e-9)


@pytest.mark.parametrize("factor", [0.1, 0.5, 1.0, 1.5])
def test_truncated_loocv_close(factor):
    pts = np.random.default_rng(7).normal(size=(500, 3))
    c = PointCloud(pts)
    bw = BandwidthDiag.from_array(scott_seed_bandwidth(c).as_array() * factor)
    exact = loocv_log_likelihood(c, bw, truncate=None)
    trunc = loocv_log_likelihood(c, bw, SpatialIndex(c))
    assert abs(trunc - exact) < 1e-6


def test_isolated_point_exact_fallback():
    # an isolated point has nothing inside the support radius; its tail must still count
    pts = np.vstack([np.random.default_rng(8).normal(scale=0.05, size=(50, 3)), [[1.0, 0, 0]]])
    c = PointCloud(pts)
    bw = BandwidthDiag.isotropic(0.1)
    exact = loo_densities(c, bw, truncate=None)
    trunc = loo_densities(c, bw)
    assert trunc[-1] > 0
    np.testing.assert_allclose(trunc, exact, rtol=1e-6)


def test_log_floor_keeps_objective_finite():
    c = PointCloud([[0, 0, 0], [1000, 0, 0]])
    L = loocv_log_likelihood(c, BandwidthDiag.isotropic(0.01))
    assert L == pytest.approx(np.log(1e-300))


def test_eval_subset():
    pts = np.random.default_rng(9).normal(size=(100, 3))
    c = PointCloud(pts)
    bw = BandwidthDiag.isotropic(0.5)
    full = loo_densities(c, bw, truncate=None)
    sub = np.array([3, 10, 50])
    got = loocv_log_likelihood(c, bw, truncate=None, eval_index=sub)
    assert got == pytest.approx(np.log(full[sub]).mean(), rel=1e-12)


def test_isotropic_profile_single_interior_maximum():
    pts = np.random.default_rng(10).normal(size=(500, 3))
    c = PointCloud(pts)
    idx = SpatialIndex(c)
    hs = np.geomspace(0.05, 3.0, 30)
    L = np.array([loocv_log_likelihood(c, BandwidthDiag.isotropic(h), idx) for h in hs])
    peaks = [i for i in range(1, len(hs) - 1) if L[i] > L[i - 1] and L[i] > L[i + 1]]
    assert len(peaks) == 1
    assert 0 < int(np.argmax(L)) < len(hs) - 1
