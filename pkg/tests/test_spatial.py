import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcdenoise.geometry import PointCloud
from pcdenoise.spatial import SpatialIndex, build, knn, radius_query


def brute_knn(points, q, k):
    d = np.linalg.norm(points - q, axis=1)
    order = np.lexsort((np.arange(len(points)), d))[:k]
    return order, d[order]


def grid(n=5):
    g = np.arange(n, dtype=float)
    return np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)


def test_build_empty():
    with pytest.raises(ValueError):
        build(PointCloud(np.zeros((0, 3))))


def test_single_point():
    idx = build(PointCloud([[1.0, 2.0, 3.0]]))
    i, d = knn(idx, [5, 5, 5], 1)
    assert i.tolist() == [0]


def test_knn_matches_brute_force():
    rng = np.random.default_rng(0)
    pts = rng.uniform(size=(1000, 3))
    idx = SpatialIndex(pts)
    for q in rng.uniform(size=(100, 3)):
        i, d = idx.knn(q, 8)
        bi, bd = brute_knn(pts, q, 8)
        np.testing.assert_array_equal(i, bi)
        np.testing.assert_allclose(d, bd, rtol=1e-12)


def test_knn_self_at_zero():
    pts = np.random.default_rng(1).uniform(size=(50, 3))
    i, d = SpatialIndex(pts).knn(pts[17], 1)
    assert i[0] == 17 and d[0] == 0.0


def test_knn_grid_vertex():
    pts = grid()
    origin = np.flatnonzero((pts == [2, 2, 2]).all(1))[0]
    i, d = SpatialIndex(pts).knn(pts[origin], 7)
    assert i[0] == origin
    np.testing.assert_array_equal(d, [0, 1, 1, 1, 1, 1, 1])
    # ties resolve by lower index
    assert list(i[1:]) == sorted(i[1:])


def test_knn_too_many():
    with pytest.raises(ValueError, match="k exceeds cloud size"):
        SpatialIndex(np.zeros((3, 3))).knn([0, 0, 0], 4)


def test_duplicates_all_returned():
    pts = np.zeros((5, 3))
    i, d = SpatialIndex(pts).knn([0, 0, 0], 5)
    assert sorted(i.tolist()) == [0, 1, 2, 3, 4]
    assert i.tolist() == [0, 1, 2, 3, 4]


def test_knn_many_tie_order():
    # four points equidistant from the query: k cut inside the tie keeps lowest indices
    pts = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [5, 5, 5]], float)
    i, _ = SpatialIndex(pts).knn_many(np.zeros((1, 3)), 2)
    assert i[0].tolist() == [0, 1]


def test_radius_query_grid_corner():
    # self, three axis neighbors at 1 and three face diagonals at sqrt(2)
    i, d = radius_query(SpatialIndex(grid()), [0, 0, 0], 1.5)
    assert len(i) == 7 and d[0] == 0


def test_radius_is_strict():
    pts = np.array([[0, 0, 0], [1, 0, 0]], float)
    i, _ = SpatialIndex(pts).radius_query([0, 0, 0], 1.0)
    assert i.tolist() == [0]


def test_radius_empty_off_point():
    pts = grid()
    i, _ = SpatialIndex(pts).radius_query([0.5, 0.5, 0.5], 0.3)
    assert len(i) == 0


def test_radius_positive():
    with pytest.raises(ValueError):
        SpatialIndex(np.zeros((2, 3))).radius_query([0, 0, 0], 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 400), st.integers(0, 2**31 - 1), st.floats(0.01, 0.5))
def test_radius_matches_scan(n, seed, r):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(size=(n, 3))
    q = rng.uniform(size=3)
    i, d = SpatialIndex(pts).radius_query(q, r)
    dist = np.linalg.norm(pts - q, axis=1)
    assert set(i.tolist()) == set(np.flatnonzero(dist < r).tolist())
    assert np.all(np.diff(d) >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 400), st.integers(0, 2**31 - 1), st.data())
def test_knn_matches_scan(n, seed, data):
    rng = np.random.default_rng(seed)
    # coarse coordinates so distance ties actually happen
    pts = rng.integers(0, 4, size=(n, 3)).astype(float)
    k = data.draw(st.integers(1, n))
    q = rng.integers(0, 4, size=3).astype(float)
    i, d = SpatialIndex(pts).knn(q, k)
    bi, bd = brute_knn(pts, q, k)
    np.testing.assert_array_equal(i, bi)
    assert np.all(np.diff(d) >= 0)


def test_radius_neighbors_pairs():
    rng = np.random.default_rng(4)
    pts = rng.uniform(size=(300, 3))
    idx = SpatialIndex(pts)
    got = set()
    for qi, pj, dist in idx.radius_neighbors(pts, 0.2, chunk=64):
        got.update(zip(qi.tolist(), pj.tolist()))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    want = set(zip(*map(list, np.nonzero(d < 0.2))))
    assert got == want


def test_workers_do_not_change_answers():
    pts = np.random.default_rng(5).uniform(size=(2000, 3))
    a = SpatialIndex(pts, workers=1).knn_many(pts[:200], 10)
    b = SpatialIndex(pts, workers=4).knn_many(pts[:200], 10)
    np.testing.assert_array_equal(a[0], b[0])
