"""Exact kNN and radius search over a point cloud.

Backed by :class:`scipy.spatial.cKDTree` built with median splits. Results
are sorted by distance with ties broken by the lower point index, so every
query has one reproducible answer.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .geometry import EmptyCloudError, PointCloud


class SpatialIndex:
    """Immutable kd-tree over the points of a cloud."""

    def __init__(self, cloud: PointCloud | np.ndarray, leafsize: int = 16, workers: int = 1):
        points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] == 0:
            raise EmptyCloudError("cannot index an empty cloud")
        self.points = points
        self.workers = workers
        self.tree = cKDTree(points, leafsize=leafsize, balanced_tree=True, compact_nodes=True)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.n

    def knn(self, query, k: int) -> tuple[np.ndarray, np.ndarray]:
        """The ``k`` nearest points to one query as ``(indices, distances)``."""
        idx, dist = self.knn_many(np.asarray(query, dtype=np.float64).reshape(1, 3), k)
        return idx[0], dist[0]

    def knn_many(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Batched kNN; returns ``(m, k)`` index and distance arrays."""
        if k < 1:
            raise ValueError("k must be at least 1")
        if k > self.n:
            raise ValueError("k exceeds cloud size")
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        # one extra neighbor reveals ties straddling the k-th position
        kq = min(k + 1, self.n)
        dist, idx = self.tree.query(q, k=kq, workers=self.workers)
        dist = dist.reshape(len(q), kq)
        idx = idx.reshape(len(q), kq)

        order = np.lexsort((idx, dist), axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)

        if kq > k:
            boundary = np.nonzero(dist[:, k] == dist[:, k - 1])[0]
            for row in boundary:
                # pad the radius: the ball test and the kNN distance may round differently
                r = dist[row, k - 1] * (1 + 1e-9) + 1e-300
                cand = np.asarray(self.tree.query_ball_point(q[row], r), dtype=np.int64)
                d = np.linalg.norm(self.points[cand] - q[row], axis=1)
                o = np.lexsort((cand, d))[:k]
                idx[row, :k] = cand[o]
                dist[row, :k] = d[o]
        return idx[:, :k].astype(np.int64), dist[:, :k]

    def radius_query(self, query, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """Points strictly closer than ``radius``, sorted ascending."""
        if not radius > 0:
            raise ValueError("radius must be positive")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        cand = np.asarray(self.tree.query_ball_point(q, radius), dtype=np.int64)
        d = np.linalg.norm(self.points[cand] - q, axis=1)
        keep = d < radius
        cand, d = cand[keep], d[keep]
        o = np.lexsort((cand, d))
        return cand[o], d[o]

    def radius_neighbors(self, queries, radius: float, chunk: int = 8192):
        """All (query row, point index, distance) triples closer than ``radius``.

        Yields one triple of flat arrays per chunk of query rows; row numbers
        are global. Pair order inside a chunk is unspecified.
        """
        if not radius > 0:
            raise ValueError("radius must be positive")
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        for start in range(0, len(q), chunk):
            block = q[start:start + chunk]
            qtree = cKDTree(block, balanced_tree=False, compact_nodes=False)
            pairs = qtree.sparse_distance_matrix(self.tree, radius, output_type="ndarray")
            keep = pairs["v"] < radius
            yield pairs["i"][keep] + start, pairs["j"][keep], pairs["v"][keep]

    def count_within(self, queries, radius: float) -> np.ndarray:
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        return np.asarray(self.tree.query_ball_point(q, radius, workers=self.workers, return_length=True))


def build(cloud: PointCloud, workers: int = 1) -> SpatialIndex:
    return SpatialIndex(cloud, workers=workers)


def knn(index: SpatialIndex, query, k: int):
    return index.knn(query, k)


def radius_query(index: SpatialIndex, query, radius: float):
    return index.radius_query(query, radius)
