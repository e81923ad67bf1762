"""Bilateral smoothing of points along their normals.

For a point ``p`` with unit normal ``n`` and neighbors ``q`` closer than
``rho = 2 * sigma_c``::

    t = <n, q - p>
    w = exp(-|q - p|^2 / (2 sigma_c^2)) * exp(-t^2 / (2 sigma_s^2))
    p' = p + n * sum(w t) / sum(w)

Every pass reads the previous pass's positions (Jacobi update), so results
do not depend on processing order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree

from .geometry import PointCloud, TriangleMesh
from .spatial import SpatialIndex

SIGMA_S_FLOOR = 1e-6


@dataclass(frozen=True)
class BilateralParams:
    sigma_c: float
    sigma_s: Optional[float] = None  # None: re-estimated every pass
    iterations: int = 3
    normal_k: int = 16
    per_point_sigma_s: bool = False

    def __post_init__(self):
        if not self.sigma_c > 0:
            raise ValueError("sigma_c must be positive")
        if self.sigma_s is not None and not self.sigma_s > 0:
            raise ValueError("sigma_s must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.normal_k < 3:
            raise ValueError("normal_k must be at least 3")

    @property
    def rho(self) -> float:
        return 2.0 * self.sigma_c


def estimate_sigma_c(source: Union[TriangleMesh, PointCloud], index: Optional[SpatialIndex] = None,
                     normal_k: int = 16) -> float:
    """Spatial scale: mean mesh edge length, or mean kNN distance for a cloud."""
    if isinstance(source, TriangleMesh):
        edges = source.edges()
        if len(edges) == 0:
            raise ValueError("empty mesh")
        v = source.vertices
        return float(np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1).mean())
    if source.n == 0:
        raise ValueError("empty cloud")
    if source.n <= normal_k:
        raise ValueError("cloud needs more than normal_k points")
    index = index or SpatialIndex(source)
    _, dist = index.knn_many(source.points, normal_k + 1)
    return float(dist[:, 1:].mean())


def _orient(points: np.ndarray, normals: np.ndarray, nb: np.ndarray) -> np.ndarray:
    """Flip normals for consistency along a minimum spanning tree of the kNN graph."""
    n, k = nb.shape
    rows = np.repeat(np.arange(n), k)
    cols = nb.ravel()
    off = rows != cols
    rows, cols = rows[off], cols[off]
    cos = np.abs(np.einsum("ij,ij->i", normals[rows], normals[cols]))
    w = 1.0 - cos + 1e-9  # csgraph treats zero weight as no edge
    graph = coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    graph = graph.maximum(graph.T)
    tree = minimum_spanning_tree(graph)
    tree = tree + tree.T
    ncomp, comp = connected_components(tree, directed=False)
    out = normals.copy()
    centroid = points.mean(axis=0)
    for c in range(ncomp):
        root = int(np.flatnonzero(comp == c)[0])
        # root faces away from the centroid; ties fall back to a positive
        # dominant component
        d = float(out[root] @ (points[root] - centroid))
        if d < 0 or (d == 0 and out[root][np.argmax(np.abs(out[root]))] < 0):
            out[root] = -out[root]
        order, pred = breadth_first_order(tree, root, directed=False)
        for node in order[1:]:
            if out[node] @ out[pred[node]] < 0:
                out[node] = -out[node]
    return out


def estimate_normals(cloud: PointCloud, index: Optional[SpatialIndex] = None, normal_k: int = 16,
                     orient: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """PCA normals from ``normal_k``-neighborhoods.

    Returns ``(normals, reliable)``. A neighborhood whose covariance has
    rank below two has no defined tangent plane and is flagged unreliable.
    """
    if not 3 <= normal_k < cloud.n:
        raise ValueError("need 3 <= normal_k < number of points")
    index = index or SpatialIndex(cloud)
    nb, _ = index.knn_many(cloud.points, normal_k)
    nbh = cloud.points[nb]
    centered = nbh - nbh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / normal_k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    reliable = evals[:, 1] > 1e-10 * scale
    if orient:
        normals = _orient(cloud.points, normals, nb)
    return normals, reliable


def _offsets(points, normals, index, rho, extra_pairs=None):
    """Neighbor pairs within ``rho`` (self excluded) and their normal offsets."""
    rows, cols = [], []
    for qi, pj, _ in index.radius_neighbors(points, rho):
        keep = qi != pj
        rows.append(qi[keep])
        cols.append(pj[keep])
    rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    if extra_pairs is not None and len(extra_pairs):
        both = np.unique(np.concatenate([np.stack([rows, cols], 1), extra_pairs]), axis=0)
        rows, cols = both[:, 0], both[:, 1]
    diff = points[cols] - points[rows]
    t = np.einsum("ij,ij->i", normals[rows], diff)
    return rows, cols, diff, t


def estimate_sigma_s(cloud: PointCloud, index: Optional[SpatialIndex], rho: float,
                     normals: Optional[np.ndarray] = None) -> float:
    """Standard deviation of all normal offsets pooled over every rho-neighborhood."""
    normals = cloud.normals if normals is None else normals
    if normals is None:
        raise ValueError("sigma_s needs normals")
    index = index or SpatialIndex(cloud)
    _, _, _, t = _offsets(cloud.points, normals, index, rho)
    if len(t) == 0:
        raise ValueError("no point has a neighbor within rho")
    return max(float(np.std(t)), SIGMA_S_FLOOR * rho / 2.0)


def _one_ring_pairs(mesh: Optional[TriangleMesh]) -> Optional[np.ndarray]:
    if mesh is None:
        return None
    e = mesh.edges()
    return np.concatenate([e, e[:, ::-1]])


def bilateral_pass(points: np.ndarray, normals: np.ndarray, reliable: np.ndarray,
                   params: BilateralParams, sigma_s: Optional[float] = None,
                   mesh: Optional[TriangleMesh] = None) -> np.ndarray:
    """One Jacobi pass; returns new positions."""
    index = SpatialIndex(points)
    rows, cols, diff, t = _offsets(points, normals, index, params.rho, _one_ring_pairs(mesh))
    n = len(points)
    if params.per_point_sigma_s and sigma_s is None:
        cnt = np.bincount(rows, minlength=n)
        mean = np.bincount(rows, weights=t, minlength=n) / np.maximum(cnt, 1)
        var = np.bincount(rows, weights=(t - mean[rows]) ** 2, minlength=n) / np.maximum(cnt, 1)
        ss = np.maximum(np.sqrt(var), SIGMA_S_FLOOR * params.sigma_c)[rows]
    else:
        if sigma_s is None:
            sigma_s = max(float(np.std(t)), SIGMA_S_FLOOR * params.sigma_c) if len(t) else 1.0
        ss = sigma_s
    d2 = np.einsum("ij,ij->i", diff, diff)
    w = np.exp(-d2 / (2 * params.sigma_c ** 2)) * np.exp(-t * t / (2 * ss * ss))
    wsum = np.bincount(rows, weights=w, minlength=n)
    wt = np.bincount(rows, weights=w * t, minlength=n)
    move = np.divide(wt, wsum, out=np.zeros(n), where=wsum > 0)
    move[~reliable] = 0.0
    return points + normals * move[:, None]


def bilateral_smooth(cloud: PointCloud, index: Optional[SpatialIndex], params: BilateralParams,
                     mesh: Optional[TriangleMesh] = None) -> PointCloud:
    """Smooth ``cloud`` for ``params.iterations`` passes.

    Uses the cloud's normals on the first pass when present and re-estimates
    normals between passes. Point count and order are preserved.
    """
    if cloud.n <= params.normal_k:
        return cloud
    pts = cloud.points.copy()
    if cloud.normals is not None:
        normals = cloud.normals
        reliable = np.ones(cloud.n, dtype=bool)
    else:
        normals, reliable = estimate_normals(cloud, index, params.normal_k)
    for it in range(params.iterations):
        if it > 0:
            normals, reliable = estimate_normals(PointCloud(pts), None, params.normal_k)
        pts = bilateral_pass(pts, normals, reliable, params, params.sigma_s, mesh)
    return PointCloud(pts, normals, cloud.labels)
