"""kNN-shift thresholding for outlier removal.

A point is repeatedly moved onto the centroid of its ``k`` nearest original
points. Its total displacement (the shift distance) is compared with the
shift distances of its own neighbors: a point whose shift deviates from the
neighborhood mean by more than ``tau`` neighborhood standard deviations is
an outlier. Points in tiny mean-shift clusters, and points no kernel
reaches, are outliers too.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import KEPT, OUTLIER, PointCloud, bbox_diagonal
from .meanshift import UNASSIGNED, ClusterAssignment
from .spatial import SpatialIndex


@dataclass(frozen=True)
class OutlierParams:
    k_neighbors: int = 30
    tau: float = 3.0
    min_cluster_fraction: float = 0.005
    shift_iterations: int = 3
    # "above": large deviations are outliers; "below": the literal reading
    # where small deviations are
    direction: str = "above"
    # clusters with points closer than cluster_link * geometric-mean h count as one
    # group for the size rule; 0 applies the rule to raw mean-shift clusters
    cluster_link: float = 2.0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be at least 1")
        if self.shift_iterations < 1:
            raise ValueError("shift_iterations must be at least 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.min_cluster_fraction <= 1.0:
            raise ValueError("min_cluster_fraction must lie in [0, 1]")
        if self.direction not in ("above", "below"):
            raise ValueError("direction must be 'above' or 'below'")
        if not self.cluster_link >= 0:
            raise ValueError("cluster_link must be non-negative")


@dataclass(frozen=True, eq=False)
class OutlierVerdict:
    shift_distance: np.ndarray
    neighborhood_mean_shift: np.ndarray
    neighborhood_std_shift: np.ndarray
    shift_outlier: np.ndarray
    rejected_clusters: np.ndarray
    labels: np.ndarray

    @property
    def outlier_mask(self) -> np.ndarray:
        return self.labels == OUTLIER

    @property
    def n_outliers(self) -> int:
        return int(self.outlier_mask.sum())


def neighbors_excluding_self(index: SpatialIndex, queries: np.ndarray, k: int,
                             self_index: Optional[np.ndarray] = None) -> np.ndarray:
    """``(m, k)`` nearest point indices, dropping ``self_index[i]`` from row ``i``."""
    if k >= index.n:
        raise ValueError("k_neighbors must be smaller than the cloud size")
    idx, _ = index.knn_many(queries, k + 1)
    if self_index is None:
        self_index = np.arange(len(queries))
    keep = idx != self_index[:, None]
    # rows that never met themselves drop their farthest candidate
    no_self = keep.all(axis=1)
    keep[no_self, k] = False
    return idx[keep].reshape(len(queries), k)


def shift_distances(cloud: PointCloud, index: SpatialIndex, params: OutlierParams) -> np.ndarray:
    """Distance each point travels after ``shift_iterations`` kNN re-centerings.

    Neighbors are always looked up among the original points.
    """
    if params.k_neighbors >= cloud.n:
        raise ValueError("k_neighbors must be smaller than the cloud size")
    x = cloud.points
    y = x.copy()
    own = np.arange(cloud.n)
    for _ in range(params.shift_iterations):
        nb = neighbors_excluding_self(index, y, params.k_neighbors, own)
        y = x[nb].mean(axis=1)
    return np.linalg.norm(y - x, axis=1)


def median_spacing(index: SpatialIndex, k: int = 3) -> float:
    """Median distance from a point to its ``k``-th nearest other point."""
    k = min(k, index.n - 1)
    if k < 1:
        return 0.0
    dist, _ = index.tree.query(index.tree.data, k=k + 1, workers=index.workers)
    return float(np.median(dist[:, k]))


def cluster_group_sizes(labels: np.ndarray, sizes: np.ndarray, index: SpatialIndex,
                        radius: float, small: float) -> np.ndarray:
    """Size of the linked group each cluster belongs to.

    Two clusters are linked when some pair of their points lies closer than
    ``radius``. Only clusters below ``small`` can change the outcome of the
    size rule, so only their points are queried.
    """
    m = len(sizes)
    queried = np.nonzero((labels >= 0) & (sizes[np.maximum(labels, 0)] < small))[0]
    if m == 0 or len(queried) == 0:
        return sizes.copy()
    src, dst = [], []
    for rows, cols, _ in index.radius_neighbors(index.tree.data[queried], radius):
        a, b = labels[queried[rows]], labels[cols]
        ok = (b >= 0) & (a != b)
        src.append(a[ok])
        dst.append(b[ok])
    src = np.concatenate(src) if src else np.zeros(0, np.int64)
    dst = np.concatenate(dst) if dst else np.zeros(0, np.int64)
    graph = coo_matrix((np.ones(len(src)), (src, dst)), shape=(m, m))
    _, comp = connected_components(graph, directed=False)
    return np.bincount(comp, weights=sizes, minlength=comp.max() + 1)[comp]


def classify_outliers(
    cloud: PointCloud,
    assignment: Optional[ClusterAssignment],
    index: SpatialIndex,
    params: OutlierParams = OutlierParams(),
    shifts: Optional[np.ndarray] = None,
) -> OutlierVerdict:
    """Label each point kept or outlier.

    ``assignment`` may be ``None`` to run the shift test alone.
    """
    n = cloud.n
    if shifts is None:
        shifts = shift_distances(cloud, index, params)
    nb = neighbors_excluding_self(index, cloud.points, params.k_neighbors)
    ns = shifts[nb]
    mean = ns.mean(axis=1)
    std = ns.std(axis=1)
    eps_abs = 1e-9 * bbox_diagonal(cloud)
    deviation = np.abs(shifts - mean)
    threshold = params.tau * std + eps_abs
    if params.direction == "above":
        shift_out = deviation > threshold
    else:
        shift_out = deviation < threshold

    out = shift_out.copy()
    if assignment is not None:
        labels = assignment.mode_of_point
        if len(labels) != n:
            raise ValueError("cluster assignment does not cover the cloud")
        small = params.min_cluster_fraction * n
        sizes = assignment.cluster_sizes
        if params.cluster_link > 0 and assignment.link_scale is not None:
            # never link on a scale finer than the sampling itself
            scale = max(assignment.link_scale, median_spacing(index))
            sizes = cluster_group_sizes(labels, sizes, index, params.cluster_link * scale, small)
        rejected = sizes < small
        out |= labels == UNASSIGNED
        assigned = labels != UNASSIGNED
        out[assigned] |= rejected[labels[assigned]]
    else:
        rejected = np.zeros(0, dtype=bool)

    verdict = np.where(out, OUTLIER, KEPT).astype(np.uint8)
    return OutlierVerdict(shifts, mean, std, shift_out, rejected, verdict)


def remove_outliers(cloud: PointCloud, verdict: OutlierVerdict) -> PointCloud:
    """Labeled copy of ``cloud`` restricted to kept points."""
    return cloud.with_labels(verdict.labels).kept()
