"""Gaussian kernel density estimation with a diagonal bandwidth.

The density at ``x`` is ``(1/n) * sum_i |H|^(-1/2) K(H^(-1/2) (x - X_i))``
with the standard 3-D Gaussian ``K``. With truncation on, a data point only
contributes when its scaled offset ``|(x - X_i) / h|`` is below ``truncate``,
which turns the all-pairs sums into kd-tree neighborhood sums. For an
isotropic bandwidth that is a ball of radius ``truncate * h``; otherwise the
search runs on a kd-tree over ``X / h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import BandwidthDiag, PointCloud
from .spatial import SpatialIndex

DEFAULT_TRUNCATION = 6.0
LOG_FLOOR = 1e-300
_NORM3 = (2.0 * np.pi) ** -1.5
_PAIR_BUDGET = 4_000_000


def kernel_norm(bandwidth: BandwidthDiag) -> float:
    """``|H|^(-1/2) (2 pi)^(-3/2)``, the peak value of one kernel."""
    return _NORM3 / (bandwidth.h1 * bandwidth.h2 * bandwidth.h3)


@dataclass(frozen=True, eq=False)
class _Support:
    """Truncated-sum geometry: data and kd-tree in the metric used for the cut."""

    points: np.ndarray
    index: SpatialIndex
    scale: np.ndarray  # multiply coordinates by this to enter the tree's space
    h: np.ndarray  # bandwidth in the tree's space
    radius: float

    def sums(self, queries, exclude=None, weighted_mean=False):
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3) * self.scale
        out = kernel_sums(self.points, self.h, q, self.index, self.radius, exclude, weighted_mean)
        if weighted_mean:
            return out[0], out[1] / self.scale
        return out

    def loose_rows(self, queries, s, truncate, rel_tol):
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3) * self.scale
        return _loose_rows(self.index, q, s, self.radius, truncate, rel_tol)


def _support(points: np.ndarray, h: np.ndarray, index: Optional[SpatialIndex], truncate: float) -> _Support:
    if np.all(h == h[0]):
        if index is None:
            index = SpatialIndex(points)
        return _Support(points, index, np.ones(3), h, truncate * float(h[0]))
    inv_h = 1.0 / h
    scaled = points * inv_h
    return _Support(scaled, SpatialIndex(scaled), inv_h, np.ones(3), truncate)


def kernel_sums(
    points: np.ndarray,
    h: np.ndarray,
    queries: np.ndarray,
    index: Optional[SpatialIndex] = None,
    radius: Optional[float] = None,
    exclude: Optional[np.ndarray] = None,
    weighted_mean: bool = False,
):
    """Unnormalized kernel sums ``S(q) = sum_j exp(-0.5 * |(q - x_j) / h|^2)``.

    Parameters
    ----------
    points : (n, 3) data points.
    h : (3,) per-axis bandwidths.
    queries : (m, 3) evaluation points.
    index : kd-tree over ``points``; required when ``radius`` is given.
    radius : truncation radius; ``None`` sums over every data point.
    exclude : optional (m,) data index to leave out per query (-1 for none).
    weighted_mean : also return ``sum_j w_j x_j`` as an (m, 3) array.
    """
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    m, n = len(queries), len(points)
    inv_h = 1.0 / np.asarray(h, dtype=np.float64)
    sums = np.zeros(m)
    wx = np.zeros((m, 3)) if weighted_mean else None

    dense_rows = np.arange(m)
    if radius is not None:
        if index is None:
            raise ValueError("truncated sums need a spatial index")
        counts = index.count_within(queries, radius)
        # very wide neighborhoods are cheaper as dense blocks
        wide = counts > max(64, n // 4)
        dense_rows = np.nonzero(wide)[0]
        sparse_rows = np.nonzero(~wide & (counts > 0))[0]
        for rows in _split_by_budget(sparse_rows, counts[sparse_rows]):
            _sparse_block(points, inv_h, queries, index, radius, rows, exclude, sums, wx)

    if len(dense_rows):
        block = max(1, _PAIR_BUDGET // (2 * n))
        cut = radius is not None and radius * radius <= _max_sq_reach(points, queries[dense_rows])
        for s in range(0, len(dense_rows), block):
            rows = dense_rows[s:s + block]
            q = queries[rows]
            u = np.zeros((len(rows), n))
            d2 = np.zeros((len(rows), n)) if cut else None
            for d in range(3):
                diff = q[:, d:d + 1] - points[None, :, d]
                diff *= diff
                if cut:
                    d2 += diff
                diff *= inv_h[d] * inv_h[d]
                u += diff
            u *= -0.5
            w = np.exp(u, out=u)
            if cut:
                # match the sparse path: Euclidean cut-off
                w[d2 >= radius * radius] = 0.0
            if exclude is not None:
                ex = exclude[rows]
                ok = ex >= 0
                w[np.nonzero(ok)[0], ex[ok]] = 0.0
            sums[rows] = w.sum(axis=1)
            if wx is not None:
                wx[rows] = w @ points
    if weighted_mean:
        return sums, wx
    return sums


def _max_sq_reach(points: np.ndarray, queries: np.ndarray) -> float:
    """Upper bound on any squared query-to-point distance (box corners)."""
    lo = np.minimum(points.min(axis=0), queries.min(axis=0))
    hi = np.maximum(points.max(axis=0), queries.max(axis=0))
    return float(np.sum((hi - lo) ** 2))


def _split_by_budget(rows: np.ndarray, counts: np.ndarray):
    if len(rows) == 0:
        return
    cum = np.cumsum(counts)
    start = 0
    while start < len(rows):
        base = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, base + _PAIR_BUDGET, side="right"))
        stop = max(stop, start + 1)
        yield rows[start:stop]
        start = stop


def _sparse_block(points, inv_h, queries, index, radius, rows, exclude, sums, wx):
    for qi, pj, _ in index.radius_neighbors(queries[rows], radius, chunk=len(rows)):
        if exclude is not None:
            keep = pj != exclude[rows][qi]
            qi, pj = qi[keep], pj[keep]
        diff = (queries[rows][qi] - points[pj]) * inv_h
        w = np.exp(-0.5 * np.einsum("ij,ij->i", diff, diff))
        sums[rows] += np.bincount(qi, weights=w, minlength=len(rows))
        if wx is not None:
            for d in range(3):
                wx[rows, d] += np.bincount(qi, weights=w * points[pj, d], minlength=len(rows))


@dataclass(frozen=True, eq=False)
class DensityModel:
    """A KDE over ``cloud`` with a fixed diagonal bandwidth.

    ``truncate`` is the kernel support in bandwidth units (a point counts
    while ``|(q - x) / h| < truncate``); ``None`` disables truncation (exact
    all-pairs sums).
    """

    cloud: PointCloud
    bandwidth: BandwidthDiag
    index: Optional[SpatialIndex] = None
    truncate: Optional[float] = DEFAULT_TRUNCATION
    _support: Optional[_Support] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.cloud.n < 1:
            raise ValueError("density model needs at least one point")
        if not isinstance(self.bandwidth, BandwidthDiag):
            raise TypeError("bandwidth must be a BandwidthDiag")
        if self.truncate is not None and not self.truncate > 0:
            raise ValueError("truncation multiplier must be positive")
        if self.index is None and self.truncate is not None:
            object.__setattr__(self, "index", SpatialIndex(self.cloud))
        support = None
        if self.truncate is not None:
            support = _support(self.cloud.points, self.h, self.index, self.truncate)
        object.__setattr__(self, "_support", support)

    @property
    def h(self) -> np.ndarray:
        return self.bandwidth.as_array()

    def sums(self, queries, exclude=None, weighted_mean=False):
        if self._support is None:
            return kernel_sums(self.cloud.points, self.h, queries,
                               exclude=exclude, weighted_mean=weighted_mean)
        return self._support.sums(queries, exclude, weighted_mean)

    def density(self, queries, rel_tol: float = 5e-7) -> np.ndarray:
        """Density at each row of ``queries``.

        With truncation on, rows whose tail bound exceeds ``rel_tol`` of the
        truncated value are recomputed over every point, so the result stays
        a lower bound within ``rel_tol`` relative of the exact density.
        """
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        s = self.sums(q)
        if self.truncate is not None and len(q):
            loose = self._support.loose_rows(q, s, self.truncate, rel_tol)
            if len(loose):
                s[loose] = kernel_sums(self.cloud.points, self.h, q[loose])
        return kernel_norm(self.bandwidth) / self.cloud.n * s


def estimate_density(model: DensityModel, x) -> float:
    return float(model.density(np.asarray(x, dtype=np.float64).reshape(1, 3))[0])


def _loose_rows(index: SpatialIndex, queries: np.ndarray, s: np.ndarray, radius: float,
                truncate: float, rel_tol: float) -> np.ndarray:
    """Rows whose truncated sum may be off by more than ``rel_tol`` relative.

    A point between one and two support radii contributes at most
    ``exp(-truncate**2 / 2)``, one further out at most ``exp(-2 * truncate**2)``.
    """
    inner = index.count_within(queries, radius)
    outer = index.count_within(queries, 2.0 * radius)
    bound = ((outer - inner) * np.exp(-0.5 * truncate**2)
             + (index.n - outer) * np.exp(-2.0 * truncate**2))
    return np.nonzero(bound > rel_tol * s)[0]


def loo_densities(
    cloud: PointCloud,
    bandwidth: BandwidthDiag,
    index: Optional[SpatialIndex] = None,
    truncate: Optional[float] = DEFAULT_TRUNCATION,
    eval_index: Optional[np.ndarray] = None,
    rel_tol: float = 5e-7,
) -> np.ndarray:
    """Leave-one-out densities ``f_{-i}(x_i)`` for each evaluated point.

    With truncation, a point between one and two support radii contributes
    at most ``exp(-truncate**2 / 2)`` and one further out at most
    ``exp(-2 * truncate**2)``. Rows whose resulting error bound exceeds
    ``rel_tol`` of the truncated sum (isolated points, mostly) are
    recomputed over all points.
    """
    n = cloud.n
    if n < 2:
        raise ValueError("LOOCV requires at least two points")
    pts = cloud.points
    ev = np.arange(n) if eval_index is None else np.asarray(eval_index, dtype=np.int64)
    h = bandwidth.as_array()
    if truncate is None:
        return kernel_norm(bandwidth) / (n - 1) * kernel_sums(pts, h, pts[ev], exclude=ev)
    support = _support(pts, h, index, truncate)
    s = support.sums(pts[ev], exclude=ev)
    loose = support.loose_rows(pts[ev], s, truncate, rel_tol)
    if len(loose):
        s[loose] = kernel_sums(pts, h, pts[ev[loose]], exclude=ev[loose])
    return kernel_norm(bandwidth) / (n - 1) * s


def loocv_log_likelihood(
    cloud: PointCloud,
    bandwidth: BandwidthDiag,
    index: Optional[SpatialIndex] = None,
    truncate: Optional[float] = DEFAULT_TRUNCATION,
    eval_index: Optional[np.ndarray] = None,
) -> float:
    """Mean log leave-one-out density; larger is better.

    ``eval_index`` restricts the mean to a subset of points (each still
    scored against all other points of the cloud).
    """
    f = loo_densities(cloud, bandwidth, index, truncate, eval_index)
    return float(np.mean(np.log(np.maximum(f, LOG_FLOOR))))
