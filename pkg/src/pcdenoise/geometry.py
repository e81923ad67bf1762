"""Value types shared by every stage of the denoising pipeline.

Points are stored as ``(n, 3)`` float64 arrays; a single point is any
length-3 array-like.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

KEPT = 0
OUTLIER = 1


class EmptyCloudError(ValueError):
    pass


class DegenerateCloudError(ValueError):
    pass


def _as_points(points) -> np.ndarray:
    pts = np.array(points, dtype=np.float64, copy=True)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
    return pts


def _frozen(a: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if a is not None:
        a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered set of 3D points with optional normals and labels.

    ``labels`` holds ``KEPT`` (0) or ``OUTLIER`` (1) per point.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = _as_points(self.points)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))

        if self.normals is not None:
            nrm = _as_points(self.normals)
            if nrm.shape != pts.shape:
                raise ValueError("normals must align with points")
            norms = np.linalg.norm(nrm, axis=1)
            if not np.all(np.abs(norms - 1.0) <= 1e-6):
                raise ValueError("normals must have unit length")
            object.__setattr__(self, "normals", _frozen(nrm))

        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.uint8, copy=True).ravel()
            if lab.shape[0] != pts.shape[0]:
                raise ValueError("labels must align with points")
            if np.any(lab > OUTLIER):
                raise ValueError("labels must be 0 (kept) or 1 (outlier)")
            object.__setattr__(self, "labels", _frozen(lab))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def with_normals(self, normals) -> "PointCloud":
        return PointCloud(self.points, normals, self.labels)

    def with_labels(self, labels) -> "PointCloud":
        return PointCloud(self.points, self.normals, labels)

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, None, self.labels)

    def subset(self, mask_or_index) -> "PointCloud":
        idx = np.asarray(mask_or_index)
        return PointCloud(
            self.points[idx],
            None if self.normals is None else self.normals[idx],
            None if self.labels is None else self.labels[idx],
        )

    def kept(self) -> "PointCloud":
        """Points not labeled as outliers (all points when unlabeled)."""
        if self.labels is None:
            return self
        return self.subset(self.labels == KEPT)


@dataclass(frozen=True)
class BandwidthDiag:
    """Diagonal Gaussian bandwidth ``H = diag(h1**2, h2**2, h3**2)``."""

    h1: float
    h2: float
    h3: float

    def __post_init__(self):
        for name in ("h1", "h2", "h3"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0.0:
                raise ValueError(f"bandwidth {name} must be positive and finite, got {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def from_array(cls, h) -> "BandwidthDiag":
        h = np.asarray(h, dtype=np.float64).ravel()
        if h.size == 1:
            h = np.repeat(h, 3)
        if h.size != 3:
            raise ValueError("bandwidth needs three components")
        return cls(*h)

    @classmethod
    def isotropic(cls, h: float) -> "BandwidthDiag":
        return cls(h, h, h)

    def as_array(self) -> np.ndarray:
        return np.array([self.h1, self.h2, self.h3])

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.as_array() ** 2)

    @property
    def det(self) -> float:
        return float((self.h1 * self.h2 * self.h3) ** 2)

    @property
    def max(self) -> float:
        return max(self.h1, self.h2, self.h3)

    @property
    def min(self) -> float:
        return min(self.h1, self.h2, self.h3)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _as_points(self.vertices)
        f = np.array(self.faces, dtype=np.int64, copy=True)
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError("faces must be vertex-index triples")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("degenerate face (repeated vertex index)")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        if len(self.faces) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)


@dataclass
class DenoiseReport:
    """Per-run summary: counts, stage timings and effective parameters."""

    input_count: int
    filtered_count: int
    t_bandwidth: float = 0.0
    t_outlier: float = 0.0
    t_smooth: float = 0.0
    chosen_bandwidth: Optional[BandwidthDiag] = None
    stage_parameters: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.input_count < 0 or self.filtered_count < 0:
            raise ValueError("counts must be non-negative")
        if self.filtered_count > self.input_count:
            raise ValueError("filtered_count cannot exceed input_count")


def bounding_box(cloud: PointCloud) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise (min, max) corners of the cloud."""
    if cloud.n == 0:
        raise EmptyCloudError("empty input")
    return cloud.points.min(axis=0), cloud.points.max(axis=0)


def bbox_diagonal(cloud: PointCloud) -> float:
    lo, hi = bounding_box(cloud)
    return float(np.linalg.norm(hi - lo))


def scott_seed_bandwidth(cloud: PointCloud) -> BandwidthDiag:
    """Rule-of-thumb bandwidth ``h_d = sigma_d * n**(-1/7)``.

    ``sigma_d`` is the population standard deviation on axis ``d``. Axes
    with zero spread borrow the largest spread of the other axes.
    """
    n = cloud.n
    if n < 2:
        raise DegenerateCloudError("scott_seed_bandwidth needs at least two points")
    sigma = cloud.points.std(axis=0)
    if not np.any(sigma > 0):
        raise DegenerateCloudError("degenerate cloud: zero variance")
    sigma = np.where(sigma > 0, sigma, sigma.max())
    return BandwidthDiag.from_array(sigma * n ** (-1.0 / 7.0))
