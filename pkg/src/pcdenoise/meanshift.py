"""Mean-shift mode seeking on a Gaussian KDE.

Each trajectory repeats ``y <- sum_i w_i x_i / sum_i w_i`` with
``w_i = exp(-0.5 * |(y - x_i) / h|^2)`` until a step is shorter than
``eps``. Points whose trajectories end at the same mode form one cluster.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from scipy.spatial import cKDTree

from .geometry import PointCloud, bbox_diagonal
from .kde import DensityModel

UNASSIGNED = -1


class OrphanPointError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Mode index per point (``UNASSIGNED`` when no kernel reaches it)."""

    mode_of_point: np.ndarray
    modes: np.ndarray
    cluster_sizes: np.ndarray
    iterations: np.ndarray
    # length scale for linking neighboring clusters (geometric mean bandwidth)
    link_scale: Optional[float] = None

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def unassigned(self) -> np.ndarray:
        return self.mode_of_point == UNASSIGNED


def default_eps(cloud: PointCloud) -> float:
    return 1e-4 * bbox_diagonal(cloud)


def default_merge_radius(model: DensityModel) -> float:
    return 0.5 * model.bandwidth.min


def mean_shift_path(start, model: DensityModel, eps: float, max_iter: int = 200) -> np.ndarray:
    """All iterates ``y_1 = start, y_2, ...`` of one trajectory."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    y = np.asarray(start, dtype=np.float64).reshape(1, 3)
    path = [y[0].copy()]
    for _ in range(max_iter):
        s, wx = model.sums(y, weighted_mean=True)
        if not s[0] > 0:
            raise OrphanPointError("orphan point: no support")
        y_new = wx / s[:, None]
        path.append(y_new[0].copy())
        step = np.linalg.norm(y_new - y)
        y = y_new
        if step < eps:
            break
    return np.array(path)


def mean_shift_point(start, model: DensityModel, eps: float, max_iter: int = 200) -> tuple[np.ndarray, int]:
    """Follow one trajectory to its mode; returns ``(mode, iterations used)``."""
    path = mean_shift_path(start, model, eps, max_iter)
    return path[-1], len(path) - 1


def shift_all(starts: np.ndarray, model: DensityModel, eps: float, max_iter: int = 200):
    """Run every trajectory in lockstep.

    Returns ``(endpoints, iterations, orphan_mask)``; orphans keep their start
    position.
    """
    y = np.array(starts, dtype=np.float64).reshape(-1, 3)
    iters = np.zeros(len(y), dtype=np.int64)
    orphan = np.zeros(len(y), dtype=bool)
    active = np.arange(len(y))
    for _ in range(max_iter):
        if len(active) == 0:
            break
        s, wx = model.sums(y[active], weighted_mean=True)
        lost = s <= 0
        orphan[active[lost]] = True
        active, s, wx = active[~lost], s[~lost], wx[~lost]
        y_new = wx / s[:, None]
        step = np.linalg.norm(y_new - y[active], axis=1)
        y[active] = y_new
        iters[active] += 1
        active = active[step >= eps]
    return y, iters, orphan


def merge_modes(endpoints: np.ndarray, merge_radius: float, skip: Optional[np.ndarray] = None):
    """Greedy first-come grouping of endpoints in index order.

    An endpoint within ``merge_radius`` of an existing mode joins the
    nearest such mode; otherwise it founds a new mode at its own position.
    """
    if not merge_radius > 0:
        raise ValueError("merge_radius must be positive")
    labels = np.full(len(endpoints), UNASSIGNED, dtype=np.int64)
    modes: list[np.ndarray] = []
    cells: dict[tuple, list[int]] = {}
    keys = np.floor(endpoints / merge_radius).astype(np.int64)
    r2 = merge_radius * merge_radius
    offsets = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)]
    for i, e in enumerate(endpoints):
        if skip is not None and skip[i]:
            continue
        kx, ky, kz = keys[i]
        best, best_d2 = -1, r2
        for dx, dy, dz in offsets:
            for m in cells.get((kx + dx, ky + dy, kz + dz), ()):
                d = modes[m] - e
                d2 = d @ d
                if d2 < best_d2 or (d2 == best_d2 and best >= 0 and m < best):
                    best, best_d2 = m, d2
        if best < 0 or best_d2 >= r2:
            best = len(modes)
            modes.append(e.copy())
            cells.setdefault((kx, ky, kz), []).append(best)
        labels[i] = best
    return labels, np.array(modes).reshape(-1, 3)


def cluster(
    cloud: PointCloud,
    model: DensityModel,
    eps: Optional[float] = None,
    merge_radius: Optional[float] = None,
    max_iter: int = 200,
    seeds: Optional[np.ndarray] = None,
) -> ClusterAssignment:
    """Mean-shift every point of ``cloud`` and group the endpoints into modes.

    ``model`` may be built over a different (e.g. subsampled) cloud; the
    trajectories start at the points of ``cloud``. With ``seeds`` (indices
    into ``cloud``) only those points are shifted, and every other point
    takes the mode of its nearest seed in bandwidth-scaled distance. A point
    whose nearest seed is beyond the kernel support stays unassigned.
    """
    if eps is None:
        eps = default_eps(cloud)
        if eps == 0:  # a single point, or all points coincide
            eps = 1e-4 * model.bandwidth.min
    merge_radius = default_merge_radius(model) if merge_radius is None else merge_radius
    if not eps > 0:
        raise ValueError("eps must be positive")
    starts = cloud.points if seeds is None else cloud.points[seeds]
    ends, iters, orphan = shift_all(starts, model, eps, max_iter)
    labels, modes = merge_modes(ends, merge_radius, skip=orphan)
    if seeds is not None:
        labels, iters = _inherit(cloud.points, np.asarray(seeds), labels, iters, model)
    sizes = np.bincount(labels[labels >= 0], minlength=len(modes))
    link_scale = float(np.exp(np.log(model.bandwidth.as_array()).mean()))
    return ClusterAssignment(labels, modes, sizes, iters, link_scale)


def _inherit(points, seeds, seed_labels, seed_iters, model):
    inv_h = 1.0 / model.h
    dist, nearest = cKDTree(points[seeds] * inv_h).query(points * inv_h)
    labels = seed_labels[nearest]
    if model.truncate is not None:
        labels[dist >= model.truncate] = UNASSIGNED
    labels[seeds] = seed_labels
    return labels, seed_iters[nearest]
