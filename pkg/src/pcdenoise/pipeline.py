"""End-to-end denoising: load, bandwidth, cluster, outlier removal, smoothing, save.

Also the synthetic corruption generator and the precision/recall scorer used
to benchmark the outlier stage.
"""

from __future__ import annotations

import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .bilateral import BilateralParams, bilateral_smooth, estimate_sigma_c
from .fileio import read_cloud, write_cloud, write_report_csv
from .geometry import KEPT, OUTLIER, DenoiseReport, PointCloud, bounding_box
from .kde import DensityModel
from .meanshift import cluster
from .outliers import OutlierParams, OutlierVerdict, classify_outliers
from .pso import PSOConfig, optimize_bandwidth
from .spatial import SpatialIndex

STAGES = ("full", "bandwidth", "outliers", "smooth")


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    input: str
    output: str
    stages: str = "full"
    seed: int = 0
    threads: int = 1
    report: Optional[str] = None
    cost_history: Optional[str] = None
    labeled_output: Optional[str] = None
    # bandwidth
    pso_iterations: int = 50
    pso_stagnation_k: int = 5
    bandwidth_sample: Optional[int] = 50_000
    bandwidth_eval_points: Optional[int] = 1_000
    # outliers
    k_neighbors: int = 30
    tau: float = 3.0
    min_cluster_fraction: float = 0.005
    shift_iterations: int = 3
    direction: str = "above"
    cluster_link: float = 2.0
    # smoothing
    sigma_c: Optional[float] = None
    sigma_s: Optional[float] = None  # None means auto
    smooth_iterations: int = 3
    normal_k: int = 16

    def __post_init__(self):
        if self.stages not in STAGES:
            raise ValueError(f"stages must be one of {', '.join(STAGES)}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.bandwidth_sample is not None and self.bandwidth_sample < 2:
            raise ValueError("bandwidth_sample must be at least 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def runs_bandwidth(self) -> bool:
        return self.stages in ("full", "bandwidth", "outliers")

    @property
    def runs_outliers(self) -> bool:
        return self.stages in ("full", "outliers")

    @property
    def runs_smoothing(self) -> bool:
        return self.stages in ("full", "smooth")

    def outlier_params(self) -> OutlierParams:
        return OutlierParams(self.k_neighbors, self.tau, self.min_cluster_fraction,
                             self.shift_iterations, self.direction, self.cluster_link)


@dataclass
class PipelineResult:
    report: DenoiseReport
    output: PointCloud
    labels: np.ndarray
    bandwidth_search: object = None
    verdict: Optional[OutlierVerdict] = None
    extras: dict = field(default_factory=dict)


def subsample_index(n: int, size: Optional[int], seed) -> Optional[np.ndarray]:
    """Sorted uniform subsample of ``range(n)``, or ``None`` when no subsampling applies."""
    if size is None or size >= n:
        return None
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=size, replace=False))


def denoise(cloud: PointCloud, config: PipelineConfig, mesh=None) -> PipelineResult:
    """Run the enabled stages on an in-memory cloud (no file I/O)."""
    n = cloud.n
    params = {"config": config.to_dict()}
    labels = np.full(n, KEPT, dtype=np.uint8)
    search = verdict = None
    t_h = t_f = t_s = 0.0
    bandwidth = None

    index = SpatialIndex(cloud, workers=config.threads)
    sample = subsample_index(n, config.bandwidth_sample, config.seed)
    sample_cloud = cloud if sample is None else cloud.subset(sample)
    sample_index = index if sample is None else SpatialIndex(sample_cloud, workers=config.threads)

    if config.runs_bandwidth:
        t0 = time.perf_counter()
        try:
            search = optimize_bandwidth(sample_cloud, PSOConfig(
                iterations=config.pso_iterations, stagnation_k=config.pso_stagnation_k,
                seed=config.seed, eval_points=config.bandwidth_eval_points), sample_index)
        except ValueError as exc:
            raise PipelineError("bandwidth", str(exc)) from exc
        bandwidth = search.bandwidth
        t_h = time.perf_counter() - t0
        params["bandwidth_sample_size"] = sample_cloud.n
        params["pso_evaluations"] = search.result.evaluations
        params["pso_final_population"] = int(search.result.population_history[-1])

    if config.runs_outliers:
        t0 = time.perf_counter()
        try:
            # the density model lives on the same sample the bandwidth was tuned
            # for, and only those points start trajectories
            model = DensityModel(sample_cloud, bandwidth, sample_index)
            assignment = cluster(cloud, model, seeds=sample)
            verdict = classify_outliers(cloud, assignment, index, config.outlier_params())
        except ValueError as exc:
            raise PipelineError("outliers", str(exc)) from exc
        labels = verdict.labels
        t_f = time.perf_counter() - t0
        params["modes"] = assignment.n_modes
        params["unassigned"] = int(assignment.unassigned.sum())
        params["shift_outliers"] = int(verdict.shift_outlier.sum())
        params["rejected_clusters"] = int(verdict.rejected_clusters.sum())

    kept = cloud.with_labels(labels).kept()
    out = kept
    if config.runs_smoothing:
        t0 = time.perf_counter()
        try:
            use_mesh = mesh if (mesh is not None and kept.n == n) else None
            kept_index = index if kept.n == n else SpatialIndex(kept, workers=config.threads)
            sigma_c = config.sigma_c or estimate_sigma_c(use_mesh or kept, kept_index, config.normal_k)
            bp = BilateralParams(sigma_c, config.sigma_s, config.smooth_iterations, config.normal_k)
            out = bilateral_smooth(kept, kept_index, bp, use_mesh)
        except ValueError as exc:
            raise PipelineError("smooth", str(exc)) from exc
        t_s = time.perf_counter() - t0
        params["sigma_c"] = sigma_c
    params["float_reduction_note"] = (
        "single thread: bit-reproducible" if config.threads == 1
        else "multi-thread: labels reproducible, coordinates may differ in the last digit")

    report = DenoiseReport(n, out.n, t_h, t_f, t_s, bandwidth, params)
    return PipelineResult(report, out, labels, search, verdict)


def _atomic_write(path, writer):
    """Write through a temporary file so a failure never clobbers ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    suffix = os.path.splitext(path)[1]
    fd, tmp = tempfile.mkstemp(dir=d, suffix=suffix)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_pipeline(config: PipelineConfig) -> DenoiseReport:
    """Read ``config.input``, denoise, and write every requested artifact."""
    try:
        cloud, mesh, load = read_cloud(config.input)
    except (OSError, ValueError) as exc:
        raise PipelineError("load", str(exc)) from exc
    result = denoise(PointCloud(cloud.points, cloud.normals), config, mesh)
    report = result.report
    report.stage_parameters["rejected_input_rows"] = load.rejected_rows

    try:
        _atomic_write(config.output, lambda p: write_cloud(result.output, p, format=_fmt(config.output)))
        if config.labeled_output:
            labeled = PointCloud(cloud.points, cloud.normals, result.labels)
            _atomic_write(config.labeled_output,
                          lambda p: write_cloud(labeled, p, format=_fmt(config.labeled_output),
                                                include_labels=True))
        if config.cost_history and result.bandwidth_search is not None:
            _atomic_write(config.cost_history, result.bandwidth_search.result.write_csv)
        if config.report:
            _atomic_write(config.report, lambda p: write_report_csv(report, p))
    except (OSError, ValueError) as exc:
        raise PipelineError("save", str(exc)) from exc
    return report


def _fmt(path) -> Optional[str]:
    ext = os.path.splitext(os.fspath(path))[1].lower().lstrip(".")
    return ext if ext in ("ply", "obj", "xyz") else None


# ---------------------------------------------------------------- benchmark helpers

def corrupt_cloud(clean: PointCloud, noise_sigma: float = 0.0, outlier_fraction: float = 0.05,
                  bbox_inflation: float = 0.1, seed=None) -> tuple[PointCloud, np.ndarray]:
    """Jitter every point and append uniform outliers.

    Adds isotropic Gaussian noise of std ``noise_sigma`` to each clean point,
    then appends ``ceil(outlier_fraction * n)`` points uniform in the bounding
    box grown by ``bbox_inflation`` times its extent on every side. Returns
    the corrupted cloud and ground-truth labels (1 = outlier).
    """
    if not 0.0 <= outlier_fraction < 1.0:
        raise ValueError("outlier_fraction must lie in [0, 1)")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    if bbox_inflation < 0:
        raise ValueError("bbox_inflation must be non-negative")
    rng = np.random.default_rng(seed)
    pts = clean.points.copy()
    if noise_sigma > 0:
        pts += rng.normal(0.0, noise_sigma, size=pts.shape)
    m = math.ceil(outlier_fraction * clean.n)
    lo, hi = bounding_box(clean)
    ext = hi - lo
    lo, hi = lo - bbox_inflation * ext, hi + bbox_inflation * ext
    extra = rng.uniform(lo, hi, size=(m, 3))
    truth = np.concatenate([np.zeros(clean.n, np.uint8), np.ones(m, np.uint8)])
    return PointCloud(np.vstack([pts, extra])), truth


@dataclass(frozen=True)
class DetectionScore:
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    false_negatives: int
    undefined: tuple = ()  # names of ratios whose denominator was zero (reported as 0)

    def as_dict(self) -> dict:
        return asdict(self)


def score_outlier_detection(verdict: Union[OutlierVerdict, np.ndarray], truth) -> DetectionScore:
    """Precision, recall and F1 of the outlier class."""
    pred = verdict.labels if isinstance(verdict, OutlierVerdict) else np.asarray(verdict)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {len(pred)} verdicts vs {len(truth)} truth labels")
    p = pred == OUTLIER
    t = truth == OUTLIER
    tp, fp, fn = int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & t))
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    f1 = ratio(2 * precision * recall, precision + recall, "f1")
    return DetectionScore(precision, recall, f1, tp, fp, fn, tuple(undefined))
