"""Point cloud denoising with a PSO-tuned kernel density estimate.

Pipeline: diagonal KDE bandwidth by leave-one-out likelihood (particle swarm
search), mean-shift clustering, kNN-shift outlier removal, and bilateral
smoothing along estimated normals.
"""

from .bilateral import BilateralParams, bilateral_smooth, estimate_normals, estimate_sigma_c
from .fileio import CloudFormatError, read_cloud, write_cloud
from .geometry import (
    KEPT,
    OUTLIER,
    BandwidthDiag,
    DegenerateCloudError,
    DenoiseReport,
    EmptyCloudError,
    PointCloud,
    TriangleMesh,
    bounding_box,
    scott_seed_bandwidth,
)
from .kde import DensityModel, estimate_density, loocv_log_likelihood
from .meanshift import ClusterAssignment, cluster, mean_shift_point
from .outliers import OutlierParams, OutlierVerdict, classify_outliers, remove_outliers, shift_distances
from .pipeline import PipelineConfig, corrupt_cloud, denoise, run_pipeline, score_outlier_detection
from .pso import PSOConfig, optimize_bandwidth
from .spatial import SpatialIndex

__version__ = "0.1.0"
