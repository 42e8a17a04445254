"""Geometry, losses, metrics and direct depth refinement for semi-supervised monocular depth."""

from .conversion import RangeError, depth_to_disparity, disparity_to_depth, map_to_depth, map_to_disparity
from .core import (
    CameraIntrinsics,
    DepthMap,
    DepthRange,
    DisparityMap,
    ErrorMap,
    ImageBuffer,
    InvariantError,
    MotionParams,
    PointCloud,
    Rigid3,
    SparseDepth,
    ValidationResult,
    validate,
)
from .geometry import (
    back_project,
    fuse_sparse_frames,
    motion_to_rigid,
    project_points,
    rigid_to_motion,
    warp_image,
)
from .losses import (
    LossBreakdown,
    LossConfig,
    NormalizerState,
    SsimConfig,
    dense_depth_loss,
    image_reconstruction_loss,
    loss_gradients,
    smoothness_loss,
    total_loss,
    transform_supervision_loss,
)
from .metrics import (
    EvalOptions,
    MetricError,
    MetricReport,
    ScaleStats,
    evaluate_dataset,
    global_scale_statistics,
    median_scale,
    silog_image,
    standard_metrics,
)
from .refine import LatentField, RefineConfig, RefineTrace, init_latent, refine_depth, scale_ambiguity_probe

__all__ = [name for name in dir() if not name.startswith("_")]
