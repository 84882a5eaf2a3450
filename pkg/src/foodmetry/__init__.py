"""Metrology toolkit for reconstructed 3D food meshes.

Turns unitless reconstructions into metric meshes using a checkerboard
reference, refines them, and scores volume (MAPE) and shape (Chamfer
distance) against ground truth.
"""

from .align import (
    AlignmentResult,
    IcpParams,
    align_pipeline,
    centroid_align,
    icp,
    load_transform,
    refine_gradient,
    save_transform,
)
from .frames import (
    FrameRecord,
    KeyframeSet,
    blur_score,
    hamming,
    perceptual_hash,
    select_keyframes,
)
from .geometry import (
    AxisAlignedBox,
    PointCloud,
    RigidTransform,
    SimilarityTransform,
    TriangleMesh,
    apply_transform,
    bounding_box,
    connected_components,
    diameter,
    sample_surface,
)
from .meshio import load_mesh, save_mesh
from .metrics import (
    ChamferResult,
    VolumeResult,
    chamfer,
    chamfer_meshes,
    mape,
    mesh_volume,
)
from .refine import (
    SmoothingParams,
    SupportPlane,
    cap_base,
    estimate_support_plane,
    fill_holes,
    laplacian_smooth,
    remove_isolated_pieces,
)
from .report import DatasetManifest, EvaluationReport, run_phase1, run_phase2
from .scale import (
    CheckerboardSpec,
    DepthScaleCheck,
    ScaleEstimate,
    bbox_volume,
    detect_corners,
    estimate_scale_block_lengths,
    estimate_scale_corner_projection,
    food_height,
    mask_extent,
    pairwise_min_median,
    ppu_from_reference,
    refine_scale,
)
from .sfm import PinholeCamera, SfmBundle, nearest_projected_point, parse_bundle, project

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult", "IcpParams", "align_pipeline", "centroid_align", "icp",
    "load_transform", "refine_gradient", "save_transform",
    "FrameRecord", "KeyframeSet", "blur_score", "hamming", "perceptual_hash",
    "select_keyframes",
    "AxisAlignedBox", "PointCloud", "RigidTransform", "SimilarityTransform",
    "TriangleMesh", "apply_transform", "bounding_box", "connected_components",
    "diameter", "sample_surface",
    "load_mesh", "save_mesh",
    "ChamferResult", "VolumeResult", "chamfer", "chamfer_meshes", "mape",
    "mesh_volume",
    "SmoothingParams", "SupportPlane", "cap_base", "estimate_support_plane",
    "fill_holes", "laplacian_smooth", "remove_isolated_pieces",
    "DatasetManifest", "EvaluationReport", "run_phase1", "run_phase2",
    "CheckerboardSpec", "DepthScaleCheck", "ScaleEstimate", "bbox_volume",
    "detect_corners", "estimate_scale_block_lengths",
    "estimate_scale_corner_projection", "food_height", "mask_extent",
    "pairwise_min_median", "ppu_from_reference", "refine_scale",
    "PinholeCamera", "SfmBundle", "nearest_projected_point", "parse_bundle",
    "project",
    "__version__",
]
