"""Deterministic video curation for camera-pose learning.

Multi-signal suitability filtering, dynamic-region masking, tracklet
correspondence, global structure-from-motion, trajectory/epipolar evaluation,
and a synthetic dynamic-scene generator used as ground-truth oracle.
"""

from .errors import (
    DegenerateGeometry,
    DimensionMismatch,
    DynsfmError,
    EmptyGraph,
    InsufficientParallax,
    InvalidInput,
    NoConsensus,
    ParseError,
    TooFewMatches,
)
from .evalmetrics import (
    AnnotatedPair,
    SampsonReport,
    TrajectoryReport,
    ate,
    correspondence_gate,
    evaluate_trajectory,
    fill_trajectory,
    random_fill,
    rpe,
    sampson_accuracy,
    sampson_eval,
)
from .filtering import (
    CascadeConfig,
    CascadeDecision,
    FilterConfig,
    FilterScore,
    FilterSignals,
    PRPoint,
    aggregate,
    average_precision,
    cascade,
    pr_curve,
    score_video,
)
from .geometry import (
    Intrinsics,
    Pose,
    Similarity,
    Trajectory,
    relative_pose,
    rotation_angle_deg,
    triangulate_nview,
    triangulation_angle_deg,
    umeyama_align,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .masking import (
    DynamicMask,
    FlowField,
    MaskingConfig,
    estimate_fundamental_ransac,
    hold_propagate,
    motion_segment,
    semantic_class_filter,
    union_masks,
)
from .pipeline_io import PipelineConfig, read_config, write_config
from .sfm import (
    Landmark,
    SceneModel,
    SfmConfig,
    ViewGraph,
    build_view_graph,
    bundle_adjust,
    position_averaging,
    quality_filter,
    rotation_averaging,
    run_pipeline,
    triangulate_landmarks,
)
from .synthbench import (
    SynthConfig,
    SynthScene,
    SynthTracks,
    gen_scene,
    make_filter_fixture,
    project_tracks,
)
from .tracking import (
    CorrespondenceSet,
    Tracklet,
    extract_correspondences,
    seed_grid,
    track_statistics,
    window_schedule,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedPair",
    "CascadeConfig",
    "CascadeDecision",
    "CorrespondenceSet",
    "DegenerateGeometry",
    "DimensionMismatch",
    "DynamicMask",
    "DynsfmError",
    "EmptyGraph",
    "FilterConfig",
    "FilterScore",
    "FilterSignals",
    "FlowField",
    "InsufficientParallax",
    "Intrinsics",
    "InvalidInput",
    "KERNEL_BACKEND",
    "Landmark",
    "MaskingConfig",
    "NoConsensus",
    "ParseError",
    "PipelineConfig",
    "Pose",
    "PRPoint",
    "SampsonReport",
    "SceneModel",
    "SfmConfig",
    "Similarity",
    "SynthConfig",
    "SynthScene",
    "SynthTracks",
    "TooFewMatches",
    "Tracklet",
    "Trajectory",
    "TrajectoryReport",
    "ViewGraph",
    "aggregate",
    "ate",
    "average_precision",
    "build_view_graph",
    "bundle_adjust",
    "cascade",
    "correspondence_gate",
    "estimate_fundamental_ransac",
    "evaluate_trajectory",
    "extract_correspondences",
    "fill_trajectory",
    "gen_scene",
    "hold_propagate",
    "make_filter_fixture",
    "motion_segment",
    "position_averaging",
    "pr_curve",
    "project_tracks",
    "quality_filter",
    "random_fill",
    "read_config",
    "relative_pose",
    "rotation_angle_deg",
    "rotation_averaging",
    "rpe",
    "run_pipeline",
    "sampson_accuracy",
    "sampson_eval",
    "score_video",
    "seed_grid",
    "semantic_class_filter",
    "track_statistics",
    "triangulate_landmarks",
    "triangulate_nview",
    "triangulation_angle_deg",
    "umeyama_align",
    "union_masks",
    "window_schedule",
]
