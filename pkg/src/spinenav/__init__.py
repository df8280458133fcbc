"""Toolkit for MRI-derived AR spinal navigation.

Mesh smoothing and shell Dice scoring, fiducial marker tracking with
single/dual-marker overlays, and a seeded insertion-trial simulator.
"""

from .geometry import (
    Aabb,
    RigidTransform,
    SimilarityTransform,
    STLParseError,
    TriangleMesh,
    parse_stl,
    write_stl,
)
from .optimizer import DEFAULT_GRID, GridResult, GridSpec, export_best, optimize
from .overlay import FiducialLayout, OverlayMode, dual_marker_overlay, overlay_step, single_marker_overlay
from .simulator import Guidance, Scenario, default_scenario, run_trials, summarize, summarize_counts
from .smoothing import SmoothingParams, build_knn_graph, laplacian_smooth
from .tracking import (
    CameraIntrinsics,
    MarkerObservation,
    MarkerSpec,
    TrackerConfig,
    estimate_marker_pose,
    smooth_pose,
    tracker_step,
)
from .voxel import VoxelGrid, dice_shell, voxelize_surface

__version__ = "0.1.0"
