"""Renderability-field toolkit.

Quantifies how well a posed multi-view capture observes every candidate
viewpoint in a scene, samples wide-baseline pseudo-views where observation
is weak, renders point-projection images for them, and evaluates novel-view
sets for stability.
"""

__version__ = "0.1.0"

from .evaluation import EvalReport, QualityScore, evaluate_set, histogram, psnr, sdp, ssim
from .field import (
    CandidateStatus,
    FieldParams,
    ObservationTable,
    PseudoViewCandidate,
    RenderabilityField,
    build_field,
    build_observation_table,
    farthest_point_sampling,
    h_ang,
    h_geo,
    h_res,
    sample_viewpoints,
    select_pseudo_views,
    six_directions,
)
from .geometry import (
    BoundingBox,
    CameraIntrinsics,
    RigidPose,
    angle_at_point,
    camera_center,
    project_point,
)
from .projection import ProjectionImage, render_pair, render_projection, resolution_sweep
from .scene_io import (
    PointCloud,
    Scene,
    SourceView,
    load_cameras,
    load_image,
    load_ply,
    load_scene,
    save_image,
    save_ply,
    voxel_downsample,
)
from .visibility import (
    ConflictParams,
    ConflictStatus,
    VoxelGrid,
    build_voxel_grid,
    frustum_select,
    hidden_point_removal,
    observation_conflict,
    segment_blocked,
)
