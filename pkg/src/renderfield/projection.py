"""Z-buffered point-projection rendering.

Produces the geometrically consistent images a restoration model consumes:
each map point splats a small square of its color at its projected pixel,
nearest depth wins. Pixels nobody covers stay black with a false mask bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, RigidPose, in_image_bounds, project_points
from .scene_io import PointCloud, Scene, voxel_downsample

DEPTH_TIE_EPS = 1e-9


@dataclass
class ProjectionImage:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W) meters, +inf where uncovered
    mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        if self.rgb.shape[:2] != self.depth.shape or self.depth.shape != self.mask.shape:
            raise ValueError("rgb/depth/mask dimensions disagree")
        if not np.array_equal(self.mask, np.isfinite(self.depth)):
            raise ValueError("mask must be true exactly where depth is finite")

    @property
    def coverage(self) -> float:
        return float(self.mask.mean()) if self.mask.size else 0.0


def render_projection(
    cloud: PointCloud,
    pose: RigidPose,
    K: CameraIntrinsics,
    splat_radius: int = 1,
) -> ProjectionImage:
    """Render the colored cloud from a pose with square splats.

    Every in-frustum point writes its color and depth over the
    (2*splat_radius+1)^2 pixel square centered on its nearest pixel. Per
    pixel the smallest depth wins; depths within 1e-9 of the per-pixel
    minimum count as tied and the lowest point index takes the pixel.
    """
    if splat_radius < 0:
        raise ValueError(f"splat_radius must be >= 0, got {splat_radius}")
    h, w = K.height, K.width
    rgb = np.zeros((h, w, 3))
    depth_map = np.full((h, w), np.inf)
    mask = np.zeros((h, w), dtype=bool)
    if len(cloud) == 0:
        return ProjectionImage(rgb, depth_map, mask)

    uv, depth, in_front = project_points(cloud.positions, pose, K)
    keep = np.flatnonzero(in_front & in_image_bounds(uv, K))
    if len(keep) == 0:
        return ProjectionImage(rgb, depth_map, mask)

    px = np.clip(np.rint(uv[keep, 0]).astype(np.int64), 0, w - 1)
    py = np.clip(np.rint(uv[keep, 1]).astype(np.int64), 0, h - 1)
    pdepth = depth[keep]

    if splat_radius == 0:
        flat = py * w + px
        src = keep
    else:
        span = np.arange(-splat_radius, splat_radius + 1)
        du, dv = np.meshgrid(span, span, indexing="xy")
        sx = (px[:, None] + du.reshape(-1)[None, :]).reshape(-1)
        sy = (py[:, None] + dv.reshape(-1)[None, :]).reshape(-1)
        inside = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
        flat = (sy * w + sx)[inside]
        n_off = len(span) ** 2
        src = np.repeat(keep, n_off)[inside]
        pdepth = np.repeat(pdepth, n_off)[inside]

    min_depth = np.full(h * w, np.inf)
    np.minimum.at(min_depth, flat, pdepth)
    tied = pdepth <= min_depth[flat] + DEPTH_TIE_EPS
    winner = np.full(h * w, len(cloud), dtype=np.int64)
    np.minimum.at(winner, flat[tied], src[tied])

    covered = winner < len(cloud)
    win_idx = winner[covered]
    cam_depth = (cloud.positions @ pose.R.T + pose.t)[:, 2]
    rgb.reshape(-1, 3)[covered] = cloud.colors[win_idx]
    depth_map.reshape(-1)[covered] = cam_depth[win_idx]
    mask.reshape(-1)[covered] = True
    return ProjectionImage(rgb, depth_map, mask)


def resolution_sweep(
    cloud: PointCloud,
    pose: RigidPose,
    K: CameraIntrinsics,
    cells: list[float],
    splat_radius: int = 1,
) -> list[tuple[float, ProjectionImage, float]]:
    """Render after voxel-downsampling at each cell size.

    Returns (cell, image, coverage fraction) per requested resolution.
    """
    if not cells:
        raise ValueError("cells must be nonempty")
    out = []
    for cell in cells:
        image = render_projection(voxel_downsample(cloud, cell), pose, K, splat_radius)
        out.append((cell, image, image.coverage))
    return out


def render_pair(scene: Scene, view_id: int, splat_radius: int = 1):
    """Projection rendered at a source view's own pose, with its photo.

    The pair is the training sample for a projection-to-photo restoration
    model: the projection plays the noisy input, the capture the target.
    """
    view = scene.view_by_id(view_id)
    projection = render_projection(scene.cloud, view.pose, view.intrinsics, splat_radius)
    return projection, view.image
