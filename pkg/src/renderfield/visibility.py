"""Point visibility and line-of-sight tests.

Three building blocks: frustum culling, hidden point removal (spherical
flipping + convex hull), and an occupancy-grid occlusion test between a
candidate viewpoint and the source camera positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .geometry import CameraIntrinsics, RigidPose, camera_center, in_image_bounds, project_points
from .scene_io import PointCloud

DEFAULT_HPR_GAMMA = 100.0


class ConflictStatus(Enum):
    VALID = "valid"
    NO_COVERAGE = "no_coverage"
    BLOCKED = "blocked"
    TOO_CLOSE = "too_close"


@dataclass(frozen=True)
class VoxelGrid:
    """Occupancy set over a uniform grid: cell index = floor((p - origin) / cell)."""

    origin: np.ndarray
    cell: float
    occupied: frozenset

    def __post_init__(self):
        if self.cell <= 0:
            raise ValueError(f"cell must be positive, got {self.cell}")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))

    def indices_of(self, points: np.ndarray) -> np.ndarray:
        return np.floor((np.asarray(points, dtype=np.float64) - self.origin) / self.cell).astype(np.int64)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Occupancy mask for an (N, 3) array of positions."""
        idx = self.indices_of(np.atleast_2d(points))
        occ = self.occupied
        return np.fromiter((tuple(row) in occ for row in idx), dtype=bool, count=len(idx))


def frustum_select(cloud: PointCloud, pose: RigidPose, K: CameraIntrinsics) -> np.ndarray:
    """Indices of points with positive depth projecting inside the image."""
    uv, _, in_front = project_points(cloud.positions, pose, K)
    return np.flatnonzero(in_front & in_image_bounds(uv, K))


def hidden_point_removal(
    cloud: PointCloud,
    subset: np.ndarray,
    viewpoint: np.ndarray,
    gamma: float = DEFAULT_HPR_GAMMA,
) -> np.ndarray:
    """Visible-point selection by spherical flipping (Katz-style).

    Points are flipped through a sphere centered at the viewpoint with
    radius gamma * (largest viewpoint distance over the whole cloud); those
    landing on the convex hull of the flipped set plus the viewpoint are
    visible. Deriving the radius from the cloud rather than the subset keeps
    the flip map fixed for a given viewpoint, which makes repeated
    application a no-op (hull vertices stay extreme in any subset).

    Returns a sorted subset of `subset`. Degenerate inputs (fewer than 4
    points, or a coplanar set the hull rejects) are treated as fully visible.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    subset = np.asarray(subset, dtype=np.int64)
    if len(subset) < 4:
        return np.sort(subset)

    viewpoint = np.asarray(viewpoint, dtype=np.float64)
    radius = gamma * float(np.max(np.linalg.norm(cloud.positions - viewpoint, axis=1)))
    if radius == 0.0:
        return np.sort(subset)
    q = cloud.positions[subset] - viewpoint
    norms = np.linalg.norm(q, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    flipped = q + 2.0 * (radius - norms)[:, None] * q / safe[:, None]

    hull_points = np.vstack([flipped, np.zeros(3)])
    try:
        hull = ConvexHull(hull_points)
    except QhullError:
        return np.sort(subset)
    vertices = hull.vertices[hull.vertices < len(subset)]
    return np.sort(subset[vertices])


def build_voxel_grid(
    cloud: PointCloud,
    subset: np.ndarray,
    cell: float,
    origin: np.ndarray = (0.0, 0.0, 0.0),
) -> VoxelGrid:
    """Occupancy grid over the selected points."""
    origin = np.asarray(origin, dtype=np.float64)
    subset = np.asarray(subset, dtype=np.int64)
    if len(subset) == 0:
        return VoxelGrid(origin=origin, cell=cell, occupied=frozenset())
    idx = np.floor((cloud.positions[subset] - origin) / cell).astype(np.int64)
    return VoxelGrid(origin=origin, cell=cell, occupied=frozenset(map(tuple, idx)))


def segment_blocked(
    grid: VoxelGrid,
    a: np.ndarray,
    b: np.ndarray,
    step: float,
    exclude_radius: float,
) -> bool:
    """True iff an occupied voxel lies on the segment between a and b.

    The segment is sampled uniformly (spacing <= step, endpoints included,
    symmetric in a and b). Samples within exclude_radius of either endpoint
    are exempt, so a camera standing next to geometry does not block itself.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    length = np.linalg.norm(b - a)
    if length == 0.0:
        return False
    n = int(np.ceil(length / step))
    ts = np.linspace(0.0, 1.0, n + 1)
    samples = a + ts[:, None] * (b - a)
    dist_a = ts * length
    dist_b = (1.0 - ts) * length
    active = (dist_a > exclude_radius) & (dist_b > exclude_radius)
    if not active.any():
        return False
    return bool(grid.contains(samples[active]).any())


@dataclass(frozen=True)
class ConflictParams:
    """Knobs for the viewpoint validity judgment."""

    min_clearance: float = 0.5
    step: float = 0.05
    exclude_radius: float = 0.1


def observation_conflict(
    pseudo_pose: RigidPose,
    source_centers: list[np.ndarray],
    grid: VoxelGrid,
    cloud: PointCloud,
    params: ConflictParams,
) -> ConflictStatus:
    """Classify a candidate viewpoint against the source capture.

    TOO_CLOSE: the camera sits nearer than min_clearance to the cloud.
    NO_COVERAGE: no source view observes any point of the candidate's sub-map.
    BLOCKED: every sight line to a source crosses occupied voxels, so the
    apparent co-visibility is geometrically false.
    """
    center = camera_center(pseudo_pose)
    if len(cloud) > 0:
        nearest = float(np.min(np.linalg.norm(cloud.positions - center, axis=1)))
        if nearest < params.min_clearance:
            return ConflictStatus.TOO_CLOSE
    if len(source_centers) == 0:
        return ConflictStatus.NO_COVERAGE
    for sc in source_centers:
        if not segment_blocked(grid, center, sc, params.step, params.exclude_radius):
            return ConflictStatus.VALID
    return ConflictStatus.BLOCKED


def median_nn_spacing(cloud: PointCloud, sample: int = 1000, seed: int = 0) -> float:
    """Median nearest-neighbor distance, estimated on a seeded point sample."""
    n = len(cloud)
    if n < 2:
        raise ValueError("need at least 2 points to estimate spacing")
    rng = np.random.default_rng(seed)
    pick = rng.choice(n, size=min(sample, n), replace=False)
    tree = cKDTree(cloud.positions)
    dists, _ = tree.query(cloud.positions[pick], k=2)
    return float(np.median(dists[:, 1]))
