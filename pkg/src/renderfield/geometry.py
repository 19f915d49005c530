"""Camera model, pinhole projection, and small vector helpers.

Conventions used throughout the package:
  - world and camera coordinates are float64 numpy arrays of shape (3,)
  - colors are float64 arrays of shape (3,) with channels in [0, 1]
  - the camera looks down +z, +x is image-right, +y is image-down, so a
    point is in front of the camera iff its camera-frame z is positive
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics. Focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")


@dataclass(frozen=True)
class RigidPose:
    """World-to-camera transform: x_cam = R @ x_world + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if not np.allclose(R.T @ R, np.eye(3), atol=ROTATION_TOL, rtol=0.0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise ValueError(f"rotation determinant is {np.linalg.det(R)}, expected +1")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box given by min/max corners."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)
        if np.any(lo > hi):
            raise ValueError(f"box min {lo} exceeds max {hi}")

    @staticmethod
    def of_points(points: np.ndarray) -> "BoundingBox":
        points = np.asarray(points, dtype=np.float64)
        return BoundingBox(points.min(axis=0), points.max(axis=0))


def intrinsic_matrix(K: CameraIntrinsics) -> np.ndarray:
    """3x3 pinhole matrix [[fx,0,cx],[0,fy,cy],[0,0,1]]."""
    return np.array([[K.fx, 0.0, K.cx], [0.0, K.fy, K.cy], [0.0, 0.0, 1.0]])


def project_point(p: np.ndarray, pose: RigidPose, K: CameraIntrinsics):
    """Project one world point. Returns (u, v, depth), or None if behind the camera.

    The caller is responsible for checking image bounds; this only tests that
    the depth is positive.
    """
    q = pose.R @ np.asarray(p, dtype=np.float64) + pose.t
    if q[2] <= 0.0:
        return None
    u = K.fx * q[0] / q[2] + K.cx
    v = K.fy * q[1] / q[2] + K.cy
    return u, v, q[2]


def project_points(points: np.ndarray, pose: RigidPose, K: CameraIntrinsics):
    """Vectorized projection of an (N, 3) array.

    Returns (uv, depth, in_front) where uv is (N, 2), depth is (N,), and
    in_front marks positive depth. uv rows with in_front False are undefined.
    """
    q = points @ pose.R.T + pose.t
    depth = q[:, 2]
    in_front = depth > 0.0
    safe = np.where(in_front, depth, 1.0)
    uv = np.empty((len(points), 2))
    uv[:, 0] = K.fx * q[:, 0] / safe + K.cx
    uv[:, 1] = K.fy * q[:, 1] / safe + K.cy
    return uv, depth, in_front


def in_image_bounds(uv: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Mask of projected coordinates inside [0, width) x [0, height)."""
    return (
        (uv[:, 0] >= 0.0)
        & (uv[:, 0] < K.width)
        & (uv[:, 1] >= 0.0)
        & (uv[:, 1] < K.height)
    )


def camera_center(pose: RigidPose) -> np.ndarray:
    """Camera origin in world coordinates, the solution of R p + t = 0."""
    return -pose.R.T @ pose.t


def angle_at_point(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Angle in [0, pi] subtended at p by a and b.

    Raises ValueError if a or b coincides with p (the angle is undefined).
    """
    va = np.asarray(a, dtype=np.float64) - p
    vb = np.asarray(b, dtype=np.float64) - p
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("angle undefined: endpoint coincides with vertex")
    cos = np.dot(va, vb) / (na * nb)
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def look_rotation(forward: np.ndarray, down: np.ndarray) -> np.ndarray:
    """World-to-camera rotation with the given world-frame optical axis.

    `down` fixes the roll (camera +y, i.e. image-down). Both inputs must be
    unit length and orthogonal.
    """
    f = np.asarray(forward, dtype=np.float64)
    d = np.asarray(down, dtype=np.float64)
    r = np.cross(d, f)
    return np.stack([r, d, f])


def pose_at(position: np.ndarray, R: np.ndarray) -> RigidPose:
    """Pose with the given world-to-camera rotation and camera center."""
    position = np.asarray(position, dtype=np.float64)
    return RigidPose(R=R, t=-R @ position)
