"""Scene loading and serialization.

Handles the three on-disk artifacts a scene is assembled from:
  - PLY point clouds (ascii or binary_little_endian, float xyz + uchar rgb)
  - camera manifests (JSON, or COLMAP text models with PINHOLE cameras)
  - 8-bit images (PNG via Pillow, binary PPM natively)

Colors are normalized to [0, 1] on load and only converted back to 8-bit
at the file boundary. Positions are stored as float32 in PLY files per
convention; all in-memory math is float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, RigidPose


class PlyParseError(ValueError):
    """Malformed or unsupported PLY content."""


class ManifestError(ValueError):
    """Malformed camera manifest or COLMAP model."""


@dataclass
class PointCloud:
    """Colored point set: positions (N, 3) float64, colors (N, 3) in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) != len(self.colors):
            raise ValueError(
                f"positions/colors length mismatch: {len(self.positions)} vs {len(self.colors)}"
            )

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class SourceView:
    """A posed captured image."""

    id: int
    pose: RigidPose
    intrinsics: CameraIntrinsics
    image: np.ndarray  # (height, width, 3) in [0, 1]

    def __post_init__(self):
        h, w = self.image.shape[:2]
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise ValueError(
                f"view {self.id}: image is {w}x{h} but intrinsics say "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )


@dataclass
class Scene:
    """Immutable world model: the point-cloud map plus all source views."""

    cloud: PointCloud
    views: list[SourceView] = field(default_factory=list)

    def __post_init__(self):
        ids = [v.id for v in self.views]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate view ids in scene")

    def view_by_id(self, view_id: int) -> SourceView:
        for v in self.views:
            if v.id == view_id:
                return v
        raise KeyError(f"no view with id {view_id}")


# ---------------------------------------------------------------------------
# PLY


_PLY_FLOAT_NAMES = {"float", "float32"}
_PLY_UCHAR_NAMES = {"uchar", "uint8"}


def load_ply(path) -> PointCloud:
    """Read a PLY vertex cloud with x,y,z (float) and red,green,blue (uchar)."""
    path = Path(path)
    raw = path.read_bytes()

    end_marker = b"end_header\n"
    end = raw.find(end_marker)
    if end < 0:
        raise PlyParseError(f"{path}: no end_header found")
    header_len = end + len(end_marker)
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()

    if not header_lines or header_lines[0].strip() != "ply":
        raise PlyParseError(f"{path}: missing 'ply' magic at byte 0")

    fmt = None
    count = None
    properties: list[tuple[str, str]] = []  # (type, name)
    in_vertex = False
    for line in header_lines[1:]:
        tokens = line.strip().split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            if tokens[1] == "vertex":
                count = int(tokens[2])
                in_vertex = True
            else:
                in_vertex = False
        elif tokens[0] == "property" and in_vertex:
            properties.append((tokens[1], tokens[2]))

    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyParseError(f"{path}: unsupported format '{fmt}'")
    if count is None:
        raise PlyParseError(f"{path}: no vertex element in header")

    names = [name for _, name in properties]
    for required in ("x", "y", "z", "red", "green", "blue"):
        if required not in names:
            raise PlyParseError(f"{path}: missing vertex property '{required}'")
    for ptype, name in properties:
        if name in ("x", "y", "z") and ptype not in _PLY_FLOAT_NAMES:
            raise PlyParseError(f"{path}: property '{name}' has type '{ptype}', expected float")
        if name in ("red", "green", "blue") and ptype not in _PLY_UCHAR_NAMES:
            raise PlyParseError(f"{path}: property '{name}' has type '{ptype}', expected uchar")
        if ptype not in _PLY_FLOAT_NAMES | _PLY_UCHAR_NAMES:
            raise PlyParseError(f"{path}: unsupported property type '{ptype}'")

    if fmt == "ascii":
        rows = raw[header_len:].decode("ascii").split()
        expected = count * len(properties)
        if len(rows) < expected:
            raise PlyParseError(
                f"{path}: truncated ascii payload at byte {header_len}: "
                f"expected {expected} values, found {len(rows)}"
            )
        table = np.array(rows[:expected], dtype=np.float64).reshape(count, len(properties))
        columns = {name: table[:, i] for i, (_, name) in enumerate(properties)}
    else:
        dtype = np.dtype(
            [(name, "<f4" if ptype in _PLY_FLOAT_NAMES else "u1") for ptype, name in properties]
        )
        need = count * dtype.itemsize
        payload = raw[header_len:]
        if len(payload) < need:
            raise PlyParseError(
                f"{path}: truncated binary payload at byte {header_len + len(payload)}: "
                f"need {need} bytes, have {len(payload)}"
            )
        records = np.frombuffer(payload[:need], dtype=dtype)
        columns = {name: records[name].astype(np.float64) for _, name in properties}

    positions = np.stack([columns["x"], columns["y"], columns["z"]], axis=1)
    colors = np.stack([columns["red"], columns["green"], columns["blue"]], axis=1) / 255.0
    return PointCloud(positions, colors)


def save_ply(cloud: PointCloud, path, colormap: np.ndarray | None = None) -> None:
    """Write a binary_little_endian PLY.

    When `colormap` (one scalar per point) is given, colors are replaced by a
    blue-to-red ramp over [min, max] of the scalars; a degenerate range maps
    everything to the ramp midpoint.
    """
    if len(cloud) == 0:
        raise ValueError("refusing to write an empty point cloud")
    colors = cloud.colors
    if colormap is not None:
        scalars = np.asarray(colormap, dtype=np.float64).reshape(-1)
        if len(scalars) != len(cloud):
            raise ValueError(f"colormap length {len(scalars)} != point count {len(cloud)}")
        lo, hi = scalars.min(), scalars.max()
        t = np.full_like(scalars, 0.5) if hi == lo else (scalars - lo) / (hi - lo)
        colors = np.stack([t, np.zeros_like(t), 1.0 - t], axis=1)

    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    dtype = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                      ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    records = np.empty(len(cloud), dtype=dtype)
    pos32 = cloud.positions.astype(np.float32)
    rgb8 = float_to_u8(colors)
    records["x"], records["y"], records["z"] = pos32[:, 0], pos32[:, 1], pos32[:, 2]
    records["red"], records["green"], records["blue"] = rgb8[:, 0], rgb8[:, 1], rgb8[:, 2]
    Path(path).write_bytes(header.encode("ascii") + records.tobytes())


# ---------------------------------------------------------------------------
# Cameras


def _validated_pose(R: np.ndarray, t: np.ndarray, label: str) -> RigidPose:
    """Check orthonormality to 1e-6, then snap to the nearest rotation."""
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    if not np.allclose(R.T @ R, np.eye(3), atol=1e-6, rtol=0.0) or np.linalg.det(R) < 0:
        raise ManifestError(f"{label}: rotation is not orthonormal within 1e-6")
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    if np.linalg.det(R) < 0:
        u[:, -1] *= -1
        R = u @ vt
    return RigidPose(R=R, t=np.asarray(t, dtype=np.float64))


def quaternion_to_rotation(qw: float, qx: float, qy: float, qz: float) -> np.ndarray:
    """Rotation matrix of a (not necessarily unit) quaternion, w-first."""
    n = qw * qw + qx * qx + qy * qy + qz * qz
    if n == 0.0:
        raise ManifestError("zero quaternion")
    s = 2.0 / n
    wx, wy, wz = s * qw * qx, s * qw * qy, s * qw * qz
    xx, xy, xz = s * qx * qx, s * qx * qy, s * qx * qz
    yy, yz, zz = s * qy * qy, s * qy * qz, s * qz * qz
    return np.array(
        [
            [1.0 - (yy + zz), xy - wz, xz + wy],
            [xy + wz, 1.0 - (xx + zz), yz - wx],
            [xz - wy, yz + wx, 1.0 - (xx + yy)],
        ]
    )


def load_cameras(path) -> list[tuple[int, RigidPose, CameraIntrinsics, str | None]]:
    """Load camera definitions from a JSON manifest or a COLMAP text model.

    Returns a list of (id, pose, intrinsics, image_path) with image_path
    relative to the manifest location (None when the manifest omits it).
    For COLMAP, pass the directory containing cameras.txt and images.txt.
    """
    path = Path(path)
    if path.is_dir() or path.name in ("cameras.txt", "images.txt"):
        return _load_colmap_text(path if path.is_dir() else path.parent)
    data = json.loads(path.read_text())
    if "views" not in data:
        raise ManifestError(f"{path}: manifest has no 'views' key")
    out = []
    for i, entry in enumerate(data["views"]):
        label = f"{path}: views[{i}]"
        try:
            R = np.array(entry["R"], dtype=np.float64).reshape(3, 3)
            t = np.array(entry["t"], dtype=np.float64)
            K = CameraIntrinsics(
                fx=float(entry["fx"]), fy=float(entry["fy"]),
                cx=float(entry["cx"]), cy=float(entry["cy"]),
                width=int(entry["width"]), height=int(entry["height"]),
            )
        except (KeyError, ValueError) as exc:
            raise ManifestError(f"{label}: {exc}") from exc
        pose = _validated_pose(R, t, label)
        out.append((int(entry["id"]), pose, K, entry.get("image")))
    return out


def _load_colmap_text(model_dir: Path) -> list[tuple[int, RigidPose, CameraIntrinsics, str | None]]:
    cameras_path = model_dir / "cameras.txt"
    images_path = model_dir / "images.txt"
    if not cameras_path.exists() or not images_path.exists():
        raise ManifestError(f"{model_dir}: expected cameras.txt and images.txt")

    intrinsics: dict[int, CameraIntrinsics] = {}
    for line in cameras_path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        cam_id, model = int(tokens[0]), tokens[1]
        if model != "PINHOLE":
            raise ManifestError(f"{cameras_path}: unsupported camera model '{model}'")
        width, height = int(tokens[2]), int(tokens[3])
        fx, fy, cx, cy = map(float, tokens[4:8])
        intrinsics[cam_id] = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)

    out = []
    lines = [
        ln.strip() for ln in images_path.read_text().splitlines()
        if ln.strip() and not ln.strip().startswith("#")
    ]
    # images.txt alternates a pose line with a 2D-point line
    for pose_line in lines[0::2]:
        tokens = pose_line.split()
        image_id = int(tokens[0])
        qw, qx, qy, qz = map(float, tokens[1:5])
        t = np.array(list(map(float, tokens[5:8])))
        cam_id = int(tokens[8])
        name = tokens[9] if len(tokens) > 9 else None
        if cam_id not in intrinsics:
            raise ManifestError(f"{images_path}: image {image_id} references unknown camera {cam_id}")
        pose = _validated_pose(quaternion_to_rotation(qw, qx, qy, qz), t, f"image {image_id}")
        out.append((image_id, pose, intrinsics[cam_id], name))
    return out


def save_camera_manifest(path, views: list[dict]) -> None:
    """Write the JSON camera manifest. Each entry needs id/width/height/fx/fy/cx/cy/R/t."""
    Path(path).write_text(json.dumps({"views": views}, indent=1))


def manifest_entry(view_id: int, pose: RigidPose, K: CameraIntrinsics,
                   image: str | None = None) -> dict:
    entry = {
        "id": int(view_id),
        "width": K.width, "height": K.height,
        "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
        "R": [float(x) for x in pose.R.reshape(-1)],
        "t": [float(x) for x in pose.t],
    }
    if image is not None:
        entry["image"] = image
    return entry


def load_scene(ply_path, manifest_path) -> Scene:
    """Assemble a Scene: point cloud plus views with their images loaded."""
    cloud = load_ply(ply_path)
    base = Path(manifest_path).parent
    views = []
    for view_id, pose, K, image_rel in load_cameras(manifest_path):
        if image_rel is None:
            raise ManifestError(f"view {view_id}: manifest entry has no image path")
        image = load_image(base / image_rel)
        views.append(SourceView(id=view_id, pose=pose, intrinsics=K, image=image))
    return Scene(cloud=cloud, views=views)


# ---------------------------------------------------------------------------
# Images


def float_to_u8(img: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8 with round-half-up."""
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Load an 8-bit PNG or binary PPM as (H, W, 3) float64 in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return _load_ppm(path)
    with Image.open(path) as im:
        if im.mode == "I;16" or im.mode == "I":
            raise ValueError(f"{path}: unsupported bit depth (expected 8-bit)")
        if im.mode not in ("RGB", "L", "RGBA"):
            raise ValueError(f"{path}: unsupported image mode '{im.mode}'")
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(img: np.ndarray, path) -> None:
    """Save (H, W, 3) floats in [0, 1] as 8-bit PNG or binary PPM."""
    path = Path(path)
    u8 = float_to_u8(np.asarray(img, dtype=np.float64))
    if path.suffix.lower() in (".ppm", ".pnm"):
        h, w = u8.shape[:2]
        path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + u8.tobytes())
    else:
        Image.fromarray(u8, mode="RGB").save(path)


def _load_ppm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if not raw.startswith(b"P6"):
        raise ValueError(f"{path}: only binary (P6) PPM is supported")
    # header: magic, width, height, maxval, then a single whitespace byte
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1
    w, h, maxval = int(fields[0]), int(fields[1]), int(fields[2])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported bit depth (maxval {maxval}, expected 255)")
    need = w * h * 3
    data = raw[pos : pos + need]
    if len(data) < need:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def save_depth_png(depth: np.ndarray, path) -> None:
    """Save a depth map (meters) as 16-bit PNG in millimeters, clamped."""
    mm = np.where(np.isfinite(depth), depth * 1000.0, 0.0)
    mm = np.clip(mm, 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path)


def save_mask_png(mask: np.ndarray, path) -> None:
    """Save a boolean coverage mask as a 1-bit PNG."""
    Image.fromarray(mask.astype(bool)).convert("1").save(path)


# ---------------------------------------------------------------------------
# Downsampling


def voxel_downsample(cloud: PointCloud, cell: float) -> PointCloud:
    """Collapse points to one centroid (mean position and color) per grid cell.

    Output order is deterministic: ascending by cell index tuple.
    """
    if cell <= 0:
        raise ValueError(f"cell must be positive, got {cell}")
    if len(cloud) == 0:
        return PointCloud(np.empty((0, 3)), np.empty((0, 3)))

    idx = np.floor(cloud.positions / cell).astype(np.int64)
    # lexicographic cell order, then group contiguous runs
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
    sorted_idx = idx[order]
    boundary = np.ones(len(order), dtype=bool)
    boundary[1:] = np.any(sorted_idx[1:] != sorted_idx[:-1], axis=1)
    starts = np.flatnonzero(boundary)
    counts = np.diff(np.append(starts, len(order)))

    pos_sum = np.add.reduceat(cloud.positions[order], starts, axis=0)
    col_sum = np.add.reduceat(cloud.colors[order], starts, axis=0)
    return PointCloud(pos_sum / counts[:, None], col_sum / counts[:, None])
