"""Shared synthetic scenes.

The "room" is the workhorse: a box of wall/floor/ceiling points with a few
cameras clustered near the -x side, all facing the +x wall. Every view image
is a distinct constant color, which makes the photometric term of multi-view
points controllably below 1 while staying easy to reason about by hand.
"""

from __future__ import annotations

import numpy as np
import pytest

from renderfield.field import FieldParams, six_directions
from renderfield.geometry import CameraIntrinsics
from renderfield.scene_io import (
    PointCloud,
    Scene,
    SourceView,
    manifest_entry,
    save_camera_manifest,
    save_image,
    save_ply,
)

ROOM_SIZE = np.array([6.0, 6.0, 3.0])
ROOM_K = CameraIntrinsics(fx=20.0, fy=20.0, cx=32.0, cy=24.0, width=64, height=48)

# 8-bit-exact constants so images survive a PNG round trip unchanged
VIEW_COLORS = (
    np.array([40, 40, 200]) / 255.0,
    np.array([200, 40, 40]) / 255.0,
    np.array([40, 200, 40]) / 255.0,
    np.array([200, 200, 40]) / 255.0,
)


def box_shell_points(size, counts, rng):
    """Uniform random samples on the six faces of [0, size] (counts per face:
    floor, ceiling, x=0, x=max, y=0, y=max)."""
    sx, sy, sz = size
    faces = []
    for n, fixed_axis, fixed_value in [
        (counts[0], 2, 0.0), (counts[1], 2, sz),
        (counts[2], 0, 0.0), (counts[3], 0, sx),
        (counts[4], 1, 0.0), (counts[5], 1, sy),
    ]:
        pts = rng.uniform(0.0, 1.0, size=(n, 3)) * size
        pts[:, fixed_axis] = fixed_value
        faces.append(pts)
    return np.vstack(faces)


def constant_image(color, K=ROOM_K):
    return np.broadcast_to(np.asarray(color, dtype=np.float64), (K.height, K.width, 3)).copy()


def make_room_scene(n_points=1000, seed=7):
    """~n_points box room with 4 co-located-ish cameras facing +x."""
    rng = np.random.default_rng(seed)
    per_face = n_points // 4
    side = (n_points - 2 * per_face) // 4
    cloud = PointCloud(
        box_shell_points(ROOM_SIZE, [per_face, per_face, side, side, side, side], rng),
        rng.uniform(0.0, 1.0, size=(2 * per_face + 4 * side, 3)),
    )
    views = []
    for i, y in enumerate((1.57, 2.49, 3.51, 4.43)):
        pose = six_directions(np.array([1.23, y, 1.48]))[0]  # facing +x
        views.append(SourceView(id=i, pose=pose, intrinsics=ROOM_K,
                                image=constant_image(VIEW_COLORS[i])))
    return Scene(cloud=cloud, views=views)


ROOM_FIELD_PARAMS = FieldParams(
    step=2.0,
    voxel_cell=0.25,
    seg_step=0.125,
    exclude_radius=0.25,
    min_clearance=0.5,
    hpr_gamma=100.0,
    seed=0,
)


def make_sealed_box_scene(spacing=2.0 / 26.0, seed=3):
    """Closed box of regularly sampled walls with two cameras inside facing +x.

    Wall sampling is denser than the 0.1 m voxel cell used in the conflict
    tests, so the voxelized shell has no gaps a sight line could slip through.
    """
    rng = np.random.default_rng(seed)
    ticks = np.arange(0.0, 2.0 + spacing / 2, spacing)
    uu, vv = (g.reshape(-1) for g in np.meshgrid(ticks, ticks, indexing="ij"))
    faces = []
    for axis, value in [(2, 0.0), (2, 2.0), (0, 0.0), (0, 2.0), (1, 0.0), (1, 2.0)]:
        pts = np.empty((len(uu), 3))
        others = [a for a in range(3) if a != axis]
        pts[:, others[0]] = uu
        pts[:, others[1]] = vv
        pts[:, axis] = value
        faces.append(pts)
    positions = np.vstack(faces)
    cloud = PointCloud(positions, rng.uniform(0.0, 1.0, size=(len(positions), 3)))

    K = CameraIntrinsics(fx=24.0, fy=24.0, cx=32.0, cy=24.0, width=64, height=48)
    views = [
        SourceView(id=0, pose=six_directions(np.array([0.55, 1.0, 1.0]))[0],
                   intrinsics=K, image=constant_image(VIEW_COLORS[0], K)),
        SourceView(id=1, pose=six_directions(np.array([0.62, 1.31, 0.97]))[0],
                   intrinsics=K, image=constant_image(VIEW_COLORS[1], K)),
    ]
    return Scene(cloud=cloud, views=views)


SEALED_BOX_FIELD_PARAMS = FieldParams(
    voxel_cell=0.1,
    seg_step=0.05,
    exclude_radius=0.1,
    min_clearance=0.3,
    hpr_gamma=100.0,
    seed=0,
)


def make_wall_floor_scene(seed=5):
    """Open scene with a floor and a single +x wall, three cameras facing it.

    Candidates looking +x share the sources' perspective on the wall and far
    floor (small angles); candidates looking -x see the same floor band from
    the opposite side (angles near or beyond 90 degrees), which is exactly
    the weakly observed case the angular term punishes.
    """
    rng = np.random.default_rng(seed)
    floor = rng.uniform(0.0, 1.0, size=(500, 3)) * np.array([8.0, 6.0, 0.0])
    wall = rng.uniform(0.0, 1.0, size=(300, 3)) * np.array([0.0, 6.0, 3.0])
    wall[:, 0] = 8.0
    positions = np.vstack([floor, wall])
    cloud = PointCloud(positions, rng.uniform(0.0, 1.0, size=(len(positions), 3)))
    views = []
    for i, y in enumerate((2.0, 3.0, 4.0)):
        pose = six_directions(np.array([1.2, y, 1.5]))[0]  # facing the +x wall
        views.append(SourceView(id=i, pose=pose, intrinsics=ROOM_K,
                                image=constant_image(VIEW_COLORS[i])))
    return Scene(cloud=cloud, views=views)


def sphere_cloud(n=2000, seed=11):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return PointCloud(v, rng.uniform(0.0, 1.0, size=(n, 3)))


def write_scene(scene: Scene, directory):
    """Materialize a scene: cloud.ply, per-view PNGs, cameras.json."""
    directory.mkdir(parents=True, exist_ok=True)
    save_ply(scene.cloud, directory / "cloud.ply")
    entries = []
    for view in scene.views:
        name = f"img_{view.id:03d}.png"
        save_image(view.image, directory / name)
        entries.append(manifest_entry(view.id, view.pose, view.intrinsics, image=name))
    save_camera_manifest(directory / "cameras.json", entries)
    return directory / "cloud.ply", directory / "cameras.json"


@pytest.fixture(scope="session")
def room_scene():
    return make_room_scene()


@pytest.fixture(scope="session")
def sealed_box_scene():
    return make_sealed_box_scene()


@pytest.fixture(scope="session")
def room_dir(room_scene, tmp_path_factory):
    directory = tmp_path_factory.mktemp("room")
    write_scene(room_scene, directory)
    return directory
