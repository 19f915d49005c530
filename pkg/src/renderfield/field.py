"""Renderability field construction and pseudo-view selection.

The field scores every candidate viewpoint on a regular grid (six outward
directions per position) by how well the existing capture observes it.
Per-point ingredients:

  - photometric consistency: one minus the normalized mean pairwise color
    disparity across the source views that observe the point,
  - resolution gap: relative closeness of the candidate vs. the nearest
    (by distance ratio) source view,
  - angular gap: smallest angle subtended at the point between the
    candidate center and any observing source center.

The resolution and angular terms decay exponentially, with a rate that
grows as photometric consistency drops: tan(pi/2 * (1 - h_geo)). A
candidate's value v is the product of the three per-point means.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import (
    BoundingBox,
    CameraIntrinsics,
    RigidPose,
    camera_center,
    look_rotation,
    pose_at,
)
from .scene_io import PointCloud, Scene, save_ply
from .visibility import (
    ConflictParams,
    ConflictStatus,
    DEFAULT_HPR_GAMMA,
    build_voxel_grid,
    frustum_select,
    hidden_point_removal,
    median_nn_spacing,
    observation_conflict,
)

SQRT3 = np.sqrt(3.0)
H_GEO_EPS = 1e-6
DEFAULT_PAIR_CAP = 32
GRID_TOL = 1e-9  # inclusive bbox membership tolerance for grid sampling

# (forward, image-down) in world coordinates for the six outward directions:
# +x, -x, +y, -y, +z, -z. World -z is image-down for the side directions;
# the +-z directions keep world +x as image-right.
_DIRECTIONS = (
    ((1.0, 0.0, 0.0), (0.0, 0.0, -1.0)),
    ((-1.0, 0.0, 0.0), (0.0, 0.0, -1.0)),
    ((0.0, 1.0, 0.0), (0.0, 0.0, -1.0)),
    ((0.0, -1.0, 0.0), (0.0, 0.0, -1.0)),
    ((0.0, 0.0, 1.0), (0.0, 1.0, 0.0)),
    ((0.0, 0.0, -1.0), (0.0, -1.0, 0.0)),
)


class CandidateStatus(Enum):
    VALID = "valid"
    NO_COVERAGE = "no_coverage"
    BLOCKED = "blocked"
    TOO_CLOSE = "too_close"
    EMPTY = "empty"


@dataclass
class PseudoViewCandidate:
    position: np.ndarray
    direction: int
    pose: RigidPose
    status: CandidateStatus
    mean_h_geo: float | None = None
    mean_h_res: float | None = None
    mean_h_ang: float | None = None
    v: float | None = None


@dataclass
class RenderabilityField:
    bbox: BoundingBox
    step: float
    pseudo_intrinsics: CameraIntrinsics
    candidates: list[PseudoViewCandidate]


@dataclass(frozen=True)
class FieldParams:
    """Field construction knobs. Zeros/Nones resolve to data-driven defaults."""

    step: float = 1.0
    pseudo_intrinsics: CameraIntrinsics | None = None  # None: first source view's
    hpr_gamma: float = DEFAULT_HPR_GAMMA
    voxel_cell: float | None = None  # None: 4x median nearest-neighbor spacing
    seg_step: float | None = None  # None: voxel_cell / 2
    exclude_radius: float | None = None  # None: voxel_cell
    min_clearance: float = 0.5
    pair_cap: int = DEFAULT_PAIR_CAP
    seed: int = 0
    table_hpr: bool = True
    threads: int = 1


# ---------------------------------------------------------------------------
# Grid sampling and directions


def sample_viewpoints(bbox: BoundingBox, step: float) -> np.ndarray:
    """Grid positions inside the box: full step on x and y, half step on z.

    Boundary membership is inclusive within 1e-9 absolute. Rows are ordered
    lexicographically by (x, y, z).
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    extent = bbox.max - bbox.min
    steps = np.array([step, step, 0.5 * step])
    counts = np.floor((extent + GRID_TOL) / steps).astype(int) + 1
    xs = bbox.min[0] + np.arange(counts[0]) * steps[0]
    ys = bbox.min[1] + np.arange(counts[1]) * steps[1]
    zs = bbox.min[2] + np.arange(counts[2]) * steps[2]
    grid = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)
    return grid.reshape(-1, 3)


def six_directions(position: np.ndarray) -> list[RigidPose]:
    """The six axis-aligned outward poses sharing the given camera center."""
    return [
        pose_at(position, look_rotation(np.array(f), np.array(d)))
        for f, d in _DIRECTIONS
    ]


# ---------------------------------------------------------------------------
# Observation table


class ObservationTable:
    """Per-point record of which source views see it, and how.

    CSR layout over point index: entries for point i live in rows
    offsets[i]:offsets[i+1], sorted by view id. Each row stores the view id,
    the projected pixel, the color sampled there, and the camera depth.
    """

    def __init__(self, n_points, offsets, view_ids, pixels, colors, depths):
        self.n_points = n_points
        self.offsets = offsets
        self.view_ids = view_ids
        self.pixels = pixels
        self.colors = colors
        self.depths = depths

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def entries_for(self, point: int):
        lo, hi = self.offsets[point], self.offsets[point + 1]
        return (
            self.view_ids[lo:hi],
            self.pixels[lo:hi],
            self.colors[lo:hi],
            self.depths[lo:hi],
        )


def build_observation_table(
    scene: Scene, hpr: bool = True, gamma: float = DEFAULT_HPR_GAMMA
) -> ObservationTable:
    """Project every map point into every source view and record the hits.

    With `hpr` enabled a point only counts as seen by a view when it survives
    hidden point removal from that view's center, so occluded points do not
    pick up colors through walls.
    """
    from .geometry import in_image_bounds, project_points

    cloud = scene.cloud
    point_rows, view_rows, pix_rows, col_rows, dep_rows = [], [], [], [], []
    for view in scene.views:
        uv, depth, in_front = project_points(cloud.positions, view.pose, view.intrinsics)
        visible = np.flatnonzero(in_front & in_image_bounds(uv, view.intrinsics))
        if hpr and len(visible) > 0:
            visible = hidden_point_removal(cloud, visible, camera_center(view.pose), gamma)
        if len(visible) == 0:
            continue
        K = view.intrinsics
        px = np.clip(np.rint(uv[visible, 0]).astype(np.int64), 0, K.width - 1)
        py = np.clip(np.rint(uv[visible, 1]).astype(np.int64), 0, K.height - 1)
        point_rows.append(visible)
        view_rows.append(np.full(len(visible), view.id, dtype=np.int64))
        pix_rows.append(uv[visible])
        col_rows.append(view.image[py, px])
        dep_rows.append(depth[visible])

    n = len(cloud)
    if not point_rows:
        return ObservationTable(
            n, np.zeros(n + 1, dtype=np.int64), np.empty(0, dtype=np.int64),
            np.empty((0, 2)), np.empty((0, 3)), np.empty(0),
        )

    points = np.concatenate(point_rows)
    views = np.concatenate(view_rows)
    order = np.lexsort((views, points))
    points, views = points[order], views[order]
    pixels = np.concatenate(pix_rows)[order]
    colors = np.concatenate(col_rows)[order]
    depths = np.concatenate(dep_rows)[order]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.add.at(offsets, points + 1, 1)
    offsets = np.cumsum(offsets)
    return ObservationTable(n, offsets, views, pixels, colors, depths)


# ---------------------------------------------------------------------------
# Per-point metrics


def _decay_rate(h_geo_value: float | np.ndarray):
    """Exponential decay rate: steep when photometric consistency is poor."""
    clamped = np.clip(h_geo_value, H_GEO_EPS, 1.0)
    return np.tan(0.5 * np.pi * (1.0 - clamped))


def h_geo(colors: np.ndarray, pair_cap: int = DEFAULT_PAIR_CAP,
          seed: int = 0, key: int = 0) -> float:
    """Photometric consistency in [0, 1] from the observed colors of a point.

    One observation or none scores 1. Beyond `pair_cap` observations the
    pairwise mean is estimated from pair_cap*(pair_cap-1)/2 random pairs
    drawn from a generator seeded by (seed, key), keeping the cost bounded
    and the result reproducible.
    """
    colors = np.atleast_2d(np.asarray(colors, dtype=np.float64))
    n = len(colors)
    if n <= 1:
        return 1.0
    if n <= pair_cap:
        i, j = np.triu_indices(n, k=1)
    else:
        n_pairs = pair_cap * (pair_cap - 1) // 2
        rng = np.random.default_rng([seed, key])
        i = rng.integers(0, n, size=n_pairs)
        j = (i + 1 + rng.integers(0, n - 1, size=n_pairs)) % n
    mean_disparity = float(np.mean(np.linalg.norm(colors[i] - colors[j], axis=1)))
    return 1.0 - mean_disparity / SQRT3


def min_distance_gap(p: np.ndarray, pseudo_center: np.ndarray,
                     source_centers: np.ndarray) -> float:
    """min over sources of max(0, (|o_s - p| - |o_p - p|) / |o_s - p|)."""
    source_centers = np.atleast_2d(source_centers)
    if len(source_centers) == 0:
        raise ValueError("point has no observing sources")
    d_s = np.linalg.norm(source_centers - p, axis=1)
    d_p = np.linalg.norm(np.asarray(pseudo_center, dtype=np.float64) - p)
    return float(np.min(np.maximum(0.0, (d_s - d_p) / d_s)))


def min_source_angle(p: np.ndarray, pseudo_center: np.ndarray,
                     source_centers: np.ndarray) -> float:
    """Smallest angle at p between the candidate center and any source center."""
    source_centers = np.atleast_2d(source_centers)
    if len(source_centers) == 0:
        raise ValueError("point has no observing sources")
    vp = np.asarray(pseudo_center, dtype=np.float64) - p
    vs = source_centers - p
    cos = (vs @ vp) / (np.linalg.norm(vs, axis=1) * np.linalg.norm(vp))
    return float(np.min(np.arccos(np.clip(cos, -1.0, 1.0))))


def h_res(p: np.ndarray, pseudo_center: np.ndarray, source_centers: np.ndarray,
          h_geo_value: float) -> float:
    """Resolution term: penalizes candidates much closer than every source."""
    gap = min_distance_gap(p, pseudo_center, source_centers)
    return float(np.exp(-_decay_rate(h_geo_value) * gap))


def h_ang(p: np.ndarray, pseudo_center: np.ndarray, source_centers: np.ndarray,
          h_geo_value: float) -> float:
    """Angular term: penalizes candidates seen from unfamiliar directions."""
    angle = min_source_angle(p, pseudo_center, source_centers)
    return float(np.exp(-_decay_rate(h_geo_value) * angle))


# ---------------------------------------------------------------------------
# Field construction


def _concatenated_ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """concatenate([arange(s, s + c) for s, c in zip(starts, counts)]), fast."""
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    delta = np.ones(total, dtype=np.int64)
    delta[0] = starts[0]
    ends = np.cumsum(counts)
    delta[ends[:-1]] = starts[1:] - starts[:-1] - counts[:-1] + 1
    return np.cumsum(delta)


class FieldBuilder:
    """Holds the immutable per-scene precomputation for candidate scoring."""

    def __init__(self, scene: Scene, params: FieldParams = FieldParams()):
        if len(scene.cloud) == 0:
            raise ValueError("scene has an empty point cloud")
        self.scene = scene
        self.cloud = scene.cloud

        cell = params.voxel_cell
        if not cell:
            cell = 4.0 * median_nn_spacing(self.cloud, seed=params.seed)
        resolved = replace(
            params,
            voxel_cell=cell,
            seg_step=params.seg_step or cell / 2.0,
            exclude_radius=params.exclude_radius if params.exclude_radius is not None else cell,
            pseudo_intrinsics=params.pseudo_intrinsics
            or (scene.views[0].intrinsics if scene.views else None),
        )
        if resolved.pseudo_intrinsics is None:
            raise ValueError("no pseudo-view intrinsics: scene has no views and none given")
        self.params = resolved
        self.conflict_params = ConflictParams(
            min_clearance=resolved.min_clearance,
            step=resolved.seg_step,
            exclude_radius=resolved.exclude_radius,
        )

        self.table = build_observation_table(
            scene, hpr=resolved.table_hpr, gamma=resolved.hpr_gamma
        )
        self._centers_by_id = {v.id: camera_center(v.pose) for v in scene.views}
        if self._centers_by_id and len(self.table.view_ids):
            sorted_ids = np.array(sorted(self._centers_by_id))
            sorted_centers = np.array([self._centers_by_id[i] for i in sorted_ids])
            self.entry_centers = sorted_centers[np.searchsorted(sorted_ids, self.table.view_ids)]
        else:
            self.entry_centers = np.empty((0, 3))
        self.obs_counts = self.table.counts()

        counts = self.obs_counts
        self.point_h_geo = np.ones(len(self.cloud))
        for point in np.flatnonzero(counts > 1):
            lo, hi = self.table.offsets[point], self.table.offsets[point + 1]
            self.point_h_geo[point] = h_geo(
                self.table.colors[lo:hi],
                pair_cap=resolved.pair_cap,
                seed=resolved.seed,
                key=int(point),
            )

    # -- candidate scoring ---------------------------------------------------

    def evaluate_pose(self, pose: RigidPose):
        """Score one candidate pose and classify it.

        Returns (status, mean_h_geo, mean_h_res, mean_h_ang, v); the metric
        slots are None unless the status is VALID.
        """
        p = self.params
        in_view = frustum_select(self.cloud, pose, p.pseudo_intrinsics)
        if len(in_view) == 0:
            return CandidateStatus.EMPTY, None, None, None, None
        center = camera_center(pose)
        submap = hidden_point_removal(self.cloud, in_view, center, p.hpr_gamma)

        observed = submap[self.obs_counts[submap] > 0]
        if len(observed) > 0:
            lo, hi = self.table.offsets[observed], self.table.offsets[observed + 1]
            rows = _concatenated_ranges(lo, hi - lo)
            source_ids = np.unique(self.table.view_ids[rows])
        else:
            rows = np.empty(0, dtype=np.int64)
            source_ids = np.empty(0, dtype=np.int64)

        grid = build_voxel_grid(self.cloud, submap, p.voxel_cell)
        status = observation_conflict(
            pose,
            [self._centers_by_id[i] for i in source_ids],
            grid,
            self.cloud,
            self.conflict_params,
        )
        if status is not ConflictStatus.VALID:
            return CandidateStatus(status.value), None, None, None, None

        counts = self.obs_counts[observed]
        group_starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        points_per_row = np.repeat(self.cloud.positions[observed], counts, axis=0)
        centers_per_row = self.entry_centers[rows]

        diff_s = centers_per_row - points_per_row
        dist_s = np.linalg.norm(diff_s, axis=1)
        dist_p_per_point = np.linalg.norm(self.cloud.positions[observed] - center, axis=1)
        dist_p = np.repeat(dist_p_per_point, counts)
        gaps = np.maximum(0.0, (dist_s - dist_p) / dist_s)
        min_gap = np.minimum.reduceat(gaps, group_starts)

        diff_p = np.repeat(center[None, :] - self.cloud.positions[observed], counts, axis=0)
        cos = np.einsum("ij,ij->i", diff_s, diff_p) / (dist_s * dist_p)
        angles = np.arccos(np.clip(cos, -1.0, 1.0))
        min_angle = np.minimum.reduceat(angles, group_starts)

        rate = _decay_rate(self.point_h_geo[observed])
        mean_geo = float(np.mean(self.point_h_geo[observed]))
        mean_res = float(np.mean(np.exp(-rate * min_gap)))
        mean_ang = float(np.mean(np.exp(-rate * min_angle)))
        return CandidateStatus.VALID, mean_geo, mean_res, mean_ang, mean_geo * mean_res * mean_ang

    def evaluate_candidate(self, position: np.ndarray, direction: int) -> PseudoViewCandidate:
        pose = six_directions(position)[direction]
        status, mg, mr, ma, v = self.evaluate_pose(pose)
        return PseudoViewCandidate(
            position=np.asarray(position, dtype=np.float64),
            direction=direction,
            pose=pose,
            status=status,
            mean_h_geo=mg,
            mean_h_res=mr,
            mean_h_ang=ma,
            v=v,
        )

    def build(self, bbox: BoundingBox | None = None) -> RenderabilityField:
        """Evaluate the full grid. Output order is (position lex, direction),
        independent of the thread count."""
        bbox = bbox or BoundingBox.of_points(self.cloud.positions)
        positions = sample_viewpoints(bbox, self.params.step)
        tasks = [(pos, d) for pos in positions for d in range(6)]
        if self.params.threads > 1:
            with ThreadPoolExecutor(max_workers=self.params.threads) as pool:
                candidates = list(pool.map(lambda t: self.evaluate_candidate(*t), tasks))
        else:
            candidates = [self.evaluate_candidate(*t) for t in tasks]
        return RenderabilityField(
            bbox=bbox,
            step=self.params.step,
            pseudo_intrinsics=self.params.pseudo_intrinsics,
            candidates=candidates,
        )


def build_field(scene: Scene, params: FieldParams = FieldParams(),
                bbox: BoundingBox | None = None) -> RenderabilityField:
    return FieldBuilder(scene, params).build(bbox=bbox)


def select_pseudo_views(field, lo: float, hi: float) -> list[PseudoViewCandidate]:
    """Valid candidates with lo <= v <= hi, weakest-observed first.

    Accepts a RenderabilityField or a plain candidate list.
    """
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"band must satisfy 0 <= lo <= hi <= 1, got [{lo}, {hi}]")
    candidates = field.candidates if isinstance(field, RenderabilityField) else field
    picked = [
        c for c in candidates
        if c.status is CandidateStatus.VALID and lo <= c.v <= hi
    ]
    return sorted(picked, key=lambda c: c.v)


def farthest_point_sampling(positions: np.ndarray, k: int) -> list[int]:
    """Greedy max-min-distance subset of size k, in selection order.

    Starts at the point farthest from the centroid; ties break to the lowest
    index (argmax picks the first maximum).
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    centroid = positions.mean(axis=0)
    first = int(np.argmax(np.linalg.norm(positions - centroid, axis=1)))
    chosen = [first]
    min_dist = np.linalg.norm(positions - positions[first], axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        np.minimum(min_dist, np.linalg.norm(positions - positions[nxt], axis=1), out=min_dist)
    return chosen


# ---------------------------------------------------------------------------
# Field serialization


def write_field_jsonl(field: RenderabilityField, path) -> None:
    """One candidate per line; metric keys present only on valid candidates."""
    lines = []
    for c in field.candidates:
        record = {
            "pos": [float(x) for x in c.position],
            "dir": c.direction,
            "status": c.status.value,
        }
        if c.status is CandidateStatus.VALID:
            record.update(h_geo=c.mean_h_geo, h_res=c.mean_h_res, h_ang=c.mean_h_ang, v=c.v)
        lines.append(json.dumps(record))
    Path(path).write_text("\n".join(lines) + "\n")


def read_field_jsonl(path) -> list[PseudoViewCandidate]:
    """Rebuild candidates from a field file (poses from position + direction)."""
    candidates = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            position = np.array(record["pos"], dtype=np.float64)
            direction = int(record["dir"])
            status = CandidateStatus(record["status"])
        except (ValueError, KeyError) as exc:
            raise ValueError(f"{path}:{line_no}: bad field record: {exc}") from exc
        candidates.append(
            PseudoViewCandidate(
                position=position,
                direction=direction,
                pose=six_directions(position)[direction],
                status=status,
                mean_h_geo=record.get("h_geo"),
                mean_h_res=record.get("h_res"),
                mean_h_ang=record.get("h_ang"),
                v=record.get("v"),
            )
        )
    return candidates


def field_status_counts(candidates: list[PseudoViewCandidate]) -> dict[str, int]:
    counts = {status.value: 0 for status in CandidateStatus}
    for c in candidates:
        counts[c.status.value] += 1
    return counts


def write_field_visualization(field: RenderabilityField, path) -> None:
    """Colormapped PLY: one point per grid position, blue (weak) to red (strong),
    scored by the best v over the six directions."""
    by_pos: dict[tuple, float] = {}
    for c in field.candidates:
        key = tuple(c.position)
        best = by_pos.setdefault(key, 0.0)
        if c.status is CandidateStatus.VALID and c.v > best:
            by_pos[key] = c.v
    positions = np.array(list(by_pos.keys()))
    values = np.array(list(by_pos.values()))
    save_ply(PointCloud(positions, np.zeros_like(positions)), path, colormap=values)
