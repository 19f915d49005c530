"""Command-line pipeline driver.

Subcommands: field, sample, project, pairs, eval, split. Every config key
doubles as a flag; flags win over the config file. Logs go to stderr, data
to files under --out. With a fixed seed, outputs are byte-identical for any
thread count.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation, projection
from .config import Config, dump_config, load_config
from .field import (
    FieldBuilder,
    farthest_point_sampling,
    field_status_counts,
    read_field_jsonl,
    select_pseudo_views,
    write_field_jsonl,
    write_field_visualization,
)
from .geometry import camera_center
from .scene_io import (
    load_cameras,
    load_ply,
    load_scene,
    manifest_entry,
    save_camera_manifest,
    save_depth_png,
    save_image,
    save_mask_png,
    voxel_downsample,
)

log = logging.getLogger("renderfield")


class CommandError(Exception):
    """Raised for user-facing failures; maps to exit code 2."""


def _bool_flag(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got '{text}'")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat TOML config file")
    parser.add_argument("--dump-config", metavar="PATH",
                        help="write the effective config and continue")
    for f in dataclasses.fields(Config):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            parser.add_argument(flag, dest=f.name, type=_bool_flag, default=None)
        else:
            parser.add_argument(flag, dest=f.name, type=type(f.default), default=None)


def _resolve_config(args: argparse.Namespace) -> Config:
    config = load_config(args.config) if args.config else Config()
    for f in dataclasses.fields(Config):
        override = getattr(args, f.name, None)
        if override is not None:
            config = dataclasses.replace(config, **{f.name: override})
    config.validate()
    if args.dump_config:
        dump_config(config, args.dump_config)
    return config


def _require_file(path_str: str, what: str) -> Path:
    if not path_str:
        raise CommandError(f"no {what} configured")
    path = Path(path_str)
    if not path.exists():
        raise CommandError(f"{what} not found: {path}")
    return path


def _out_dir(config: Config) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands


def cmd_field(config: Config) -> None:
    scene = load_scene(
        _require_file(config.ply, "point cloud"),
        _require_file(config.cameras, "camera manifest"),
    )
    out = _out_dir(config)
    builder = FieldBuilder(scene, config.field_params())
    log.info(
        "field: %d points, %d views, voxel cell %.4g m",
        len(scene.cloud), len(scene.views), builder.params.voxel_cell,
    )
    field = builder.build()
    write_field_jsonl(field, out / "field.jsonl")
    write_field_visualization(field, out / "field_viz.ply")
    counts = field_status_counts(field.candidates)
    summary = {
        "candidates": len(field.candidates),
        "positions": len(field.candidates) // 6,
        "status_counts": counts,
        "step": field.step,
        "voxel_cell": builder.params.voxel_cell,
        "seg_step": builder.params.seg_step,
        "exclude_radius": builder.params.exclude_radius,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    log.info("field: %s", " ".join(f"{k}={v}" for k, v in counts.items()))


def cmd_sample(config: Config, field_path: str) -> None:
    candidates = read_field_jsonl(_require_file(field_path, "field file"))
    cameras = load_cameras(_require_file(config.cameras, "camera manifest"))
    if not cameras:
        raise CommandError("camera manifest has no views")
    pseudo_K = cameras[0][2]
    picked = select_pseudo_views(candidates, config.band_lo, config.band_hi)
    out = _out_dir(config)
    entries = [
        manifest_entry(view_id=i, pose=c.pose, K=pseudo_K)
        for i, c in enumerate(picked)
    ]
    save_camera_manifest(out / "pseudo_views.json", entries)
    log.info("sample: %d pseudo-views in band [%g, %g]",
             len(picked), config.band_lo, config.band_hi)


def cmd_project(config: Config, views_path: str) -> None:
    cloud = load_ply(_require_file(config.ply, "point cloud"))
    cameras = load_cameras(_require_file(views_path, "view manifest"))
    out = _out_dir(config)
    cells = config.sweep_cells()
    downsampled = [(cell, voxel_downsample(cloud, cell)) for cell in cells]
    for view_id, pose, K, _ in cameras:
        image = projection.render_projection(cloud, pose, K, config.splat_radius)
        _write_projection(out, f"proj_{view_id:05d}", image)
        for cell, sub_cloud in downsampled:
            sub = out / f"cell_{cell:g}"
            sub.mkdir(exist_ok=True)
            swept = projection.render_projection(sub_cloud, pose, K, config.splat_radius)
            _write_projection(sub, f"proj_{view_id:05d}", swept)
    log.info("project: rendered %d views%s", len(cameras),
             f" at {len(cells)} extra resolutions" if cells else "")


def _write_projection(directory: Path, stem: str, image: projection.ProjectionImage) -> None:
    save_image(image.rgb, directory / f"{stem}.png")
    save_depth_png(image.depth, directory / f"{stem}_depth.png")
    save_mask_png(image.mask, directory / f"{stem}_mask.png")


def cmd_pairs(config: Config) -> None:
    scene = load_scene(
        _require_file(config.ply, "point cloud"),
        _require_file(config.cameras, "camera manifest"),
    )
    out = _out_dir(config)
    manifest = []
    for view in scene.views:
        image, truth = projection.render_pair(scene, view.id, config.splat_radius)
        proj_path = out / f"pair_{view.id:05d}_proj.png"
        truth_path = out / f"pair_{view.id:05d}_gt.png"
        save_image(image.rgb, proj_path)
        save_image(truth, truth_path)
        manifest.append(
            {"view_id": view.id, "projection": proj_path.name, "ground_truth": truth_path.name}
        )
    (out / "pairs.json").write_text(json.dumps({"pairs": manifest}, indent=1))
    with open(out / "pairs.csv", "w") as f:
        f.write("view_id,rendered,ground_truth\n")
        for row in manifest:
            f.write(f"{row['view_id']},{row['projection']},{row['ground_truth']}\n")
    log.info("pairs: wrote %d training pairs", len(manifest))


def cmd_eval(config: Config, pairs_csv: str) -> None:
    csv_path = _require_file(pairs_csv, "pairs CSV")
    base = csv_path.parent
    view_ids, pairs = [], []
    with open(csv_path, newline="") as f:
        reader = csv.DictReader(f)
        required = {"view_id", "rendered", "ground_truth"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise CommandError(f"{csv_path}: expected header with columns {sorted(required)}")
        for row in reader:
            view_ids.append(int(row["view_id"]))
            pairs.append((base / row["rendered"], base / row["ground_truth"]))
    if not pairs:
        raise CommandError(f"{csv_path}: no pairs listed")

    report = evaluation.evaluate_set(pairs, view_ids=view_ids)
    out = _out_dir(config)
    evaluation.write_report_json(report, out / "report.json")
    evaluation.write_scores_csv(report, out / "scores.csv")
    evaluation.write_histogram_csv(report, out / "histogram.csv")
    log.info("eval: mean_psnr=%.3f mean_ssim=%.4f sdp=%.3f below_%g=%d",
             report.mean_psnr, report.mean_ssim, report.sdp,
             report.reference_db, report.below_reference_count)


def cmd_split(config: Config, k: int | None) -> None:
    cameras = load_cameras(_require_file(config.cameras, "camera manifest"))
    n = len(cameras)
    if k is None:
        if not config.ratio:
            raise CommandError("split needs --k or --ratio (e.g. 1:7)")
        try:
            test_part, train_part = (int(x) for x in config.ratio.split(":"))
        except ValueError as exc:
            raise CommandError(f"bad ratio '{config.ratio}', expected TEST:TRAIN") from exc
        k = int(np.floor(n * test_part / (test_part + train_part) + 0.5))
        k = max(1, k)
    if not 1 <= k < n:
        raise CommandError(f"k must be in [1, {n - 1}], got {k}")

    centers = np.array([camera_center(pose) for _, pose, _, _ in cameras])
    ids = [cameras[i][0] for i in farthest_point_sampling(centers, k)]
    test_ids = sorted(ids)
    train_ids = sorted(set(c[0] for c in cameras) - set(ids))
    out = _out_dir(config)
    (out / "test_ids.json").write_text(json.dumps(test_ids))
    (out / "train_ids.json").write_text(json.dumps(train_ids))
    log.info("split: %d test / %d train views", len(test_ids), len(train_ids))


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="renderfield",
        description="Renderability field construction, pseudo-view sampling, "
                    "point-projection rendering, and view-set evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("field", "build the renderability field (field.jsonl + field_viz.ply)"),
        ("sample", "select pseudo-views inside the renderability band"),
        ("project", "render point-projection images for a view manifest"),
        ("pairs", "render (projection, photo) training pairs for all source views"),
        ("eval", "score rendered/ground-truth pairs (PSNR, SSIM, SDP, histogram)"),
        ("split", "farthest-point-sampling train/test split of the source views"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        if name == "sample":
            p.add_argument("--field", required=True, help="field.jsonl from the field command")
        elif name == "project":
            p.add_argument("--views", required=True, help="camera manifest of poses to render")
        elif name == "eval":
            p.add_argument("--pairs", required=True,
                           help="CSV with header view_id,rendered,ground_truth")
        elif name == "split":
            p.add_argument("--k", type=int, default=None, help="number of test views")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
        if args.command == "field":
            cmd_field(config)
        elif args.command == "sample":
            cmd_sample(config, args.field)
        elif args.command == "project":
            cmd_project(config, args.views)
        elif args.command == "pairs":
            cmd_pairs(config)
        elif args.command == "eval":
            cmd_eval(config, args.pairs)
        elif args.command == "split":
            cmd_split(config, args.k)
    except (CommandError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
