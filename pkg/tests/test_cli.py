import json

import numpy as np
import pytest

from renderfield.cli import main
from renderfield.field import CandidateStatus, read_field_jsonl
from renderfield.scene_io import (
    PointCloud,
    Scene,
    SourceView,
    load_cameras,
    load_image,
    load_ply,
    save_image,
)
from renderfield.field import six_directions
from conftest import ROOM_K, VIEW_COLORS, constant_image, write_scene


@pytest.fixture(scope="module")
def room_cli(room_scene_module, tmp_path_factory):
    directory = tmp_path_factory.mktemp("cli_room")
    write_scene(room_scene_module, directory)
    return directory


@pytest.fixture(scope="module")
def room_scene_module():
    from conftest import make_room_scene

    return make_room_scene()


def field_args(scene_dir, out_dir, extra=()):
    return [
        "field",
        "--ply", str(scene_dir / "cloud.ply"),
        "--cameras", str(scene_dir / "cameras.json"),
        "--out", str(out_dir),
        "--step", "2.0",
        "--voxel-cell", "0.25",
        "--seg-step", "0.125",
        "--exclude-radius", "0.25",
        *extra,
    ]


class TestFieldCommand:
    def test_outputs_exist_and_parse(self, room_cli, tmp_path):
        out = tmp_path / "out"
        assert main(field_args(room_cli, out)) == 0
        candidates = read_field_jsonl(out / "field.jsonl")
        assert len(candidates) == 384
        summary = json.loads((out / "summary.json").read_text())
        assert summary["candidates"] == 384
        counts = summary["status_counts"]
        assert counts["valid"] > 0
        assert sum(counts.values()) == 384
        viz = load_ply(out / "field_viz.ply")
        assert len(viz) == 64  # one point per grid position

    def test_grid_count_from_exact_bbox(self, tmp_path):
        # cloud spanning exactly [0, 2]^3 gives the 45 * 6 candidate grid
        rng = np.random.default_rng(0)
        pts = rng.uniform(0.2, 1.8, size=(60, 3))
        pts = np.vstack([pts, np.zeros(3), np.full(3, 2.0)])
        cloud = PointCloud(pts, rng.uniform(0, 1, size=(len(pts), 3)))
        view = SourceView(id=0, pose=six_directions(np.array([1.0, 1.0, 1.0]))[0],
                          intrinsics=ROOM_K, image=constant_image(VIEW_COLORS[0]))
        scene_dir = tmp_path / "scene"
        write_scene(Scene(cloud=cloud, views=[view]), scene_dir)
        out = tmp_path / "out"
        args = field_args(scene_dir, out)
        args[args.index("--step") + 1] = "1.0"
        assert main(args) == 0
        lines = (out / "field.jsonl").read_text().strip().splitlines()
        assert len(lines) == 270

    def test_missing_ply_exits_2(self, room_cli, tmp_path, capsys):
        args = field_args(room_cli, tmp_path / "out")
        args[args.index("--ply") + 1] = str(tmp_path / "nope.ply")
        assert main(args) == 2
        assert "nope.ply" in capsys.readouterr().err

    def test_dump_config_reproduces(self, room_cli, tmp_path):
        out_a = tmp_path / "a"
        config_path = tmp_path / "dumped.toml"
        assert main(field_args(room_cli, out_a, ["--dump-config", str(config_path)])) == 0
        out_b = tmp_path / "b"
        assert main(["field", "--config", str(config_path), "--out", str(out_b)]) == 0
        assert (out_a / "field.jsonl").read_bytes() == (out_b / "field.jsonl").read_bytes()
        assert (out_a / "field_viz.ply").read_bytes() == (out_b / "field_viz.ply").read_bytes()


class TestSampleCommand:
    def test_band_selection_sorted(self, room_cli, tmp_path):
        out = tmp_path / "out"
        assert main(field_args(room_cli, out)) == 0
        assert main([
            "sample",
            "--cameras", str(room_cli / "cameras.json"),
            "--field", str(out / "field.jsonl"),
            "--out", str(out),
            "--band-lo", "0.0", "--band-hi", "1.0",
        ]) == 0
        cameras = load_cameras(out / "pseudo_views.json")
        candidates = read_field_jsonl(out / "field.jsonl")
        n_valid = sum(1 for c in candidates if c.status is CandidateStatus.VALID)
        assert len(cameras) == n_valid
        # intrinsics inherited from the first source view
        assert cameras[0][2] == ROOM_K

    def test_malformed_field_file(self, room_cli, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json}\n")
        assert main([
            "sample", "--cameras", str(room_cli / "cameras.json"),
            "--field", str(bad), "--out", str(tmp_path / "out"),
        ]) == 2
        assert "bad.jsonl" in capsys.readouterr().err


class TestProjectCommand:
    def test_renders_each_view_and_sweep(self, room_cli, tmp_path):
        out = tmp_path / "out"
        assert main([
            "project",
            "--ply", str(room_cli / "cloud.ply"),
            "--views", str(room_cli / "cameras.json"),
            "--out", str(out),
            "--cells", "0.1,0.5",
        ]) == 0
        for vid in range(4):
            assert (out / f"proj_{vid:05d}.png").exists()
            assert (out / f"proj_{vid:05d}_depth.png").exists()
            assert (out / f"proj_{vid:05d}_mask.png").exists()
        assert (out / "cell_0.1" / "proj_00000.png").exists()
        assert (out / "cell_0.5" / "proj_00000.png").exists()
        img = load_image(out / "proj_00000.png")
        assert img.shape == (ROOM_K.height, ROOM_K.width, 3)


class TestPairsAndEval:
    def test_pairs_then_eval(self, room_cli, tmp_path):
        out = tmp_path / "out"
        assert main([
            "pairs",
            "--ply", str(room_cli / "cloud.ply"),
            "--cameras", str(room_cli / "cameras.json"),
            "--out", str(out),
        ]) == 0
        manifest = json.loads((out / "pairs.json").read_text())
        assert len(manifest["pairs"]) == 4
        csv_text = (out / "pairs.csv").read_text().splitlines()
        assert csv_text[0] == "view_id,rendered,ground_truth"
        assert len(csv_text) == 5

        assert main([
            "eval", "--pairs", str(out / "pairs.csv"), "--out", str(out),
        ]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["mean_psnr"] > 0.0
        assert (out / "scores.csv").exists()
        assert (out / "histogram.csv").exists()

    def test_eval_identical_pairs_sdp_zero(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, size=(16, 20, 3)) / 255.0
        save_image(img, tmp_path / "r.png")
        (tmp_path / "pairs.csv").write_text(
            "view_id,rendered,ground_truth\n0,r.png,r.png\n"
        )
        out = tmp_path / "out"
        assert main(["eval", "--pairs", str(tmp_path / "pairs.csv"), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["sdp"] == 0.0
        assert report["mean_ssim"] == pytest.approx(1.0, abs=1e-9)

    def test_eval_rejects_bad_header(self, tmp_path, capsys):
        (tmp_path / "pairs.csv").write_text("a,b\nx.png,y.png\n")
        assert main(["eval", "--pairs", str(tmp_path / "pairs.csv"),
                     "--out", str(tmp_path / "out")]) == 2


class TestSplitCommand:
    def _write_line_scene(self, directory, n):
        rng = np.random.default_rng(2)
        pts = rng.uniform(0, 5, size=(30, 3))
        cloud = PointCloud(pts, rng.uniform(0, 1, size=(30, 3)))
        views = [
            SourceView(id=i, pose=six_directions(np.array([float(i), 0.0, 0.0]))[0],
                       intrinsics=ROOM_K, image=constant_image(VIEW_COLORS[i % 4]))
            for i in range(n)
        ]
        write_scene(Scene(cloud=cloud, views=views), directory)

    def test_ratio_one_to_seven(self, tmp_path):
        self._write_line_scene(tmp_path / "scene", 8)
        out = tmp_path / "out"
        assert main([
            "split", "--cameras", str(tmp_path / "scene" / "cameras.json"),
            "--out", str(out), "--ratio", "1:7",
        ]) == 0
        test_ids = json.loads((out / "test_ids.json").read_text())
        train_ids = json.loads((out / "train_ids.json").read_text())
        assert len(test_ids) == 1
        assert len(train_ids) == 7
        assert set(test_ids) | set(train_ids) == set(range(8))

    def test_k_equals_n_minus_one(self, tmp_path):
        self._write_line_scene(tmp_path / "scene", 5)
        out = tmp_path / "out"
        assert main([
            "split", "--cameras", str(tmp_path / "scene" / "cameras.json"),
            "--out", str(out), "--k", "4",
        ]) == 0
        assert len(json.loads((out / "train_ids.json").read_text())) == 1

    def test_collinear_endpoints_chosen(self, tmp_path):
        self._write_line_scene(tmp_path / "scene", 10)
        out = tmp_path / "out"
        assert main([
            "split", "--cameras", str(tmp_path / "scene" / "cameras.json"),
            "--out", str(out), "--k", "2",
        ]) == 0
        assert json.loads((out / "test_ids.json").read_text()) == [0, 9]

    def test_k_out_of_range(self, tmp_path, capsys):
        self._write_line_scene(tmp_path / "scene", 4)
        assert main([
            "split", "--cameras", str(tmp_path / "scene" / "cameras.json"),
            "--out", str(tmp_path / "out"), "--k", "4",
        ]) == 2
