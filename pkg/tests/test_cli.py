"""CLI tests: subcommands, artifacts, exit codes."""

import numpy as np
import pytest

from splatmap.cli import EXIT_CONFIG, EXIT_DATASET, EXIT_OK, main
from splatmap.dataio import read_metrics
from splatmap.geometry import Intrinsics
from splatmap.plyio import read_splat_ply
from splatmap.synth import make_bundle

INTR = Intrinsics(fx=40.0, fy=40.0, cx=15.5, cy=15.5, width=32, height=32)


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliscene") / "b"
    make_bundle(root, "random", n_gaussians=30, n_frames=3, seed=0, intr=INTR)
    return root


@pytest.fixture()
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text("keyframe_stride = 1\niters_per_kf = 4\n")
    return path


class TestSynth:
    def test_writes_bundle(self, tmp_path):
        out = tmp_path / "scene"
        code = main(["synth", "--scene", "random", "--gaussians", "100",
                     "--views", "8", "--out", str(out)])
        assert code == EXIT_OK
        arrays = read_splat_ply(out / "scene.ply")
        assert arrays["positions"].shape == (100, 3)
        assert len((out / "trajectory.txt").read_text().splitlines()) == 8

    def test_rejects_zero_counts(self, tmp_path):
        code = main(["synth", "--scene", "random", "--gaussians", "0",
                     "--views", "8", "--out", str(tmp_path / "x")])
        assert code == EXIT_CONFIG


class TestRun:
    def test_end_to_end(self, bundle, tiny_cfg, tmp_path):
        out = tmp_path / "out"
        code = main(["run", "--dataset", str(bundle), "--config", str(tiny_cfg),
                     "--out", str(out)])
        assert code == EXIT_OK
        metrics = read_metrics(out / "metrics.json")
        assert metrics["keyframes"] == 3
        assert (out / "map.ply").exists()

    def test_flag_overrides_config_seed(self, bundle, tiny_cfg, tmp_path):
        out = tmp_path / "out"
        code = main(["run", "--dataset", str(bundle), "--config", str(tiny_cfg),
                     "--out", str(out), "--seed", "7", "--max-frames", "2"])
        assert code == EXIT_OK
        assert read_metrics(out / "metrics.json")["config"]["seed"] == 7

    def test_bad_config_file_exits_2(self, bundle, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("no_such_key = 3\n")
        code = main(["run", "--dataset", str(bundle), "--config", str(cfg),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG

    def test_missing_dataset_exits_3(self, tiny_cfg, tmp_path):
        code = main(["run", "--dataset", str(tmp_path / "nowhere"),
                     "--config", str(tiny_cfg), "--out", str(tmp_path / "o")])
        assert code == EXIT_DATASET

    def test_argparse_flag_error_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--no-such-flag"])
        assert exc.value.code == 2
        capsys.readouterr()


class TestEvalAndExport:
    def test_eval_scores_saved_map(self, bundle, tmp_path):
        out = tmp_path / "eval"
        code = main(["eval", "--map", str(bundle / "scene.ply"),
                     "--dataset", str(bundle), "--out", str(out)])
        assert code == EXIT_OK
        metrics = read_metrics(out / "metrics.json")
        # evaluating the ground-truth scene against its own renders
        assert metrics["psnr_mean"] > 45.0
        assert metrics["primitive_count"] == 30
        assert metrics["model_bytes"] == 30 * 56

    def test_eval_missing_map_exits_3(self, bundle, tmp_path):
        code = main(["eval", "--map", str(tmp_path / "no.ply"),
                     "--dataset", str(bundle), "--out", str(tmp_path / "o")])
        assert code == EXIT_DATASET

    def test_eval_malformed_map_exits_3(self, bundle, tmp_path):
        bad = tmp_path / "bad.ply"
        bad.write_bytes(b"not a ply at all")
        code = main(["eval", "--map", str(bad), "--dataset", str(bundle),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_DATASET

    def test_export_selected_frames(self, bundle, tmp_path):
        out = tmp_path / "dump"
        code = main(["export", "--map", str(bundle / "scene.ply"),
                     "--dataset", str(bundle), "--out", str(out),
                     "--frames", "0", "2"])
        assert code == EXIT_OK
        assert (out / "frame_000000_color.png").exists()
        assert (out / "frame_000002_alpha.png").exists()
        assert not (out / "frame_000001_color.png").exists()

    def test_export_bad_frame_index_exits_2(self, bundle, tmp_path):
        code = main(["export", "--map", str(bundle / "scene.ply"),
                     "--dataset", str(bundle), "--out", str(tmp_path / "o"),
                     "--frames", "99"])
        assert code == EXIT_CONFIG


class TestAblations:
    def test_ablate_cells_artifacts(self, bundle, tiny_cfg, tmp_path):
        out = tmp_path / "cells"
        code = main(["ablate-cells", "--dataset", str(bundle),
                     "--config", str(tiny_cfg), "--out", str(out),
                     "--max-frames", "2", "--cells", "8", "16"])
        assert code == EXIT_OK
        result = read_metrics(out / "ablate_cells.json")
        assert [r["c"] for r in result["rows"]] == [8.0, 16.0]
        assert (out / "ablate_cells.csv").exists()

    def test_ablate_window_artifacts(self, bundle, tiny_cfg, tmp_path):
        out = tmp_path / "win"
        code = main(["ablate-window", "--dataset", str(bundle),
                     "--config", str(tiny_cfg), "--out", str(out),
                     "--max-frames", "2"])
        assert code == EXIT_OK
        rows = read_metrics(out / "ablate_window.json")["rows"]
        assert [r["window"] for r in rows] == ["dynamic", "fixed"]
        assert all("first_third_psnr" in r for r in rows)
