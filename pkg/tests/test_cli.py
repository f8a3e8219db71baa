"""Tests for the command-line entry point."""

import json
import math

import pytest

from screwsplat.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from screwsplat.errors import NonFiniteLossError


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("laptop")
    code = main(["--out-dir", str(out), "synth", "--preset", "laptop", "--cameras", "4", "--configs", "2",
                 "--size", "16x16"])
    assert code == EXIT_OK
    return out


class TestUsage:
    def test_version(self, capsys):
        assert main(["--version"]) == EXIT_OK
        assert "screwsplat" in capsys.readouterr().out

    def test_missing_command(self):
        assert main([]) == EXIT_USAGE

    def test_unknown_flag(self):
        assert main(["synth", "--preset", "laptop", "--bogus"]) == EXIT_USAGE

    def test_theta_length(self, data_dir, tmp_path):
        args = ["--out-dir", str(tmp_path), "render", "--model", str(data_dir / "gt_model.json"),
                "--theta", "0.1,0.2", "--orbit", "1"]
        assert main(args) == EXIT_USAGE

    def test_malformed_theta(self, data_dir, tmp_path):
        args = ["--out-dir", str(tmp_path), "render", "--model", str(data_dir / "gt_model.json"),
                "--theta", "a,b", "--orbit", "1"]
        assert main(args) == EXIT_USAGE

    def test_camera_needs_dataset(self, data_dir, tmp_path):
        args = ["--out-dir", str(tmp_path), "render", "--model", str(data_dir / "gt_model.json"), "--camera", "0"]
        assert main(args) == EXIT_USAGE


class TestSynth:
    def test_writes_dataset(self, data_dir):
        manifest = json.loads((data_dir / "dataset.json").read_text())
        assert len(manifest["observations"]) == 8
        assert (data_dir / "gt_model.json").exists()
        assert (data_dir / manifest["observations"][0]["file"]).exists()

    def test_echoes_config(self, data_dir):
        config = json.loads((data_dir / "config.json").read_text())
        assert config["preset"] == "laptop"
        assert config["resolved"]["synth"]["width"] == 16

    def test_unknown_preset(self, tmp_path):
        assert main(["--out-dir", str(tmp_path), "synth", "--preset", "fridge"]) == EXIT_INPUT

    def test_global_flags_after_subcommand(self, tmp_path):
        args = ["synth", "--preset", "laptop", "--cameras", "1", "--configs", "2", "--size", "8x8", "--seed", "7",
                "--out-dir", str(tmp_path)]
        assert main(args) == EXIT_OK
        assert json.loads((tmp_path / "dataset.json").read_text())["seed"] == 7
        assert json.loads((tmp_path / "config.json").read_text())["seed"] == 7

    def test_global_flag_before_subcommand_kept(self, tmp_path):
        args = ["--seed", "5", "--out-dir", str(tmp_path), "synth", "--preset", "laptop", "--cameras", "1",
                "--configs", "2", "--size", "8x8"]
        assert main(args) == EXIT_OK
        assert json.loads((tmp_path / "dataset.json").read_text())["seed"] == 5

    def test_bad_size_is_usage_error(self, tmp_path):
        assert main(["--out-dir", str(tmp_path), "synth", "--preset", "laptop", "--size", "64"]) == EXIT_USAGE


class TestFit:
    def test_tiny_fit(self, data_dir, tmp_path):
        args = ["--out-dir", str(tmp_path), "fit", "--dataset", str(data_dir), "--iters", "10", "--gaussians", "30"]
        assert main(args) == EXIT_OK
        assert (tmp_path / "model.json").exists()
        assert len((tmp_path / "loss.csv").read_text().splitlines()) == 11
        config = json.loads((tmp_path / "config.json").read_text())
        assert config["resolved"]["fit"]["iterations"] == 10
        assert config["resolved"]["init"]["n_gaussians"] == 30

    def test_missing_dataset(self, tmp_path):
        assert main(["--out-dir", str(tmp_path), "fit", "--dataset", str(tmp_path / "nope")]) == EXIT_INPUT

    def test_non_finite_loss(self, data_dir, tmp_path, monkeypatch):
        def explode(*args, **kwargs):
            raise NonFiniteLossError("loss is nan", dump_path=str(tmp_path / "dump.json"))

        monkeypatch.setattr("screwsplat.cli.fit", explode)
        assert main(["--out-dir", str(tmp_path), "fit", "--dataset", str(data_dir)]) == EXIT_NUMERIC


class TestRender:
    def test_orbit(self, data_dir, tmp_path):
        args = ["--out-dir", str(tmp_path), "render", "--model", str(data_dir / "gt_model.json"),
                "--theta", "0.5", "--orbit", "2", "--size", "8x8"]
        assert main(args) == EXIT_OK
        assert sorted(p.name for p in tmp_path.glob("render_*.png")) == ["render_000.png", "render_001.png"]

    def test_dataset_camera(self, data_dir, tmp_path):
        args = ["--out-dir", str(tmp_path), "render", "--model", str(data_dir / "gt_model.json"),
                "--config", "1", "--camera", "1", "--dataset", str(data_dir)]
        assert main(args) == EXIT_OK
        assert (tmp_path / "render_000.png").exists()


class TestEval:
    def test_ground_truth_scores_well(self, data_dir, tmp_path, capsys):
        args = ["--out-dir", str(tmp_path), "eval", "--model", str(data_dir / "gt_model.json"),
                "--dataset", str(data_dir)]
        assert main(args) == EXIT_OK
        assert capsys.readouterr().out.startswith("laptop,")
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["ang_err"][0] == pytest.approx(0.0, abs=1e-5)
        # holdout PNGs are quantized, so PSNR is large but finite
        assert report["psnr"] > 40.0 or report["psnr"] == math.inf


class TestPlan:
    def test_writes_trajectory(self, data_dir, tmp_path):
        args = ["--out-dir", str(tmp_path), "plan", "--model", str(data_dir / "gt_model.json"), "--screw", "0",
                "--theta-c", "0.2", "--theta-t", "1.0", "--steps", "5"]
        assert main(args) == EXIT_OK
        trajectory = json.loads((tmp_path / "trajectory.json").read_text())
        assert len(trajectory["tip_points"]) == 5
        assert trajectory["theta_samples"][0] == pytest.approx(0.15)

    def test_out_of_limits(self, data_dir, tmp_path):
        args = ["--out-dir", str(tmp_path), "plan", "--model", str(data_dir / "gt_model.json"), "--screw", "0",
                "--theta-c", "0.2", "--theta-t", "3.0"]
        assert main(args) == EXIT_INPUT
