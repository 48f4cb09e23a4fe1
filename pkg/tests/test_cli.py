"""
Tests for the hvsisp command-line interface
"""

import json

import numpy as np
import pandas as pd
import pytest

from src.calibration import calibrate_dark
from src.cli import main
from src.color import srgb_encode
from src.data_models import ColorSpace, DarkCalibration, ExposureMeta, PatchColors, RgbImage
from src.frame_io import (
    read_ccm, read_dark_calibration, read_events, read_rgb_png, read_voxel, write_checker_annotation,
    write_dark_calibration, write_events, write_patch_colors, write_raw, write_rgb_png,
)
from src.pipeline import STAGE_ORDER
from src.synthetic import flicker_stream
from tests.fixtures.isp_data import SENSOR_MIXING, create_checker_raw, create_dark_frames
from tests.utils.helpers import CONFIG_DIR, create_test_manifest, load_json_file

REFERENCE = str(CONFIG_DIR / "colorchecker_reference.json")


def run_cli(capsys, *argv):
    """Run main with --json and return (exit code, parsed stdout)"""
    code = main(["--json", *map(str, argv)])
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


@pytest.fixture
def event_file(temp_dir):
    path = temp_dir / "stream.evt"
    write_events(flicker_stream(frequency_hz=100.0, duration_us=500_000), path)
    return path


class TestUsage:
    """Test argument handling and exit codes"""

    def test_unknown_command(self, capsys):
        code, doc = run_cli(capsys, "frobnicate")
        assert code == 1
        assert doc["status"] == "error"
        assert doc["error"] == "UsageError"

    def test_help_exits_cleanly(self, capsys):
        assert main(["--help"]) == 0
        assert "calibrate-dark" in capsys.readouterr().out

    def test_missing_input_file(self, capsys, temp_dir):
        code, doc = run_cli(capsys, "run", temp_dir / "absent.pgm", "--config", CONFIG_DIR / "isp_config.yaml",
                            "--out", temp_dir / "out.png")
        assert code == 1
        assert doc["error"] == "IoError"
        assert doc["exit_code"] == 1

    def test_plain_output(self, capsys, temp_dir):
        paths = []
        for i, frame in enumerate(create_dark_frames(4, 4, np.zeros(4), count=5)):
            paths.append(temp_dir / f"dark_{i}.pgm")
            write_raw(frame, paths[-1])
        assert main(["calibrate-dark", *map(str, paths), "--out", str(temp_dir / "dark.json")]) == 0
        assert "blc: 64.0" in capsys.readouterr().out


class TestCalibrateDark:

    def test_single_calibration(self, capsys, temp_dir):
        fpn = np.array([0.0, 2.0, 1.0, 3.0])
        paths = []
        for i, frame in enumerate(create_dark_frames(4, 6, fpn, count=3)):
            paths.append(temp_dir / f"dark_{i}.pgm")
            write_raw(frame, paths[-1])
        code, doc = run_cli(capsys, "calibrate-dark", *paths, "--out", temp_dir / "dark.json",
                            "--exposure-time", 1000)
        assert code == 0
        assert doc["blc"] == 64.0
        assert doc["fpn_max"] == 3.0
        assert doc["frames"] == 3
        assert any("recommended" in w for w in doc["warnings"])
        calib = read_dark_calibration(temp_dir / "dark.json")
        assert calib.fpn.tolist() == fpn.tolist()
        assert calib.exposure_time == 1000.0

    def test_library(self, capsys, temp_dir):
        paths = []
        for exposure, blc in ((1000.0, 60.0), (2000.0, 70.0)):
            for i, frame in enumerate(create_dark_frames(4, 4, np.zeros(4), count=2, blc=blc)):
                frame.exposure = ExposureMeta(0.0, 10.0, exposure)
                paths.append(temp_dir / f"dark_{int(exposure)}_{i}.pgm")
                write_raw(frame, paths[-1])
        code, doc = run_cli(capsys, "calibrate-dark", *paths, "--out", temp_dir / "library.json", "--library")
        assert code == 0
        assert doc["calibrations"] == [{"exposure_time": 1000.0, "blc": 60.0}, {"exposure_time": 2000.0, "blc": 70.0}]
        assert read_dark_calibration(temp_dir / "library.json").select(2000.0).blc == 70.0

    def test_append_to_library(self, capsys, temp_dir):
        """A later session adds its exposure to the library file and replaces a repeated one"""
        library_path = temp_dir / "library.json"
        sessions = [[(1000.0, 60.0)], [(2000.0, 70.0), (1000.0, 62.0)]]
        for session, entries in enumerate(sessions):
            paths = []
            for exposure, blc in entries:
                for i, frame in enumerate(create_dark_frames(4, 4, np.zeros(4), count=2, blc=blc)):
                    frame.exposure = ExposureMeta(0.0, 10.0, exposure)
                    paths.append(temp_dir / f"dark_{session}_{int(exposure)}_{i}.pgm")
                    write_raw(frame, paths[-1])
            code, doc = run_cli(capsys, "calibrate-dark", *paths, "--out", library_path, "--append")
            assert code == 0
        assert doc["calibrations"] == [{"exposure_time": 1000.0, "blc": 62.0}, {"exposure_time": 2000.0, "blc": 70.0}]
        assert any("replaced" in w for w in doc["warnings"])
        library = read_dark_calibration(library_path)
        assert library.select(1000.0).blc == 62.0
        assert library.select(2000.0).blc == 70.0

    def test_append_needs_tagged_calibration(self, capsys, temp_dir):
        write_dark_calibration(DarkCalibration(blc=64.0, fpn=np.zeros(4)), temp_dir / "dark.json")
        frame = create_dark_frames(4, 4, np.zeros(4), count=1)[0]
        write_raw(frame, temp_dir / "dark_0.pgm")
        code, doc = run_cli(capsys, "calibrate-dark", temp_dir / "dark_0.pgm", "--out", temp_dir / "dark.json",
                            "--append", "--exposure-time", 1000)
        assert code == 1
        assert doc["error"] == "ConfigError"

    def test_no_frames(self, capsys, temp_dir):
        code, doc = run_cli(capsys, "calibrate-dark", "--out", temp_dir / "dark.json")
        assert code == 1
        assert doc["error"] == "EmptyInputError"


class TestRun:
    """Test the run command on a synthetic chart capture"""

    @pytest.fixture
    def capture(self, temp_dir, checker_scene, scene_fpn):
        scene, ann = checker_scene
        write_raw(create_checker_raw(scene, fpn=scene_fpn), temp_dir / "chart.pgm")
        write_checker_annotation(ann, temp_dir / "chart.json")
        write_dark_calibration(calibrate_dark(create_dark_frames(128, 128, scene_fpn)), temp_dir / "dark.json")
        return temp_dir

    def test_full_run(self, capsys, capture):
        code, doc = run_cli(capsys, "run", capture / "chart.pgm", "--config", CONFIG_DIR / "isp_config.yaml",
                            "--calib", capture / "dark.json", "--checker", capture / "chart.json",
                            "--out", capture / "chart.png", "--report", capture / "report.json")
        assert code == 0
        assert doc["status"] == "ok"
        assert doc["stages"] == list(STAGE_ORDER)
        assert len(doc["ccm"]) == 3
        image = read_rgb_png(capture / "chart.png")
        assert image.data.shape == (128, 128, 3)
        report = load_json_file(capture / "report.json")
        assert [stage["name"] for stage in report["stages"]] == list(STAGE_ORDER)
        assert "elapsed_ms" in report["stages"][0]

    def test_missing_annotation_names_stage(self, capsys, capture):
        code, doc = run_cli(capsys, "run", capture / "chart.pgm", "--config", CONFIG_DIR / "isp_config.yaml",
                            "--calib", capture / "dark.json", "--out", capture / "chart.png")
        assert code == 1
        assert doc["error"] == "ConfigError"
        assert doc["stage"] == "wb"
        assert not (capture / "chart.png").exists()


class TestCcmFit:

    def test_fit_writes_matrix(self, capsys, temp_dir, reference_patches):
        write_patch_colors(PatchColors(reference_patches.values @ SENSOR_MIXING), temp_dir / "measured.json")
        code, doc = run_cli(capsys, "ccm-fit", temp_dir / "measured.json", REFERENCE, "--out", temp_dir / "ccm.json")
        assert code == 0
        assert np.array(doc["matrix"]).shape == (3, 3)
        assert doc["fit"]["final_objective"] <= doc["fit"]["identity_objective"]
        assert doc["fit"]["mean_delta_e00"] < 1.0
        assert np.allclose(read_ccm(temp_dir / "ccm.json"), doc["matrix"])

    def test_white_preserve(self, capsys, temp_dir, reference_patches):
        write_patch_colors(PatchColors(reference_patches.values @ SENSOR_MIXING), temp_dir / "measured.json")
        code, doc = run_cli(capsys, "ccm-fit", temp_dir / "measured.json", REFERENCE, "--out", temp_dir / "ccm.json",
                            "--white-preserve", "--no-exposure-normalize")
        assert code == 0
        assert np.allclose(np.array(doc["matrix"]).sum(axis=0), 1.0, atol=1e-6)


class TestEventCommands:
    """Test the events subcommands"""

    def test_simulate(self, capsys, temp_dir):
        write_rgb_png(RgbImage(np.full((8, 8, 3), 0.2), ColorSpace.SRGB), temp_dir / "f0.png")
        write_rgb_png(RgbImage(np.full((8, 8, 3), 0.8), ColorSpace.SRGB), temp_dir / "f1.png")
        code, doc = run_cli(capsys, "events", "simulate", temp_dir / "f0.png", temp_dir / "f1.png",
                            "--theta", 0.2, "--t0", 0, "--t1", 1000, "--out", temp_dir / "sim.evt")
        assert code == 0
        assert (doc["width"], doc["height"]) == (4, 4)
        assert doc["events"] > 0
        assert len(read_events(temp_dir / "sim.evt")) == doc["events"]

    def test_voxelize(self, capsys, temp_dir, event_file):
        code, doc = run_cli(capsys, "events", "voxelize", event_file, "--t0", 0, "--t1", 500_000, "--bins", 5,
                            "--out", temp_dir / "grid.vox")
        assert code == 0
        assert doc["bins"] == 5
        grid = read_voxel(temp_dir / "grid.vox")
        assert (grid.bins, grid.height, grid.width) == (5, 4, 4)

    def test_activity(self, capsys, temp_dir, event_file):
        code, doc = run_cli(capsys, "events", "activity", event_file, "--t0", 0, "--t1", 500_000,
                            "--out", temp_dir / "activity.csv")
        assert code == 0
        table = pd.read_csv(temp_dir / "activity.csv")
        assert table.shape == (4, 4)
        assert int(table.values.sum()) == doc["total"] == len(read_events(event_file))

    def test_rate(self, capsys, temp_dir, event_file):
        code, doc = run_cli(capsys, "events", "rate", event_file, "--bin-width", 1000, "--smooth-period", 10_000,
                            "--out", temp_dir / "rate.csv")
        assert code == 0
        assert doc["bins"] == 500
        table = pd.read_csv(temp_dir / "rate.csv")
        assert list(table.columns) == ["bin_start_us", "count", "rate_per_second", "smoothed_rate_per_second"]

    def test_flicker(self, capsys, event_file):
        code, doc = run_cli(capsys, "events", "flicker", event_file)
        assert code == 0
        assert doc["is_flickering"] is True
        assert doc["dominant_frequency"] == pytest.approx(100.0, abs=2.0)

    def test_flicker_short_stream(self, capsys, temp_dir):
        path = temp_dir / "short.csv"
        write_events(flicker_stream(duration_us=5_000), path)
        code, doc = run_cli(capsys, "events", "flicker", path)
        assert code == 1
        assert doc["error"] == "InsufficientDataError"
        assert doc["stage"] == "flicker"

    def test_illumination(self, capsys, event_file):
        code, doc = run_cli(capsys, "events", "illumination", event_file, "--bin-width", 1000, "--ratio", 10)
        assert code == 0
        assert doc["count"] == len(doc["changes"])


class TestEvalAndReports:
    """Test image-quality evaluation and manifest reports"""

    def test_eval_identical_images(self, capsys, temp_dir, rng):
        img = RgbImage(rng.random((16, 16, 3)), ColorSpace.SRGB)
        write_rgb_png(img, temp_dir / "a.png")
        write_rgb_png(img, temp_dir / "b.png")
        code, doc = run_cli(capsys, "eval", temp_dir / "a.png", temp_dir / "b.png", "--metrics", "psnr,ssim,l1")
        assert code == 0
        assert doc["psnr"] == "inf"
        assert doc["ssim"] == pytest.approx(1.0)
        assert doc["l1"] == 0.0

    def test_eval_unknown_metric(self, capsys, temp_dir):
        code, doc = run_cli(capsys, "eval", temp_dir / "a.png", temp_dir / "b.png", "--metrics", "lpips")
        assert code == 1
        assert doc["stage"] == "metrics"

    def test_eval_needs_images(self, capsys):
        code, doc = run_cli(capsys, "eval")
        assert code == 1
        assert doc["error"] == "ConfigError"

    def test_eval_manifest(self, capsys, temp_dir, rng):
        img = RgbImage(rng.random((16, 16, 3)), ColorSpace.SRGB)
        write_rgb_png(img, temp_dir / "pred.png")
        write_rgb_png(img, temp_dir / "ref.png")
        manifest = create_test_manifest([{"pred": "pred.png", "ref": "ref.png", "scene": "lab"}],
                                        temp_dir / "pairs.json")
        code, doc = run_cli(capsys, "eval", "--manifest", manifest, "--out-csv", temp_dir / "pairs.csv")
        assert code == 0
        assert doc["rows"] == 1
        assert [row["scene"] for row in doc["summary"]] == ["lab", "All-Average"]
        assert list(pd.read_csv(temp_dir / "pairs.csv").columns) == ["label", "scene", "psnr", "ssim", "l1"]

    def test_color_accuracy_report(self, capsys, temp_dir, checker_scene):
        scene, ann = checker_scene
        entries = []
        for i in range(2):
            write_rgb_png(RgbImage(srgb_encode(scene.data), ColorSpace.SRGB), temp_dir / f"f{i}.png")
            write_checker_annotation(ann, temp_dir / f"f{i}.json")
            entries.append({"frame": f"f{i}.png", "annotation": f"f{i}.json"})
        manifest = create_test_manifest(entries, temp_dir / "frames.json")

        code, doc = run_cli(capsys, "report", "color-accuracy", "--reference", REFERENCE, "--manifest", manifest,
                            "--out-csv", temp_dir / "de.csv", "--out-json", temp_dir / "de.json")
        assert code == 0
        assert doc["frames"] == 2
        assert doc["mean_de00"] < 1.0
        assert len(pd.read_csv(temp_dir / "de.csv")) == 48
        assert load_json_file(temp_dir / "de.json")["aggregates"]["frames"] == 2

        code, doc = run_cli(capsys, "report", "stability", "--manifest", manifest,
                            "--out-csv", temp_dir / "st.csv", "--out-json", temp_dir / "st.json")
        assert code == 0
        assert doc["overall_max"] == 0.0
