import sqlite3
from pathlib import Path

import numpy as np
import pytest

import app
from basins import load_raster

SMALL = [
    "--set", "classify.n_transient=200",
    "--set", "classify.window=400",
    "--set", "classify.n_max=2000",
    "--set", "sweep.resolution=16,16",
    "--set", "intermingle.scales=1,2",
]


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv("KAN_LAB_WORKERS", raising=False)
    monkeypatch.delenv("KAN_LAB_OUT", raising=False)


def _run_rows(out):
    conn = sqlite3.connect(out / "kan_lab.db")
    try:
        return conn.execute("SELECT subcommand, stage, exit_status FROM run ORDER BY id").fetchall()
    finally:
        conn.close()


def test_show_writes_manifest(tmp_path):
    assert app.main(["show", "--out", str(tmp_path), "--stage", "F1"]) == app.EXIT_OK
    manifest = dict(line.split("=", 1) for line in (tmp_path / "manifest.txt").read_text().splitlines())
    assert manifest["subcommand"] == "show" and manifest["stage"] == "F1"
    assert len(manifest["config_hash"]) == 64
    assert "stage = F1" in (tmp_path / "config.txt").read_text().splitlines()
    assert _run_rows(tmp_path) == [("show", "F1", 0)]


@pytest.mark.parametrize("argv", [["--set", "nope=1"], ["--set", "profile.k=4"], ["--config", "missing.cfg"]])
def test_configuration_errors_exit_2(tmp_path, argv):
    assert app.main(["show", "--out", str(tmp_path), *argv]) == app.EXIT_CONFIG


def test_skeleton_rejects_f0(tmp_path):
    assert app.main(["skeleton", "--out", str(tmp_path), "--stage", "F0"]) == app.EXIT_CONFIG
    assert _run_rows(tmp_path) == [("skeleton", "F0", 2)]


def test_validate_f0(tmp_path):
    status = app.main(["validate", "--out", str(tmp_path), "--stage", "F0", "--set", "validate.samples=500"])
    assert status == app.EXIT_OK
    assert (tmp_path / "report_P.csv").read_text().startswith("check,passed")
    assert not (tmp_path / "report_M.csv").exists()


GOLDEN = Path(__file__).parent / "golden" / "f0_16x16.ppm"
ON_CIRCLE = ["--set", "sweep.kind=FixFiber", "--set", "sweep.fixed_value=0.3333333333333333"]


def _criteria(out):
    text = (out / "criteria.txt").read_text()
    return {k.removeprefix("criteria."): v == "true" for k, v in (line.split("=", 1) for line in text.splitlines())}


class TestSweep:
    def test_slice_outputs(self, tmp_path):
        status = app.main(["sweep", "--out", str(tmp_path), "--stage", "F0", *SMALL])
        for name in ("basins.ppm", "raster.npz", "measure.txt", "intermingle.csv", "labels.csv", "criteria.txt"):
            assert (tmp_path / name).is_file(), name
        assert (tmp_path / "basins.ppm").read_bytes().startswith(b"P6\n16 16\n255\n")
        raster = load_raster(tmp_path / "raster.npz")
        assert raster.labels.shape == (16, 16) and raster.stage == "F0"
        criteria = _criteria(tmp_path)
        assert {"all_labels_present", "unresolved_bounded", "whole_slice_all_labels"} <= set(criteria)
        assert status == (app.EXIT_OK if all(criteria.values()) else app.EXIT_FAIL)

    def test_single_circle_slice_fails_the_label_criteria(self, tmp_path):
        assert app.main(["sweep", "--out", str(tmp_path), "--stage", "F0", *SMALL, *ON_CIRCLE]) == app.EXIT_FAIL
        criteria = _criteria(tmp_path)
        assert criteria["unresolved_bounded"]
        assert not criteria["all_labels_present"] and not criteria["whole_slice_all_labels"]

    def test_box_with_unresolved_points_fails(self, tmp_path):
        argv = [
            "sweep", "--box", "--out", str(tmp_path), "--stage", "F0",
            "--set", "sweep.grid=2,2,5", "--set", "intermingle.scales=1",
            "--set", "classify.n_transient=0", "--set", "classify.window=4", "--set", "classify.n_max=4",
        ]
        assert app.main(argv) == app.EXIT_FAIL
        assert not _criteria(tmp_path)["unresolved_bounded"]
        assert _run_rows(tmp_path) == [("sweep", "F0", 1)]

    def test_matches_committed_golden(self, tmp_path):
        argv = ["sweep", "--out", str(tmp_path), "--stage", "F0", *SMALL, *ON_CIRCLE, "--golden", str(GOLDEN)]
        app.main(argv)
        assert _criteria(tmp_path)["golden_match"]
        assert (tmp_path / "basins.ppm").read_bytes() == GOLDEN.read_bytes()

    def test_golden_cycle(self, tmp_path):
        golden = tmp_path / "golden" / "g.ppm"
        out = tmp_path / "run"
        base = ["sweep", "--out", str(out), "--stage", "F0", *SMALL, *ON_CIRCLE, "--golden", str(golden)]
        assert app.main(base) == app.EXIT_CONFIG
        app.main([*base, "--write-golden"])
        assert golden.read_bytes() == GOLDEN.read_bytes()
        app.main(base)
        assert _criteria(out)["golden_match"]
        golden.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        assert app.main(base) == app.EXIT_FAIL
        assert not _criteria(out)["golden_match"]

    def test_intermingle_from_saved_labels(self, tmp_path):
        app.main(["sweep", "--out", str(tmp_path), "--stage", "F0", *SMALL])
        status = app.main(["intermingle", "--out", str(tmp_path), "--labels", str(tmp_path / "raster.npz"), *SMALL])
        assert status in (app.EXIT_OK, app.EXIT_FAIL)
        text = (tmp_path / "intermingle.csv").read_text()
        assert text.startswith("scale,box_i,box_j,label,fraction")
        assert [r[0] for r in _run_rows(tmp_path)] == ["sweep", "intermingle"]


def test_sweep_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    app.main(["sweep", "--out", str(a), "--stage", "F0", *SMALL])
    app.main(["sweep", "--out", str(b), "--stage", "F0", "--workers", "2", *SMALL])
    np.testing.assert_array_equal(load_raster(a / "raster.npz").labels, load_raster(b / "raster.npz").labels)
    assert (a / "basins.ppm").read_bytes() == (b / "basins.ppm").read_bytes()
