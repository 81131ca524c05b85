import json
import math

import numpy as np
import pytest

from lanecal import io
from lanecal.cli import main
from lanecal.errors import FormatError
from lanecal.geometry import CameraIntrinsics
from lanecal.pipeline import FrameResult
from lanecal.synth import ExtrinsicEstimate, SceneConfig, run_monte_carlo


def rows_to_results(rows):
    return [FrameResult(r["frame"], ExtrinsicEstimate(math.radians(r["pitch_deg"]), math.radians(r["yaw_deg"]),
                                                      math.radians(r["roll_deg"]), r["height_m"]),
                        r["inliers"], 0.0, 0.0, r["flags"]) for r in rows]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--frames", "120", "--noise-var", "1.0", "--seed", "42", "--outlier-fraction", "0.1",
                 "--out", str(d / "obs.jsonl"), "--intrinsics-out", str(d / "k.json")]) == 0
    assert main(["calibrate", "--intrinsics", str(d / "k.json"), "--obs", str(d / "obs.jsonl"),
                 "--lane-width", "3.7", "--trace", str(d / "trace.csv")]) == 0
    assert main(["eval", "--trace", str(d / "trace.csv"), "--obs", str(d / "obs.jsonl"),
                 "--out", str(d / "rmse.json")]) == 0
    return d


def test_observation_file_round_trip(workdir, tmp_path):
    frames = io.read_observations(workdir / "obs.jsonl")
    assert [f.frame_index for f in frames] == list(range(120))
    assert all(f.gt is not None for f in frames)
    io.write_observations(tmp_path / "again.jsonl", frames)
    assert (tmp_path / "again.jsonl").read_bytes() == (workdir / "obs.jsonl").read_bytes()


def test_trace_file_round_trip(workdir, tmp_path):
    rows = io.read_trace(workdir / "trace.csv")
    assert len(rows) == 120 and "init" in rows[0]["flags"]
    io.write_trace(tmp_path / "again.csv", rows_to_results(rows))
    assert (tmp_path / "again.csv").read_bytes() == (workdir / "trace.csv").read_bytes()


def test_small_files_round_trip(workdir, tmp_path):
    k = io.read_intrinsics(workdir / "k.json")
    assert k == CameraIntrinsics(1000.0, 1000.0, 960.0, 510.0)
    io.write_intrinsics(tmp_path / "k.json", k)
    assert (tmp_path / "k.json").read_bytes() == (workdir / "k.json").read_bytes()
    report = io.read_json(workdir / "rmse.json")
    io.write_rmse(tmp_path / "r.json", report)
    assert (tmp_path / "r.json").read_bytes() == (workdir / "rmse.json").read_bytes()
    hom = np.random.default_rng(0).normal(size=(3, 3))
    io.write_homography(tmp_path / "h.json", hom)
    assert np.array_equal(io.read_homography(tmp_path / "h.json"), hom)


def test_pipeline_is_deterministic_per_seed(workdir, tmp_path):
    main(["synth", "--frames", "120", "--noise-var", "1.0", "--seed", "42", "--outlier-fraction", "0.1",
          "--out", str(tmp_path / "obs.jsonl")])
    main(["calibrate", "--intrinsics", str(workdir / "k.json"), "--obs", str(tmp_path / "obs.jsonl"),
          "--lane-width", "3.7", "--trace", str(tmp_path / "trace.csv")])
    assert (tmp_path / "obs.jsonl").read_bytes() == (workdir / "obs.jsonl").read_bytes()
    assert (tmp_path / "trace.csv").read_bytes() == (workdir / "trace.csv").read_bytes()


def test_eval_matches_monte_carlo(workdir):
    report = io.read_json(workdir / "rmse.json")
    table = run_monte_carlo(SceneConfig(n_frames=120, noise_var_px2=1.0, rng_seed=42, outlier_fraction=0.1), 1)
    for key in ("pitch_deg", "yaw_deg", "roll_deg", "height_cm"):
        assert abs(report[key] - getattr(table, key)) < 1e-12
    assert report["runs"] == 1 and report["burn_in"] == 20


def test_format_errors(tmp_path):
    (tmp_path / "bad.jsonl").write_text('{"frame": 0, "segments": [{"p1": [1, 2]}]}\n')
    with pytest.raises(FormatError):
        io.read_observations(tmp_path / "bad.jsonl")
    (tmp_path / "junk.jsonl").write_text("not json\n")
    with pytest.raises(FormatError):
        io.read_observations(tmp_path / "junk.jsonl")
    (tmp_path / "t.csv").write_text("frame,pitch\n0,1\n")
    with pytest.raises(FormatError):
        io.read_trace(tmp_path / "t.csv")
    with pytest.raises(FormatError):
        io.parse_trace_row(["0", "x", "0", "0", "1.5", "3", ""])


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert main(["calibrate", "--intrinsics", str(tmp_path / "missing.json"), "--obs", "x",
                 "--trace", str(tmp_path / "t.csv")]) == 1
    assert "error" in capsys.readouterr().err
    (tmp_path / "k.json").write_text('{"fx": 1}')
    assert main(["ipm", "--intrinsics", str(tmp_path / "k.json"), "--pitch", "0", "--yaw", "0", "--roll", "0",
                 "--height", "1", "--out", str(tmp_path / "h.json")]) == 1


def test_eval_without_ground_truth_fails(workdir, tmp_path):
    frames = io.read_observations(workdir / "obs.jsonl")
    for f in frames:
        f.gt = None
    io.write_observations(tmp_path / "nogt.jsonl", frames)
    assert main(["eval", "--trace", str(workdir / "trace.csv"), "--obs", str(tmp_path / "nogt.jsonl"),
                 "--out", str(tmp_path / "r.json")]) == 1


def test_ipm_command(workdir, tmp_path):
    out = tmp_path / "h.json"
    assert main(["ipm", "--intrinsics", str(workdir / "k.json"), "--trace", str(workdir / "trace.csv"),
                 "--frame", "100", "--out", str(out)]) == 0
    hom = io.read_homography(out)
    assert hom.shape == (3, 3) and np.all(np.isfinite(hom))
    img = np.zeros((1020, 1920), dtype=np.uint8)
    img[600:, :] = 90
    from lanecal.ipm import write_image, read_image

    write_image(tmp_path / "in.pgm", img)
    assert main(["ipm", "--intrinsics", str(workdir / "k.json"), "--pitch", "1", "--yaw", "0", "--roll", "0",
                 "--height", "1.5", "--bx", "10", "--bz", "30", "--out", str(out),
                 "--image", str(tmp_path / "in.pgm"), "--warped", str(tmp_path / "bev.pgm")]) == 0
    assert read_image(tmp_path / "bev.pgm").shape == (600, 200)


def test_oracle_command(workdir, tmp_path):
    out = tmp_path / "oracle.csv"
    assert main(["oracle", "--intrinsics", str(workdir / "k.json"), "--obs", str(workdir / "obs.jsonl"),
                 "--out", str(out)]) == 0
    rows = io.read_trace(out)
    assert len(rows) == 120 and all(r["flags"] == ("oracle",) for r in rows)


def test_montecarlo_command(tmp_path, capsys):
    out = tmp_path / "mc.json"
    assert main(["montecarlo", "--frames", "40", "--runs", "2", "--noise-var", "0", "1", "--out", str(out)]) == 0
    recs = json.loads(out.read_text())
    assert [r["noise_var"] for r in recs] == [0.0, 1.0]
    assert all(r["runs"] == 2 and r["failed_runs"] == 0 for r in recs)
    assert capsys.readouterr().out.count("sigma2=") == 2
