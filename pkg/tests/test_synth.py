import math
from dataclasses import replace

import numpy as np
import pytest

from lanecal import roll_height as rh
from lanecal.errors import ConfigError
from lanecal.geometry import vd_of_pitch_yaw
from lanecal.pipeline import boundary_lines
from lanecal.synth import (
    SceneConfig,
    extrinsics_at,
    generate_frame,
    generate_sequence,
    rmse_from_rows,
    run_monte_carlo,
)
from lanecal.vp import line_point_angles


def test_config_validation():
    for bad in (dict(n_frames=0), dict(n_lanes=1), dict(noise_var_px2=-1.0), dict(point_spacing_px=0.0),
                dict(height0=0.04, amp_height=0.05)):
        with pytest.raises(ConfigError):
            SceneConfig(**bad)


def test_boundary_geometry_matches_config():
    cfg = SceneConfig(n_lanes=5, lane_width_m=3.5, lateral_offset_m=0.3)
    xb = cfg.boundary_offsets()
    assert len(xb) == 6
    assert np.allclose(np.diff(xb), 3.5, atol=1e-15)
    assert abs(xb.mean() - 0.3) < 1e-12


def test_trajectory_is_sinusoidal():
    cfg = SceneConfig()
    assert extrinsics_at(cfg, 0).as_array() == pytest.approx([cfg.pitch0, cfg.yaw0, cfg.roll0, cfg.height0])
    e = extrinsics_at(cfg, 25)  # quarter period
    assert e.theta == pytest.approx(cfg.pitch0 + cfg.amp_pitch)
    assert e.h == pytest.approx(cfg.height0 + cfg.amp_height)


def test_deterministic():
    cfg = SceneConfig(n_frames=5, noise_var_px2=2.0, outlier_fraction=0.1, rng_seed=99)
    a, b = generate_sequence(cfg), generate_sequence(cfg)
    for x, y in zip(a, b):
        assert np.array_equal(x.segments.p1, y.segments.p1) and np.array_equal(x.segments.p2, y.segments.p2)
        assert np.array_equal(x.segments.boundary_id, y.segments.boundary_id)
    c = generate_sequence(replace(cfg, rng_seed=100))
    assert not np.array_equal(a[0].segments.p1, c[0].segments.p1)


def test_noiseless_segments_hit_true_vp():
    cfg = SceneConfig(n_frames=30, rng_seed=5)
    for obs in generate_sequence(cfg):
        ang = line_point_angles(vd_of_pitch_yaw(obs.gt.theta, obs.gt.phi), obs.segments, cfg.intrinsics)
        assert np.nanmax(ang) < 1e-8
        s = obs.segments
        for p in (s.p1, s.p2):
            assert p[:, 0].min() >= 0 and p[:, 0].max() <= cfg.width - 1
            assert p[:, 1].min() >= 0 and p[:, 1].max() <= cfg.height - 1


def test_segment_counts():
    cfg = SceneConfig(n_frames=50, rng_seed=2)
    seq = generate_sequence(cfg)
    assert np.mean([len(o.segments) for o in seq]) >= 300
    for o in seq:
        assert set(np.unique(o.segments.boundary_id)) == set(range(6))
        assert np.bincount(o.segments.boundary_id).max() <= cfg.max_pairs_per_boundary


def test_endpoint_noise_variance():
    clean_cfg = SceneConfig(rng_seed=0)
    noisy_cfg = replace(clean_cfg, noise_var_px2=1.0)
    d = []
    n = 0
    t = 0
    while n < 100_000:
        clean = generate_frame(clean_cfg, t, np.random.default_rng([7, t]))
        noisy = generate_frame(noisy_cfg, t, np.random.default_rng([7, t]))
        for a, b in ((clean.segments.p1, noisy.segments.p1), (clean.segments.p2, noisy.segments.p2)):
            d.append((b - a).ravel())
        n += 2 * len(clean.segments)
        t += 1
    d = np.concatenate(d)
    assert abs(d.var() - 1.0) < 0.1
    assert abs(d.mean()) < 0.01


def test_outliers_point_away_from_true_vp():
    cfg = SceneConfig(n_frames=10, outlier_fraction=0.2, rng_seed=4)
    for obs in generate_sequence(cfg):
        assert abs(obs.outlier.mean() - 0.2) < 0.01
        ang = line_point_angles(vd_of_pitch_yaw(obs.gt.theta, obs.gt.phi), obs.segments[obs.outlier],
                                cfg.intrinsics)
        assert ang.min() > cfg.outlier_min_angle


def test_noiseless_widths_consistent():
    cfg = SceneConfig(n_frames=20, rng_seed=8)
    for obs in generate_sequence(cfg):
        alpha, ok = rh.rectify_alphas(obs.segments, cfg.intrinsics, obs.gt.theta, obs.gt.phi)
        assert ok.all()
        lines = boundary_lines(alpha, obs.segments.boundary_id)
        for pair in rh.pair_lanes(lines, obs.gt.psi, obs.gt.h):
            w = rh.lane_width(obs.gt.psi, obs.gt.h, pair.left.alpha, pair.right.alpha)
            assert abs(w - cfg.lane_width_m) < 1e-9


def test_rmse_from_rows():
    gts = {(0, f): {"pitch_deg": 1.0, "yaw_deg": 0.0, "roll_deg": 0.0, "height_m": 1.5} for f in range(4)}
    rows = [{"frame": f, "pitch_deg": 1.0 + e, "yaw_deg": 0.0, "roll_deg": 0.0, "height_m": 1.5 + e / 100}
            for f, e in enumerate([9.0, 3.0, -4.0, 0.0])]
    r = rmse_from_rows(rows, gts, burn_in=1)
    assert r["pitch_deg"] == pytest.approx(math.sqrt(25 / 3))
    assert r["height_cm"] == pytest.approx(math.sqrt(25 / 3))
    with pytest.raises(ValueError):
        rmse_from_rows(rows, gts, burn_in=10)


def test_monte_carlo_noiseless():
    table = run_monte_carlo(SceneConfig(n_frames=60, rng_seed=1), runs=3)
    assert table.runs == 3 and not table.failed_runs
    assert max(table.pitch_deg, table.yaw_deg, table.roll_deg) < 0.01 and table.height_cm < 0.1


def test_monte_carlo_reports_failures(monkeypatch):
    from lanecal import synth

    real = synth._one_run

    def flaky(args):
        if args[2] == 1:
            raise RuntimeError("boom")
        return real(args)

    monkeypatch.setattr(synth, "_one_run", flaky)
    table = run_monte_carlo(SceneConfig(n_frames=25, rng_seed=1), runs=2)
    assert table.runs == 1 and table.failed_runs[0][0] == 1 and "boom" in table.failed_runs[0][1]
