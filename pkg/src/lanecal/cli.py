"""Command-line entry point: ``lanecal <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import replace

from . import io, ipm
from .errors import CalibrationError
from .pipeline import PipelineConfig, batch_oracle, run_sequence
from .synth import SceneConfig, generate_sequence, rmse_from_rows, run_monte_carlo, run_seed


def _scene(args, noise_var: float) -> SceneConfig:
    cfg = SceneConfig(n_frames=args.frames, noise_var_px2=noise_var, rng_seed=args.seed,
                      lane_width_m=args.lane_width, outlier_fraction=args.outlier_fraction)
    return cfg.constant() if args.constant else cfg


def _pipeline_config(args, intrinsics) -> PipelineConfig:
    d = io.read_json(args.config) if getattr(args, "config", None) else {}
    if args.lane_width is not None:
        d["lane_width"] = args.lane_width
    return PipelineConfig.from_dict(d, intrinsics=intrinsics)


def cmd_synth(args) -> int:
    base = _scene(args, args.noise_var)
    # sequence `run` of a Monte Carlo batch seeded with --seed
    cfg = replace(base, rng_seed=run_seed(args.seed, args.run))
    frames = generate_sequence(cfg)
    io.write_observations(args.out, frames)
    if args.intrinsics_out:
        io.write_intrinsics(args.intrinsics_out, cfg.intrinsics)
    n = sum(len(f.segments) for f in frames)
    print(f"wrote {len(frames)} frames, {n / len(frames):.1f} segments/frame -> {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    k = io.read_intrinsics(args.intrinsics)
    cfg = _pipeline_config(args, k)
    frames = io.read_observations(args.obs)
    t0 = time.perf_counter()
    results = run_sequence(frames, cfg)
    io.write_trace(args.trace, results)
    dt = time.perf_counter() - t0
    print(f"calibrated {len(results)} frames in {dt:.2f} s -> {args.trace}")
    if results:
        e = results[-1].estimate
        print(f"last: pitch {math.degrees(e.theta):.4f} deg, yaw {math.degrees(e.phi):.4f} deg, "
              f"roll {math.degrees(e.psi):.4f} deg, height {e.h:.4f} m")
    return 0


def cmd_eval(args) -> int:
    rows = io.read_trace(args.trace)
    gts = {}
    for obs in io.iter_observations(args.obs):
        if obs.gt is not None:
            gts[(0, obs.frame_index)] = obs.gt.to_dict()
    missing = [r["frame"] for r in rows if r["frame"] >= args.burn_in and (0, r["frame"]) not in gts]
    if missing:
        raise CalibrationError(f"no ground truth for frames {missing[:5]}{'...' if len(missing) > 5 else ''}")
    report = rmse_from_rows(rows, gts, args.burn_in)
    report.update(runs=1, burn_in=args.burn_in)
    io.write_rmse(args.out, report)
    print(json.dumps(report))
    return 0


def cmd_montecarlo(args) -> int:
    out = []
    failed_any = False
    for var in args.noise_var:
        cfg = _scene(args, var)
        t0 = time.perf_counter()
        table = run_monte_carlo(cfg, args.runs, burn_in=args.burn_in, jobs=args.jobs)
        dt = time.perf_counter() - t0
        for run, err in table.failed_runs:
            print(f"run {run} failed: {err}", file=sys.stderr)
            failed_any = True
        rec = {"noise_var": var, **table.to_dict(), "failed_runs": len(table.failed_runs)}
        out.append(rec)
        print(f"sigma2={var:<5g} pitch {table.pitch_deg:.4f} deg  yaw {table.yaw_deg:.4f} deg  "
              f"roll {table.roll_deg:.4f} deg  height {table.height_cm:.3f} cm  ({dt:.1f} s)")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(out, fh, indent=1)
            fh.write("\n")
    return 1 if failed_any and args.strict else 0


def cmd_ipm(args) -> int:
    k = io.read_intrinsics(args.intrinsics)
    if args.trace is not None:
        rows = {r["frame"]: r for r in io.read_trace(args.trace)}
        if args.frame not in rows:
            raise CalibrationError(f"frame {args.frame} not in {args.trace}")
        r = rows[args.frame]
        angles = (r["pitch_deg"], r["yaw_deg"], r["roll_deg"], r["height_m"])
    else:
        if None in (args.pitch, args.yaw, args.roll, args.height):
            raise CalibrationError("give --pitch --yaw --roll --height, or --trace with --frame")
        angles = (args.pitch, args.yaw, args.roll, args.height)
    bev = ipm.BevConfig(a_x=args.ax, a_z=args.az, b_x=args.bx, b_z=args.bz)
    hom = ipm.bev_homography(k, math.radians(angles[0]), math.radians(angles[1]),
                             math.radians(angles[2]), angles[3], bev)
    io.write_homography(args.out, hom)
    print(f"homography -> {args.out}")
    if args.image:
        if not args.warped:
            raise CalibrationError("--image needs --warped")
        src = ipm.read_image(args.image)
        w, h = bev.size
        ipm.write_image(args.warped, ipm.warp_image(src, hom, w, h))
        print(f"bird's-eye view {w}x{h} -> {args.warped}")
    return 0


def cmd_oracle(args) -> int:
    k = io.read_intrinsics(args.intrinsics)
    cfg = _pipeline_config(args, k)
    nfail = 0
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(io.TRACE_HEADER)
        for obs in io.iter_observations(args.obs):
            try:
                e = batch_oracle(obs, cfg)
                row = [obs.frame_index, f"{math.degrees(e.theta):.6f}", f"{math.degrees(e.phi):.6f}",
                       f"{math.degrees(e.psi):.6f}", f"{e.h:.5f}", len(obs.segments), "oracle"]
            except CalibrationError as exc:
                nfail += 1
                print(f"frame {obs.frame_index}: {exc}", file=sys.stderr)
                row = [obs.frame_index, "nan", "nan", "nan", "nan", len(obs.segments), "oracle|failed"]
            w.writerow(row)
    print(f"oracle estimates -> {args.out} ({nfail} frames failed)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lanecal", description="Lane-based camera extrinsic calibration.")
    sub = p.add_subparsers(dest="command", required=True)

    def scene_args(sp):
        sp.add_argument("--frames", type=int, default=300)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--lane-width", type=float, default=3.7)
        sp.add_argument("--outlier-fraction", type=float, default=0.0)
        sp.add_argument("--constant", action="store_true", help="hold the extrinsics fixed")

    sp = sub.add_parser("synth", help="generate a synthetic observation sequence")
    scene_args(sp)
    sp.add_argument("--noise-var", type=float, default=0.0, help="endpoint noise variance, px^2")
    sp.add_argument("--run", type=int, default=0, help="Monte Carlo run index within --seed")
    sp.add_argument("--out", required=True)
    sp.add_argument("--intrinsics-out")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("calibrate", help="run the sequential estimator over an observation file")
    sp.add_argument("--intrinsics", required=True)
    sp.add_argument("--obs", required=True)
    sp.add_argument("--lane-width", type=float)
    sp.add_argument("--config", help="JSON pipeline config (partial allowed)")
    sp.add_argument("--trace", required=True)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("eval", help="RMSE of a trace against the ground truth in an observation file")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--obs", required=True)
    sp.add_argument("--burn-in", type=int, default=20)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("montecarlo", help="RMSE over repeated noisy synthetic runs")
    scene_args(sp)
    sp.add_argument("--noise-var", type=float, nargs="+", default=[0.5, 1.0, 2.0, 4.0, 9.0])
    sp.add_argument("--runs", type=int, default=20)
    sp.add_argument("--burn-in", type=int, default=20)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--strict", action="store_true", help="exit nonzero if any run failed")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_montecarlo)

    sp = sub.add_parser("ipm", help="emit the bird's-eye-view homography, optionally warp an image")
    sp.add_argument("--intrinsics", required=True)
    sp.add_argument("--pitch", type=float, help="degrees")
    sp.add_argument("--yaw", type=float, help="degrees")
    sp.add_argument("--roll", type=float, help="degrees")
    sp.add_argument("--height", type=float, help="meters")
    sp.add_argument("--trace")
    sp.add_argument("--frame", type=int, default=0)
    sp.add_argument("--ax", type=float, default=20.0, help="BEV pixels per meter, lateral")
    sp.add_argument("--az", type=float, default=20.0, help="BEV pixels per meter, forward")
    sp.add_argument("--bx", type=float, default=24.0, help="BEV lateral extent, meters")
    sp.add_argument("--bz", type=float, default=60.0, help="BEV forward extent, meters")
    sp.add_argument("--out", required=True)
    sp.add_argument("--image", help="PGM/PPM input to warp")
    sp.add_argument("--warped", help="PGM/PPM output")
    sp.set_defaults(func=cmd_ipm)

    sp = sub.add_parser("oracle", help="per-frame batch estimate without temporal filtering")
    sp.add_argument("--intrinsics", required=True)
    sp.add_argument("--obs", required=True)
    sp.add_argument("--lane-width", type=float)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CalibrationError, OSError, ValueError, KeyError) as exc:
        print(f"lanecal {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
