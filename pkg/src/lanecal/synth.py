"""Synthetic planar-road sequences and Monte Carlo RMSE evaluation.

A straight road with ``n_lanes + 1`` parallel boundaries lies on the plane
``y = h`` of the road frame (x right, y down, z forward). Camera coordinates of
a road point ``g`` are ``R_CW(theta, phi) @ roll_matrix(psi).T @ g``, the
inverse of ``ipm.full_rotation``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .geometry import CameraIntrinsics, SegmentSet, roll_matrix, rotation_pitch_yaw, vd_of_pitch_yaw
from .vp import line_point_angles


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=1000.0, fy=1000.0, cx=960.0, cy=510.0)


def exact_degrees(rad: float) -> float:
    """Degrees value d nearest to degrees(rad) with radians(d) == rad, when one exists.

    Keeps files written in degrees bit-exact on re-read.
    """
    d = math.degrees(rad)
    up = down = d
    for _ in range(4):
        for cand in (up, down):
            if math.radians(cand) == rad:
                return cand
        up, down = math.nextafter(up, math.inf), math.nextafter(down, -math.inf)
    return d


@dataclass(frozen=True)
class ExtrinsicEstimate:
    theta: float
    phi: float
    psi: float
    h: float
    std: tuple | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"camera height must be positive, got {self.h}")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.phi, self.psi, self.h])

    def to_dict(self) -> dict:
        return {
            "pitch_deg": exact_degrees(self.theta),
            "yaw_deg": exact_degrees(self.phi),
            "roll_deg": exact_degrees(self.psi),
            "height_m": self.h,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtrinsicEstimate":
        return cls(math.radians(d["pitch_deg"]), math.radians(d["yaw_deg"]),
                   math.radians(d["roll_deg"]), float(d["height_m"]))


@dataclass
class FrameObservation:
    frame_index: int
    segments: SegmentSet
    gt: ExtrinsicEstimate | None = None
    # True for injected outliers; never serialized
    outlier: np.ndarray | None = None


@dataclass(frozen=True)
class SceneConfig:
    n_frames: int = 300
    width: int = 1920
    height: int = 1020
    n_lanes: int = 5
    lane_width_m: float = 3.7
    lateral_offset_m: float = 0.0
    point_spacing_px: float = 30.0
    max_pairs_per_boundary: int = 70
    noise_var_px2: float = 0.0
    rng_seed: int = 0
    pitch0: float = math.radians(1.0)
    yaw0: float = math.radians(0.5)
    roll0: float = math.radians(0.3)
    height0: float = 1.5
    amp_pitch: float = math.radians(0.5)
    amp_yaw: float = math.radians(0.5)
    amp_roll: float = math.radians(0.5)
    amp_height: float = 0.05
    period: float = 100.0
    phases: tuple = (0.0, 0.0, 0.0, 0.0)
    min_depth: float = 0.5
    max_depth: float = 120.0
    outlier_fraction: float = 0.0
    outlier_min_angle: float = 5 * math.radians(0.7)
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)

    def __post_init__(self):
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        if self.n_lanes < 2:
            raise ConfigError("n_lanes must be >= 2")
        if self.noise_var_px2 < 0:
            raise ConfigError("noise variance must be non-negative")
        if self.point_spacing_px <= 0:
            raise ConfigError("point spacing must be positive")
        if not 0 <= self.outlier_fraction < 1:
            raise ConfigError("outlier_fraction must be in [0, 1)")
        if self.height0 - abs(self.amp_height) <= 0:
            raise ConfigError("camera would go below the road surface")

    def boundary_offsets(self) -> np.ndarray:
        """Lateral X of every boundary, centered on the camera plus ``lateral_offset_m``."""
        i = np.arange(self.n_lanes + 1)
        return (i - 0.5 * self.n_lanes) * self.lane_width_m + self.lateral_offset_m

    def constant(self) -> "SceneConfig":
        """Same scene without extrinsic motion."""
        return replace(self, amp_pitch=0.0, amp_yaw=0.0, amp_roll=0.0, amp_height=0.0)


def extrinsics_at(cfg: SceneConfig, t: int) -> ExtrinsicEstimate:
    w = 2 * math.pi * t / cfg.period
    ph = cfg.phases
    # angles snapped (by an ulp at most) to values a degree-valued file reproduces exactly
    snap = lambda a: math.radians(math.degrees(a))  # noqa: E731
    return ExtrinsicEstimate(
        snap(cfg.pitch0 + cfg.amp_pitch * math.sin(w + ph[0])),
        snap(cfg.yaw0 + cfg.amp_yaw * math.sin(w + ph[1])),
        snap(cfg.roll0 + cfg.amp_roll * math.sin(w + ph[2])),
        cfg.height0 + cfg.amp_height * math.sin(w + ph[3]),
    )


def road_to_camera(gt: ExtrinsicEstimate) -> np.ndarray:
    return rotation_pitch_yaw(gt.theta, gt.phi) @ roll_matrix(gt.psi).T


def _clip_segment(p0, p1, width, height):
    """Liang-Barsky clip of p0->p1 to [0, W-1] x [0, H-1]; returns None when invisible."""
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    for p, q in ((-d[0], p0[0]), (d[0], width - 1 - p0[0]), (-d[1], p0[1]), (d[1], height - 1 - p0[1])):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return p0 + t0 * d, p0 + t1 * d


def boundary_points(cfg: SceneConfig, gt: ExtrinsicEstimate, x_b: float) -> np.ndarray:
    """Visible image points spaced ``point_spacing_px`` apart along one boundary, near to far."""
    k = cfg.intrinsics
    m = road_to_camera(gt)
    a = m[:, 0] * x_b + m[:, 1] * gt.h
    b = m[:, 2]
    if b[2] <= 0:
        raise ConfigError("road direction does not point in front of the camera")
    z_near = max((cfg.min_depth - a[2]) / b[2], 1e-6) + 1e-9
    if z_near >= cfg.max_depth:
        return np.zeros((0, 2))
    ends = k.project(np.array([a + b * z_near, a + b * cfg.max_depth]))
    clipped = _clip_segment(ends[0], ends[1], cfg.width, cfg.height)
    if clipped is None:
        return np.zeros((0, 2))
    start, stop = clipped
    length = np.linalg.norm(stop - start)
    if length < cfg.point_spacing_px:
        return np.zeros((0, 2))
    s = np.arange(0.0, length + 1e-9, cfg.point_spacing_px)
    return start + s[:, None] * ((stop - start) / length)


def _sample_pairs(n: int, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    iu, ju = np.triu_indices(n, k=1)
    pick = rng.choice(len(iu), size=min(m, len(iu)), replace=False)
    return iu[pick], ju[pick]


def _outliers(cfg: SceneConfig, gt: ExtrinsicEstimate, count: int, rng: np.random.Generator):
    """Random segments below the horizon that do not point at the true VP."""
    k = cfg.intrinsics
    vd = vd_of_pitch_yaw(gt.theta, gt.phi)
    horizon = max(0.0, min(cfg.height - 2.0, k.project(vd)[1]))
    p1s, p2s = [], []
    while sum(len(p) for p in p1s) < count:
        n = 4 * (count + 4)
        mid = np.column_stack([rng.uniform(0, cfg.width - 1, n), rng.uniform(horizon, cfg.height - 1, n)])
        ang = rng.uniform(0, np.pi, n)
        half = 0.5 * rng.uniform(60.0, 400.0, n)
        off = np.column_stack([np.cos(ang), np.sin(ang)]) * half[:, None]
        p1, p2 = mid - off, mid + off
        inside = np.all((p1 >= 0) & (p2 >= 0) & (p1[:, :1] <= cfg.width - 1) & (p2[:, :1] <= cfg.width - 1)
                        & (p1[:, 1:] <= cfg.height - 1) & (p2[:, 1:] <= cfg.height - 1), axis=1)
        p1, p2 = p1[inside], p2[inside]
        theta = line_point_angles(vd, SegmentSet(p1, p2), k)
        far = np.nan_to_num(theta, nan=0.0) > cfg.outlier_min_angle
        p1s.append(p1[far])
        p2s.append(p2[far])
    return np.concatenate(p1s)[:count], np.concatenate(p2s)[:count]


def generate_frame(cfg: SceneConfig, t: int, rng: np.random.Generator) -> FrameObservation:
    gt = extrinsics_at(cfg, t)
    p1s, p2s, ids = [], [], []
    for bid, x_b in enumerate(cfg.boundary_offsets()):
        pts = boundary_points(cfg, gt, x_b)
        if len(pts) < 2:
            continue
        i, j = _sample_pairs(len(pts), cfg.max_pairs_per_boundary, rng)
        p1s.append(pts[i])
        p2s.append(pts[j])
        ids.append(np.full(len(i), bid))
    p1 = np.concatenate(p1s) if p1s else np.zeros((0, 2))
    p2 = np.concatenate(p2s) if p2s else np.zeros((0, 2))
    bid = np.concatenate(ids) if ids else np.zeros(0, dtype=int)
    if cfg.noise_var_px2 > 0:
        sigma = math.sqrt(cfg.noise_var_px2)
        p1 = p1 + rng.normal(0.0, sigma, p1.shape)
        p2 = p2 + rng.normal(0.0, sigma, p2.shape)
    outlier = np.zeros(len(p1), dtype=bool)
    if cfg.outlier_fraction > 0 and len(p1):
        n_out = int(round(cfg.outlier_fraction / (1 - cfg.outlier_fraction) * len(p1)))
        o1, o2 = _outliers(cfg, gt, n_out, rng)
        p1, p2 = np.concatenate([p1, o1]), np.concatenate([p2, o2])
        bid = np.concatenate([bid, np.full(n_out, -1)])
        outlier = np.concatenate([outlier, np.ones(n_out, dtype=bool)])
    return FrameObservation(t, SegmentSet(p1, p2, bid), gt, outlier)


def generate_sequence(cfg: SceneConfig) -> list[FrameObservation]:
    rng = np.random.default_rng(cfg.rng_seed)
    return [generate_frame(cfg, t, rng) for t in range(cfg.n_frames)]


def render_frame(cfg: SceneConfig, gt: ExtrinsicEstimate, stripe_m: float = 0.15,
                 supersample: int = 2) -> np.ndarray:
    """Grayscale image of the road: boundaries 255, asphalt 80, sky 0."""
    # road-frame ray of pixel (u, v) is linear in u and v
    m = road_to_camera(gt).T @ cfg.intrinsics.inverse
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    xb = cfg.boundary_offsets()
    u0 = np.arange(cfg.width, dtype=float)
    v0 = np.arange(cfg.height, dtype=float)[:, None]
    # rows entirely above the horizon stay black (ry is linear, so checking the corners suffices)
    corner_ry = np.maximum(m[1, 0] * -1.0, m[1, 0] * cfg.width) + m[1, 1] * (v0[:, 0] + 1.0) + m[1, 2]
    first = int(np.argmax(corner_ry > 0)) if np.any(corner_ry > 0) else cfg.height
    v0 = v0[first:]
    acc = np.zeros((cfg.height, cfg.width))
    for du in offs:
        for dv in offs:
            u, v = u0 + du, v0 + dv
            rx, ry, rz = (m[i, 0] * u + m[i, 1] * v + m[i, 2] for i in range(3))
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(ry > 0, gt.h / ry, np.nan)
            x = t * rx
            z = t * rz
            road = np.isfinite(t) & (z >= cfg.min_depth) & (z <= cfg.max_depth)
            # boundaries are evenly spaced, so the nearest one comes from rounding
            idx = np.clip(np.rint((x - xb[0]) / cfg.lane_width_m), 0, len(xb) - 1)
            dist = np.abs(x - (xb[0] + idx * cfg.lane_width_m))
            acc[first:] += np.where(road, np.where(dist <= 0.5 * stripe_m, 255.0, 80.0), 0.0)
    return np.clip(np.rint(acc / supersample**2), 0, 255).astype(np.uint8)


# --- Monte Carlo ----------------------------------------------------------------

@dataclass
class RmseTable:
    noise_var: float
    pitch_deg: float
    yaw_deg: float
    roll_deg: float
    height_cm: float
    runs: int
    burn_in: int
    failed_runs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"pitch_deg": self.pitch_deg, "yaw_deg": self.yaw_deg, "roll_deg": self.roll_deg,
                "height_cm": self.height_cm, "runs": self.runs, "burn_in": self.burn_in}


def run_seed(seed: int, run: int) -> int:
    return int(np.random.SeedSequence([seed, run]).generate_state(1)[0])


def rmse_from_rows(rows: Sequence[dict], gts: dict, burn_in: int) -> dict:
    """RMSE (deg, deg, deg, cm) of trace rows against ground truth dicts keyed by (run, frame)."""
    sq = np.zeros(4)
    n = 0
    for row in rows:
        if row["frame"] < burn_in:
            continue
        gt = gts[(row.get("run", 0), row["frame"])]
        err = np.array([row["pitch_deg"] - gt["pitch_deg"], row["yaw_deg"] - gt["yaw_deg"],
                        row["roll_deg"] - gt["roll_deg"], 100.0 * (row["height_m"] - gt["height_m"])])
        sq += err**2
        n += 1
    if n == 0:
        raise ValueError("no frames left after burn-in")
    r = np.sqrt(sq / n)
    return {"pitch_deg": float(r[0]), "yaw_deg": float(r[1]), "roll_deg": float(r[2]), "height_cm": float(r[3])}


def _one_run(args):
    from . import io, pipeline

    cfg, pcfg, run = args
    seq = generate_sequence(replace(cfg, rng_seed=run_seed(cfg.rng_seed, run)))
    results = pipeline.run_sequence(seq, pcfg)
    rows = [io.parse_trace_row(io.format_trace_row(r)) for r in results]
    gts = {obs.frame_index: obs.gt.to_dict() for obs in seq}
    return run, rows, gts


def run_monte_carlo(cfg: SceneConfig, runs: int, pcfg=None, burn_in: int = 20, jobs: int = 1) -> RmseTable:
    """Run the full pipeline on ``runs`` independently seeded sequences.

    Estimates pass through the trace text format before scoring, so an ``eval``
    of written traces reproduces these numbers exactly.
    """
    from . import pipeline

    if runs < 1:
        raise ValueError("runs must be >= 1")
    if pcfg is None:
        pcfg = pipeline.PipelineConfig(intrinsics=cfg.intrinsics, lane_width=cfg.lane_width_m)
    tasks = [(cfg, pcfg, r) for r in range(runs)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(_safe_run, tasks))
    else:
        outcomes = [_safe_run(t) for t in tasks]

    rows, gts, failed = [], {}, []
    for run, out in outcomes:
        if isinstance(out, Exception):
            failed.append((run, repr(out)))
            continue
        _, run_rows, run_gts = out
        for row in run_rows:
            rows.append(dict(row, run=run))
        gts.update({(run, f): g for f, g in run_gts.items()})
    if not rows:
        raise RuntimeError(f"all Monte Carlo runs failed: {failed}")
    r = rmse_from_rows(rows, gts, burn_in)
    return RmseTable(cfg.noise_var_px2, r["pitch_deg"], r["yaw_deg"], r["roll_deg"], r["height_cm"],
                     runs - len(failed), burn_in, failed)


def _safe_run(task):
    try:
        return task[2], _one_run(task)
    except Exception as exc:  # reported in RmseTable.failed_runs
        return task[2], exc
