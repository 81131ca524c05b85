"""Per-frame orchestration of the two estimation stages and the batch oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import pitch_yaw, roll_height
from .ekf import GaussianState
from .errors import CalibrationError, NonConvergence, TooFewBoundaries
from .geometry import CameraIntrinsics, SegmentSet, ngcs, pitch_yaw_from_vd
from .ipm import BevConfig, bev_homography
from .roll_height import GridSearch, RectifiedLine
from .synth import ExtrinsicEstimate, FrameObservation, default_intrinsics
from .vp import RansacConfig, VpResult, ransac_vp, solve_vp_svd

DEG = math.pi / 180.0


@dataclass(frozen=True)
class PipelineConfig:
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)
    lane_width: float = 3.7
    ransac: RansacConfig = RansacConfig()
    # process noise standard deviations per frame (velocity block only)
    w_py: tuple = (0.05 * DEG, 0.05 * DEG)
    q_py: float = math.sin(0.2 * DEG) ** 2
    w_rh: tuple = (0.05 * DEG, 0.01)
    q_rh: float = 0.05**2
    p0_py: tuple = (1.0 * DEG, 1.0 * DEG, 0.1 * DEG, 0.1 * DEG)
    p0_rh: tuple = (1.0 * DEG, 0.1, 0.1 * DEG, 0.01)
    py_gate: float | None = 5.0
    pair_gate: tuple = (0.5, 2.0)
    grid: GridSearch = GridSearch()
    dt: float = 1.0
    burn_in: int = 20
    nominal_height: float = 1.5
    # rectify with the pitch/yaw posterior of the same frame, or with the prediction
    rectify_with_posterior: bool = True
    bev: BevConfig = BevConfig()

    def __post_init__(self):
        if not self.lane_width > 0:
            raise ValueError("lane width prior must be positive")
        if self.q_py <= 0 or self.q_rh <= 0:
            raise ValueError("measurement noise must be positive")

    def to_dict(self) -> dict:
        r = self.ransac
        g = self.grid
        return {
            "lane_width": self.lane_width,
            "ransac": {"n_loop": r.n_loop, "theta_th_deg": math.degrees(r.theta_th), "lambda1": r.lambda1,
                       "lambda2": r.lambda2, "rng_seed": r.rng_seed, "min_inliers": r.min_inliers},
            "w_py_deg": [math.degrees(v) for v in self.w_py],
            "q_py": self.q_py,
            "w_rh": [math.degrees(self.w_rh[0]), self.w_rh[1]],
            "q_rh": self.q_rh,
            "p0_py_deg": [math.degrees(v) for v in self.p0_py],
            "p0_rh": [math.degrees(self.p0_rh[0]), self.p0_rh[1], math.degrees(self.p0_rh[2]), self.p0_rh[3]],
            "py_gate": self.py_gate,
            "pair_gate": list(self.pair_gate),
            "grid": {"psi_min_deg": math.degrees(g.psi_min), "psi_max_deg": math.degrees(g.psi_max),
                     "psi_step_deg": math.degrees(g.psi_step), "h_min": g.h_min, "h_max": g.h_max,
                     "h_step": g.h_step},
            "dt": self.dt,
            "burn_in": self.burn_in,
            "nominal_height": self.nominal_height,
            "rectify_with_posterior": self.rectify_with_posterior,
            "bev": {"a_x": self.bev.a_x, "a_z": self.bev.a_z, "b_x": self.bev.b_x, "b_z": self.bev.b_z},
        }

    @classmethod
    def from_dict(cls, d: dict, intrinsics: CameraIntrinsics | None = None) -> "PipelineConfig":
        """Build from a (possibly partial) dict in the ``to_dict`` layout."""
        base = cls() if intrinsics is None else cls(intrinsics=intrinsics)
        kw = {}
        if "ransac" in d:
            r = dict(d["ransac"])
            if "theta_th_deg" in r:
                r["theta_th"] = math.radians(r.pop("theta_th_deg"))
            kw["ransac"] = replace(base.ransac, **r)
        if "grid" in d:
            g = dict(d["grid"])
            for key in ("psi_min", "psi_max", "psi_step"):
                if key + "_deg" in g:
                    g[key] = math.radians(g.pop(key + "_deg"))
            kw["grid"] = replace(base.grid, **g)
        if "bev" in d:
            kw["bev"] = BevConfig(**{**base.to_dict()["bev"], **d["bev"]})
        if "w_py_deg" in d:
            kw["w_py"] = tuple(math.radians(v) for v in d["w_py_deg"])
        if "p0_py_deg" in d:
            kw["p0_py"] = tuple(math.radians(v) for v in d["p0_py_deg"])
        if "w_rh" in d:
            kw["w_rh"] = (math.radians(d["w_rh"][0]), float(d["w_rh"][1]))
        if "p0_rh" in d:
            v = d["p0_rh"]
            kw["p0_rh"] = (math.radians(v[0]), float(v[1]), math.radians(v[2]), float(v[3]))
        if "pair_gate" in d:
            kw["pair_gate"] = tuple(d["pair_gate"])
        plain = {f.name for f in fields(cls)} - {"ransac", "grid", "bev", "w_py", "p0_py", "w_rh",
                                                 "p0_rh", "pair_gate", "intrinsics"}
        unknown = set(d) - plain - {"ransac", "grid", "bev", "w_py_deg", "p0_py_deg", "w_rh", "p0_rh", "pair_gate"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw.update({key: d[key] for key in plain if key in d})
        return replace(base, **kw)


@dataclass
class PipelineState:
    py: GaussianState | None = None
    rh: GaussianState | None = None


@dataclass
class FrameResult:
    frame_index: int
    estimate: ExtrinsicEstimate
    inliers: int
    py_residual_norm: float
    rh_residual_norm: float
    flags: tuple
    homography: np.ndarray | None = None


def boundary_lines(alpha: np.ndarray, ids: np.ndarray) -> list[RectifiedLine]:
    """One line per labeled boundary (mean alpha); unlabeled lines pass through."""
    labeled = ids >= 0
    out = [RectifiedLine(float(a)) for a in alpha[~labeled]]
    if np.any(labeled):
        uniq, inv = np.unique(ids[labeled], return_inverse=True)
        mean = np.bincount(inv, weights=alpha[labeled]) / np.bincount(inv)
        out += [RectifiedLine(float(a), int(b)) for a, b in zip(mean, uniq)]
    return out


def _estimate(state: PipelineState, cfg: PipelineConfig) -> ExtrinsicEstimate:
    theta = phi = 0.0
    psi, h = 0.0, cfg.nominal_height
    std = [np.nan] * 4
    if state.py is not None:
        theta, phi = state.py.x[:2]
        std[0], std[1] = np.sqrt(np.diag(state.py.p)[:2])
    if state.rh is not None:
        psi, h = state.rh.x[:2]
        std[2], std[3] = np.sqrt(np.diag(state.rh.p)[:2])
    return ExtrinsicEstimate(float(theta), float(phi), float(psi), float(h), tuple(float(s) for s in std))


def process_frame(state: PipelineState, obs: FrameObservation,
                  cfg: PipelineConfig) -> tuple[PipelineState, FrameResult]:
    """Run one frame: VP RANSAC, pitch/yaw EKF, rectification, pairing, roll/height EKF, BEV.

    Never raises for bad frames; failures show up as flags on the result.
    """
    k = cfg.intrinsics
    flags: list[str] = []
    segs = obs.segments
    vpres: VpResult | None = None
    if len(segs) >= 2:
        rng = np.random.default_rng([cfg.ransac.rng_seed, obs.frame_index])
        try:
            vpres = ransac_vp(segs, k, cfg.ransac, rng)
        except CalibrationError:
            vpres = None
    inliers = vpres.inliers if vpres is not None else SegmentSet(np.zeros((0, 2)), np.zeros((0, 2)))

    # stage 1: pitch and yaw
    py_state, py_prior = state.py, None
    py_norm = 0.0
    if py_state is None:
        if vpres is not None:
            try:
                init = pitch_yaw.init_from_vd(vpres.vd)
                py_state = GaussianState(init.as_array(), np.diag(np.square(cfg.p0_py)))
                flags.append("init")
            except (CalibrationError, ValueError):
                py_state = None
        if py_state is None:
            flags.append("no_estimate")
    else:
        step = pitch_yaw.step_frame(py_state, inliers, k, cfg.dt, pitch_yaw.process_noise(*cfg.w_py),
                                    cfg.q_py, cfg.py_gate)
        py_prior = pitch_yaw.system_step(py_state.x, cfg.dt)
        py_state, py_norm = step.state, step.residual_norm
        if step.prediction_only:
            flags.append("predict_only")

    # stage 2: roll and height
    rh_state = state.rh
    rh_norm = 0.0
    pairs = []
    if py_state is not None and len(inliers):
        theta, phi = py_state.x[:2] if (cfg.rectify_with_posterior or py_prior is None) else py_prior[:2]
        alpha, valid = roll_height.rectify_alphas(inliers, k, theta, phi)
        lines = boundary_lines(alpha[valid], inliers.boundary_id[valid])
        if rh_state is not None:
            pred = roll_height.system_step(rh_state.x, cfg.dt)
            gate_psi, gate_h = pred[0], pred[1]
        else:
            gate_psi = gate_h = None
        try:
            pairs = roll_height.pair_lanes(lines, gate_psi, gate_h, cfg.lane_width, cfg.pair_gate,
                                           cfg.nominal_height)
        except TooFewBoundaries:
            pairs = []
    if rh_state is None:
        try:
            psi, h = roll_height.init_grid_gn(pairs, cfg.lane_width, cfg.grid)
            if h > 0 and abs(psi) < 0.25 * math.pi:
                rh_state = GaussianState(np.array([psi, h, 0.0, 0.0]), np.diag(np.square(cfg.p0_rh)))
                flags.append("rh_init")
        except CalibrationError:
            pass
        if rh_state is None:
            flags.append("rh_uninit")
    else:
        step = roll_height.step_frame(rh_state, pairs, cfg.lane_width, cfg.dt,
                                      roll_height.process_noise(*cfg.w_rh), cfg.q_rh)
        rh_state, rh_norm = step.state, step.residual_norm
        if step.prediction_only:
            flags.append("rh_predict_only")

    new_state = PipelineState(py_state, rh_state)
    est = _estimate(new_state, cfg)
    hom = bev_homography(k, est.theta, est.phi, est.psi, est.h, cfg.bev)
    n_in = len(inliers)
    return new_state, FrameResult(obs.frame_index, est, n_in, py_norm, rh_norm, tuple(flags), hom)


def run_sequence(frames: Sequence[FrameObservation], cfg: PipelineConfig) -> list[FrameResult]:
    state = PipelineState()
    out = []
    for obs in frames:
        state, res = process_frame(state, obs, cfg)
        out.append(res)
    return out


# --- batch oracle -----------------------------------------------------------------

def fit_pitch_yaw(normals: np.ndarray, max_iter: int = 50, tol: float = 1e-13) -> tuple[float, float]:
    """Least squares over (theta, phi) of the normal/vanishing-direction products."""
    theta, phi = pitch_yaw_from_vd(solve_vp_svd(normals))
    x = np.array([theta, phi, 0.0, 0.0])
    for _ in range(max_iter):
        r, jac = pitch_yaw.measurements(x, normals)
        step = np.linalg.lstsq(jac[:, :2], -r, rcond=None)[0]
        x[:2] += step
        if not np.all(np.isfinite(x)) or np.any(np.abs(x[:2]) >= 0.5 * math.pi):
            raise NonConvergence("pitch/yaw least squares diverged")
        if np.linalg.norm(step) < tol:
            break
    return float(x[0]), float(x[1])


def batch_oracle(obs: FrameObservation, cfg: PipelineConfig = PipelineConfig()) -> ExtrinsicEstimate:
    """Single-frame estimate from trusted (annotated) segments, no temporal filtering."""
    k = cfg.intrinsics
    segs = obs.segments
    if len(segs) < 2:
        raise TooFewBoundaries("frame has fewer than two segments")
    ids = segs.boundary_id
    if np.all(ids >= 0) and len(np.unique(ids)) < 3:
        raise TooFewBoundaries(f"need 3 distinct boundaries, got {len(np.unique(ids))}")
    normals = ngcs(k, segs.p1, segs.p2)
    ok = np.all(np.isfinite(normals), axis=1)
    theta, phi = fit_pitch_yaw(normals[ok])
    alpha, valid = roll_height.rectify_alphas(segs, k, theta, phi)
    lines = boundary_lines(alpha[valid], segs.boundary_id[valid])
    pairs = roll_height.pair_lanes(lines, None, None, cfg.lane_width, cfg.pair_gate, cfg.nominal_height)
    psi, h = roll_height.init_grid_gn(pairs, cfg.lane_width, cfg.grid)
    return ExtrinsicEstimate(theta, phi, psi, h)
