"""Roll and camera height from the consistency of observed lane widths.

After undoing pitch and yaw, every lane boundary on the road plane becomes a
line through the origin of the rectified normalized image plane. Its angle
``alpha`` against the downward image axis (positive toward image-left, -x)
satisfies ``lateral_left = h * tan(alpha - psi)`` where ``psi`` is the roll
angle of ``geometry.roll_matrix``. Adjacent boundaries then give a lane width
``h * (tan(alpha_L - psi) - tan(alpha_R - psi))`` that should equal the prior.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ekf
from .ekf import GaussianState, MeasurementBatch
from .errors import (
    HorizonLine,
    NonConvergence,
    TangentSingularity,
    TooFewBoundaries,
    TooFewPairs,
)
from .geometry import CameraIntrinsics, LineSegment, SegmentsLike, as_segment_set, rotation_pitch_yaw
from .pitch_yaw import FilterStep, transition_matrix

HALF_PI = 0.5 * np.pi
TAN_EPS = 1e-6


@dataclass(frozen=True)
class RectifiedLine:
    alpha: float
    boundary_id: int | None = None

    def __post_init__(self):
        if not abs(self.alpha) < HALF_PI:
            raise ValueError(f"|alpha| must be below pi/2, got {self.alpha}")

    @property
    def lateral_key(self) -> float:
        """Leftward offset per unit height (at zero roll)."""
        return float(np.tan(self.alpha))


@dataclass(frozen=True)
class LanePair:
    left: RectifiedLine
    right: RectifiedLine

    def __post_init__(self):
        if not self.left.lateral_key > self.right.lateral_key:
            raise ValueError("left boundary must have the larger lateral key")


@dataclass(frozen=True)
class RollHeightState:
    psi: float
    h: float
    omega_psi: float = 0.0
    v_h: float = 0.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"camera height must be positive, got {self.h}")
        if not abs(self.psi) < 0.25 * np.pi:
            raise ValueError(f"|roll| must be below pi/4, got {self.psi}")

    def as_array(self) -> np.ndarray:
        return np.array([self.psi, self.h, self.omega_psi, self.v_h])


@dataclass(frozen=True)
class GridSearch:
    psi_min: float = np.deg2rad(-5.0)
    psi_max: float = np.deg2rad(5.0)
    psi_step: float = np.deg2rad(0.25)
    h_min: float = 0.5
    h_max: float = 3.0
    h_step: float = 0.05
    max_iter: int = 50
    tol: float = 1e-10

    def psi_grid(self) -> np.ndarray:
        n = int(round((self.psi_max - self.psi_min) / self.psi_step)) + 1
        return self.psi_min + self.psi_step * np.arange(n)

    def h_grid(self) -> np.ndarray:
        n = int(round((self.h_max - self.h_min) / self.h_step)) + 1
        return self.h_min + self.h_step * np.arange(n)


# --- rectification -----------------------------------------------------------

def rectify_points(k: CameraIntrinsics, pts: np.ndarray, theta: float, phi: float) -> np.ndarray:
    """Rotate rays by R_CW^T; returns (N, 3) un-normalized rectified rays."""
    return k.backproject(pts) @ rotation_pitch_yaw(theta, phi)


def rectify_alphas(segs: SegmentsLike, k: CameraIntrinsics, theta: float, phi: float):
    """Vectorized ``rectify_line``: returns (alpha, valid) arrays."""
    segs = as_segment_set(segs)
    r1 = rectify_points(k, segs.p1, theta, phi)
    r2 = rectify_points(k, segs.p2, theta, phi)
    valid = (r1[:, 2] > 1e-9) & (r2[:, 2] > 1e-9)
    z1 = np.where(valid, r1[:, 2], 1.0)
    z2 = np.where(valid, r2[:, 2], 1.0)
    q1 = r1[:, :2] / z1[:, None]
    q2 = r2[:, :2] / z2[:, None]
    valid &= (q1[:, 1] > 0) | (q2[:, 1] > 0)  # at least partly below the horizon
    d = q2 - q1
    d = np.where(d[:, 1:2] < 0, -d, d)  # orient toward the road
    alpha = np.arctan2(-d[:, 0], d[:, 1])
    valid &= np.abs(alpha) < HALF_PI - TAN_EPS
    return alpha, valid


def rectify_line(seg: LineSegment, k: CameraIntrinsics, theta: float, phi: float) -> RectifiedLine:
    r = rectify_points(k, np.array([seg.p1, seg.p2]), theta, phi)
    if np.any(r[:, 2] <= 1e-9):
        raise HorizonLine("segment endpoint at or behind the rectified horizon")
    q = r[:, :2] / r[:, 2:3]
    if np.all(q[:, 1] <= 0):
        raise HorizonLine("segment lies above the rectified horizon")
    alpha, valid = rectify_alphas([seg], k, theta, phi)
    if not valid[0]:
        raise HorizonLine("rectified segment is horizontal")
    return RectifiedLine(float(alpha[0]), seg.boundary_id)


# --- lane width model ----------------------------------------------------------

def _check_tangent(*shifted):
    for a in shifted:
        if np.any(np.abs(a) >= HALF_PI - TAN_EPS):
            raise TangentSingularity("shifted line angle is at +-pi/2")


def lane_width(psi: float, h: float, alpha_l: float, alpha_r: float) -> float:
    _check_tangent(alpha_l - psi, alpha_r - psi)
    return h * (np.tan(alpha_l - psi) - np.tan(alpha_r - psi))


def residuals(alpha_l: np.ndarray, alpha_r: np.ndarray, psi: float, h: float, w_p: float):
    """Width residuals ``w_p - width`` and their (M, 4) Jacobian in [psi, h, omega, v]."""
    al = np.asarray(alpha_l, dtype=float) - psi
    ar = np.asarray(alpha_r, dtype=float) - psi
    _check_tangent(al, ar)
    tl, tr = np.tan(al), np.tan(ar)
    value = w_p - h * (tl - tr)
    jac = np.zeros((len(np.atleast_1d(value)), 4))
    jac[:, 0] = h * ((1 + tl**2) - (1 + tr**2))
    jac[:, 1] = -(tl - tr)
    return value, jac


def residual(pair: LanePair, psi: float, h: float, w_p: float) -> tuple[float, np.ndarray]:
    value, jac = residuals(np.array([pair.left.alpha]), np.array([pair.right.alpha]), psi, h, w_p)
    return float(value[0]), jac[0]


def pair_arrays(pairs: Sequence[LanePair]) -> tuple[np.ndarray, np.ndarray]:
    return (np.array([p.left.alpha for p in pairs], dtype=float),
            np.array([p.right.alpha for p in pairs], dtype=float))


def energy(pairs: Sequence[LanePair], psi: float, h: float, w_p: float) -> float:
    """Sum of squared width residuals."""
    al, ar = pair_arrays(pairs)
    value, _ = residuals(al, ar, psi, h, w_p)
    return float(np.sum(value**2))


# --- pairing -----------------------------------------------------------------

def _boundaries(lines: Sequence[RectifiedLine], psi: float, h: float, merge_gap: float):
    """Collapse lines into one alpha per boundary (label average, or offset clustering)."""
    if lines and all(l.boundary_id is not None for l in lines):
        groups: dict[int, list[float]] = {}
        for l in lines:
            groups.setdefault(l.boundary_id, []).append(l.alpha)
        return [RectifiedLine(float(np.mean(a)), bid) for bid, a in groups.items()]

    alphas = np.sort(np.array([l.alpha for l in lines]))[::-1]
    if len(alphas) == 0:
        return []
    offsets = h * np.tan(alphas - psi)
    cuts = np.flatnonzero(np.abs(np.diff(offsets)) > merge_gap) + 1
    return [RectifiedLine(float(np.mean(chunk))) for chunk in np.split(alphas, cuts)]


def pair_lanes(lines: Sequence[RectifiedLine], psi: float | None = None, h: float | None = None,
               w_p: float = 3.7, gate: tuple[float, float] = (0.5, 2.0),
               nominal_h: float = 1.5) -> list[LanePair]:
    """Adjacent boundary pairs sorted left to right, width-gated.

    With no state estimate the gate is applied to ``tan(alpha_L) - tan(alpha_R)``
    relative to its median over the adjacent pairs instead.
    """
    have_state = psi is not None and h is not None
    bounds = _boundaries(list(lines), psi if have_state else 0.0,
                         h if have_state else nominal_h, 0.25 * w_p)
    if len(bounds) < 3:
        raise TooFewBoundaries(f"need 3 distinct boundaries, got {len(bounds)}")
    bounds.sort(key=lambda b: b.lateral_key, reverse=True)

    candidates = [(l, r) for l, r in zip(bounds[:-1], bounds[1:]) if l.lateral_key > r.lateral_key]
    if not candidates:
        return []
    lo, hi = gate
    if have_state:
        widths = []
        for l, r in candidates:
            try:
                widths.append(lane_width(psi, h, l.alpha, r.alpha))
            except TangentSingularity:
                widths.append(np.nan)
        widths = np.array(widths)
        ref = w_p
    else:
        widths = np.array([l.lateral_key - r.lateral_key for l, r in candidates])
        ref = np.median(widths)
    keep = (widths >= lo * ref) & (widths <= hi * ref)
    return [LanePair(l, r) for (l, r), ok in zip(candidates, keep) if ok]


# --- initialization ------------------------------------------------------------

def energy_grid(al: np.ndarray, ar: np.ndarray, psis: np.ndarray, hs: np.ndarray, w_p: float) -> np.ndarray:
    """E(psi, h) on the outer product grid; +inf where a tangent is singular."""
    sl = al[None, :] - psis[:, None]
    sr = ar[None, :] - psis[:, None]
    bad = np.any((np.abs(sl) >= HALF_PI - TAN_EPS) | (np.abs(sr) >= HALF_PI - TAN_EPS), axis=1)
    d = np.tan(sl) - np.tan(sr)  # (P, M)
    # sum_m (w_p - h d_m)^2 expanded so the grid costs O(P * H)
    e = (len(al) * w_p**2 - 2 * w_p * hs[None, :] * d.sum(axis=1)[:, None]
         + hs[None, :] ** 2 * (d**2).sum(axis=1)[:, None])
    e[bad] = np.inf
    return e


def gauss_newton(al: np.ndarray, ar: np.ndarray, psi: float, h: float, w_p: float,
                 search: GridSearch = GridSearch()) -> tuple[float, float]:
    x = np.array([psi, h], dtype=float)
    psi_c, h_c = 0.5 * (search.psi_min + search.psi_max), 0.5 * (search.h_min + search.h_max)
    psi_half, h_half = search.psi_max - psi_c, search.h_max - h_c
    for _ in range(search.max_iter):
        try:
            r, jac = residuals(al, ar, x[0], x[1], w_p)
        except TangentSingularity:
            raise NonConvergence("Gauss-Newton reached a tangent singularity") from None
        step = np.linalg.lstsq(jac[:, :2], -r, rcond=None)[0]
        x = x + step
        if abs(x[0] - psi_c) > 2 * psi_half or abs(x[1] - h_c) > 2 * h_half or not np.all(np.isfinite(x)):
            raise NonConvergence(f"Gauss-Newton left the search box: psi={x[0]}, h={x[1]}")
        if np.linalg.norm(step) < search.tol:
            break
    return float(x[0]), float(x[1])


def init_grid_gn(pairs: Sequence[LanePair], w_p: float = 3.7,
                 search: GridSearch = GridSearch()) -> tuple[float, float]:
    """Exhaustive grid over (psi, h) followed by Gauss-Newton refinement."""
    if len(pairs) < 2:
        raise TooFewPairs(f"roll needs at least 2 lane pairs, got {len(pairs)}")
    al, ar = pair_arrays(pairs)
    psis, hs = search.psi_grid(), search.h_grid()
    e = energy_grid(al, ar, psis, hs, w_p)
    i, j = np.unravel_index(int(np.argmin(e)), e.shape)
    if not np.isfinite(e[i, j]):
        raise NonConvergence("energy is singular over the whole grid")
    return gauss_newton(al, ar, psis[i], hs[j], w_p, search)


# --- filtering -----------------------------------------------------------------

def system_step(x, dt: float = 1.0):
    if isinstance(x, RollHeightState):
        return RollHeightState(*(float(v) for v in transition_matrix(dt) @ x.as_array()))
    return transition_matrix(dt) @ np.asarray(x, dtype=float)


def process_noise(w_psi: float, w_h: float) -> np.ndarray:
    """Velocity-block process noise; arguments are standard deviations per frame."""
    return np.diag([0.0, 0.0, w_psi**2, w_h**2])


def step_frame(s: GaussianState, pairs: Sequence[LanePair], w_p: float, dt: float,
               w_rh: np.ndarray, q_rh: float) -> FilterStep:
    pred = ekf.predict(s, lambda x: system_step(x, dt), transition_matrix(dt), w_rh)
    if not pairs:
        return FilterStep(pred, True, 0, 0.0)
    al, ar = pair_arrays(pairs)
    psi, h = pred.x[0], pred.x[1]
    ok = (np.abs(al - psi) < HALF_PI - TAN_EPS) & (np.abs(ar - psi) < HALF_PI - TAN_EPS)
    if not np.any(ok):
        return FilterStep(pred, True, 0, 0.0)
    c, jac = residuals(al[ok], ar[ok], psi, h, w_p)
    post = ekf.update(pred, MeasurementBatch(-c, jac, np.full(len(c), q_rh)))
    if not post.x[1] > 0 or not abs(post.x[0]) < 0.25 * np.pi:
        return FilterStep(pred, True, 0, float(np.linalg.norm(c)))
    return FilterStep(post, False, len(c), float(np.linalg.norm(c)))
