"""Pitch/yaw tracking from the vanishing direction of lane boundaries.

State is ``[theta, phi, omega_theta, omega_phi]`` with a constant angular
velocity model. Each inlier segment contributes one scalar measurement: the
component of its great-circle normal along the predicted vanishing direction,
which is zero for a perfect model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ekf
from .ekf import GaussianState, MeasurementBatch
from .geometry import CameraIntrinsics, SegmentsLike, as_segment_set, ngcs, pitch_yaw_from_vd

HALF_PI = 0.5 * np.pi


@dataclass(frozen=True)
class PitchYawState:
    theta: float
    phi: float
    omega_theta: float = 0.0
    omega_phi: float = 0.0

    def __post_init__(self):
        if not (abs(self.theta) < HALF_PI and abs(self.phi) < HALF_PI):
            raise ValueError(f"camera must face forward: theta={self.theta}, phi={self.phi}")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.phi, self.omega_theta, self.omega_phi])

    @classmethod
    def from_array(cls, x) -> "PitchYawState":
        return cls(*(float(v) for v in x))


@dataclass
class FilterStep:
    state: GaussianState
    prediction_only: bool
    n_used: int
    residual_norm: float


def init_from_vd(v: np.ndarray) -> PitchYawState:
    theta, phi = pitch_yaw_from_vd(v)
    return PitchYawState(theta, phi, 0.0, 0.0)


def transition_matrix(dt: float = 1.0) -> np.ndarray:
    f = np.eye(4)
    f[0, 2] = dt
    f[1, 3] = dt
    return f


def system_step(x, dt: float = 1.0):
    """Constant angular velocity transition; accepts a state or a 4-array."""
    if isinstance(x, PitchYawState):
        return PitchYawState.from_array(transition_matrix(dt) @ x.as_array())
    return transition_matrix(dt) @ np.asarray(x, dtype=float)


def measurements(x: np.ndarray, normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predicted values n . R_CW(theta, phi) e_z for (N, 3) normals and their (N, 4) Jacobian."""
    theta, phi = x[0], x[1]
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    v = np.array([sp, -st * cp, ct * cp])
    dv_dtheta = np.array([0.0, -ct * cp, -st * cp])
    dv_dphi = np.array([cp, st * sp, -ct * sp])
    normals = np.atleast_2d(normals)
    jac = np.zeros((len(normals), 4))
    jac[:, 0] = normals @ dv_dtheta
    jac[:, 1] = normals @ dv_dphi
    return normals @ v, jac


def measurement(s, n: np.ndarray) -> tuple[float, np.ndarray]:
    x = s.as_array() if isinstance(s, PitchYawState) else np.asarray(s, dtype=float)
    h, jac = measurements(x, np.asarray(n, dtype=float)[None, :])
    return float(h[0]), jac[0]


def process_noise(w_theta: float, w_phi: float) -> np.ndarray:
    """Velocity-block process noise; arguments are standard deviations per frame."""
    return np.diag([0.0, 0.0, w_theta**2, w_phi**2])


def step_frame(s: GaussianState, inliers: SegmentsLike, k: CameraIntrinsics, dt: float,
               w_py: np.ndarray, q_py: float, gate: float | None = 5.0) -> FilterStep:
    """Predict, then update with every inlier normal. Empty inliers give a prediction-only step."""
    pred = ekf.predict(s, lambda x: system_step(x, dt), transition_matrix(dt), w_py)
    segs = as_segment_set(inliers)
    normals = ngcs(k, segs.p1, segs.p2) if len(segs) else np.zeros((0, 3))
    normals = normals[np.all(np.isfinite(normals), axis=1)]
    if len(normals) == 0:
        return FilterStep(pred, True, 0, 0.0)

    h, jac = measurements(pred.x, normals)
    q = np.full(len(h), q_py)
    if gate is not None:
        s_diag = np.einsum("ij,jk,ik->i", jac, pred.p, jac) + q
        keep = np.abs(h) <= gate * np.sqrt(s_diag)
        h, jac, q = h[keep], jac[keep], q[keep]
        if len(h) == 0:
            return FilterStep(pred, True, 0, 0.0)

    post = ekf.update(pred, MeasurementBatch(-h, jac, q))
    x = post.x.copy()
    x[:2] = np.clip(x[:2], -HALF_PI + 1e-6, HALF_PI - 1e-6)
    return FilterStep(GaussianState(x, post.p), False, len(h), float(np.linalg.norm(h)))

