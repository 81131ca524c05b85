"""Extended Kalman filter kernel shared by both estimation stages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, SingularInnovation


@dataclass(frozen=True)
class GaussianState:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        p = np.asarray(self.p, dtype=float)
        if p.shape != (len(x), len(x)):
            raise DimensionMismatch(f"covariance shape {p.shape} does not match state of length {len(x)}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class MeasurementBatch:
    """Stacked residuals ``y``, Jacobian ``h_jac`` (m x n) and noise ``q``.

    ``q`` is either the m x m covariance or a length-m vector holding its diagonal.
    """

    y: np.ndarray
    h_jac: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        h = np.asarray(self.h_jac, dtype=float).reshape(len(y), -1) if len(y) else np.atleast_2d(self.h_jac)
        q = np.asarray(self.q, dtype=float)
        if h.shape[0] != len(y) or q.shape not in ((len(y),), (len(y), len(y))):
            raise DimensionMismatch(
                f"residuals {len(y)}, jacobian {h.shape}, noise {q.shape} are inconsistent"
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "h_jac", h)
        object.__setattr__(self, "q", q)

    @property
    def q_matrix(self) -> np.ndarray:
        return np.diag(self.q) if self.q.ndim == 1 else self.q


def predict(s: GaussianState, f: Callable[[np.ndarray], np.ndarray],
            f_jac: np.ndarray | Callable[[np.ndarray], np.ndarray], w: np.ndarray) -> GaussianState:
    """x <- f(x), P <- F P F^T + W."""
    fmat = f_jac(s.x) if callable(f_jac) else np.asarray(f_jac, dtype=float)
    w = np.asarray(w, dtype=float)
    n = len(s.x)
    if fmat.shape != (n, n) or w.shape != (n, n):
        raise DimensionMismatch(f"F {fmat.shape} / W {w.shape} do not match state dimension {n}")
    x = np.asarray(f(s.x), dtype=float)
    if x.shape != s.x.shape:
        raise DimensionMismatch("transition function changed the state dimension")
    return GaussianState(x, fmat @ s.p @ fmat.T + w)


def innovation_cov(s: GaussianState, h_jac: np.ndarray, q: np.ndarray) -> np.ndarray:
    return h_jac @ s.p @ h_jac.T + q


def _gain_dense(p: np.ndarray, h: np.ndarray, q: np.ndarray) -> np.ndarray:
    pht = p @ h.T
    sm = h @ pht + q
    sm = 0.5 * (sm + sm.T)
    try:
        cho = scipy.linalg.cho_factor(sm)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(f"innovation covariance not invertible: {exc}") from None
    # cheap condition estimate from the Cholesky diagonal
    diag = np.abs(np.diag(cho[0]))
    if not diag.min() > 0 or (diag.max() / diag.min()) ** 2 > 1e12:
        raise SingularInnovation("innovation covariance is ill-conditioned")
    return scipy.linalg.cho_solve(cho, pht.T).T


def _gain_lowrank(p: np.ndarray, h: np.ndarray, qd: np.ndarray) -> np.ndarray:
    """Same gain P H^T S^-1 for diagonal Q, via Woodbury on S = Q + B B^T with B = H U, P = U U^T.

    P H^T S^-1 = U (I + B^T Q^-1 B)^-1 B^T Q^-1, which costs O(m n^2) instead of O(m^3).
    """
    evals, evecs = np.linalg.eigh(0.5 * (p + p.T))
    u = evecs * np.sqrt(np.clip(evals, 0.0, None))
    b = h @ u
    bq = b.T / qd
    if (qd.max() + np.sum(b * b)) / qd.min() > 1e12:
        raise SingularInnovation("innovation covariance is ill-conditioned")
    inner = np.eye(len(u)) + bq @ b
    return u @ np.linalg.solve(inner, bq)


def update(s: GaussianState, m: MeasurementBatch) -> GaussianState:
    """Gain G = P H^T S^-1; x <- x + G y; P <- (I - G H) P, re-symmetrized."""
    if m.h_jac.shape[1] != len(s.x):
        raise DimensionMismatch(f"jacobian has {m.h_jac.shape[1]} columns, state has {len(s.x)}")
    if len(m.y) == 0:
        return s
    if m.q.ndim == 1 and len(m.y) > 4 * len(s.x) and m.q.min() > 0:
        gain = _gain_lowrank(s.p, m.h_jac, m.q)
    else:
        gain = _gain_dense(s.p, m.h_jac, m.q_matrix)
    x = s.x + gain @ m.y
    p = (np.eye(len(s.x)) - gain @ m.h_jac) @ s.p
    return GaussianState(x, 0.5 * (p + p.T))


def numeric_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences with a step of ``rel_step * max(|x_i|, 1)``; for tests."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    jac = np.empty((len(f0), len(x)))
    for i in range(len(x)):
        step = rel_step * max(abs(x[i]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        jac[:, i] = (np.atleast_1d(fun(xp)) - np.atleast_1d(fun(xm))) / (2 * step)
    return jac
