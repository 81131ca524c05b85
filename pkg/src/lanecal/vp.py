"""Vanishing point estimation from lane-boundary segments.

RANSAC over pairs of segments, scored with Rother's incidence/length score,
then refined on the Gaussian sphere by the smallest right-singular vector of
the stacked great-circle normals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CollinearPair,
    EmptyInput,
    NoConsensus,
    RankDeficient,
    TooFewSegments,
    UndefinedAngle,
)
from .geometry import (
    CROSS_EPS,
    CameraIntrinsics,
    LineSegment,
    SegmentSet,
    SegmentsLike,
    as_segment_set,
    ngc_of_segment,
    ngcs,
)


@dataclass(frozen=True)
class RansacConfig:
    n_loop: int = 200
    theta_th: float = np.deg2rad(0.7)
    lambda1: float = 0.8
    lambda2: float = 0.2
    rng_seed: int = 0
    min_inliers: int = 2

    def __post_init__(self):
        if self.n_loop < 1:
            raise ValueError("n_loop must be >= 1")
        if self.theta_th <= 0:
            raise ValueError("theta_th must be positive")
        if self.lambda1 + self.lambda2 <= 0:
            raise ValueError("lambda1 + lambda2 must be positive")


@dataclass
class VpResult:
    vd: np.ndarray
    inliers: SegmentSet
    inlier_index: np.ndarray
    score: float


def _canonical(v: np.ndarray) -> np.ndarray:
    """Flip unit vectors (rows) into the z >= 0 hemisphere."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        return -v if v[2] < 0 else v
    return np.where(v[:, 2:3] < 0, -v, v)


def vp_hypothesis(l_j: LineSegment, l_k: LineSegment, k: CameraIntrinsics) -> np.ndarray:
    """Intersection of the two segments' great circles."""
    v = np.cross(ngc_of_segment(k, l_j), ngc_of_segment(k, l_k))
    norm = np.linalg.norm(v)
    if norm < CROSS_EPS:
        raise CollinearPair("segments lie on the same great circle")
    return _canonical(v / norm)


def _angle_terms(vds: np.ndarray, segs: SegmentSet, k: CameraIntrinsics):
    """|sin|- and |cos|-proportional terms of the segment/VP-line angle, plus a degeneracy mask."""
    vph = np.atleast_2d(vds) @ k.matrix.T  # (M, 3) homogeneous VPs
    mid = segs.midpoints
    d = segs.p2 - segs.p1
    # direction midpoint -> VP, scaled by the homogeneous weight w
    w = vph[:, 2:3]
    ex = vph[:, 0:1] - w * mid[None, :, 0]
    ey = vph[:, 1:2] - w * mid[None, :, 1]
    cross = np.abs(ex * d[None, :, 1] - ey * d[None, :, 0])
    dot = np.abs(ex * d[None, :, 0] + ey * d[None, :, 1])
    # midpoint-to-VP pixel distance is hypot(ex, ey) / |w|
    degenerate = (ex * ex + ey * ey) <= (1e-9 * w) ** 2
    return cross, dot, degenerate


def line_point_angles(vds: np.ndarray, segs: SegmentSet, k: CameraIntrinsics) -> np.ndarray:
    """Angles between each segment and the line joining the VP to its midpoint.

    ``vds`` is (3,) or (M, 3); the result is (N,) or (M, N). Works on the
    homogeneous VP K v so VPs at infinity are fine. NaN marks an undefined
    angle (midpoint on the VP).
    """
    vds = np.asarray(vds, dtype=float)
    cross, dot, degenerate = _angle_terms(vds, segs, k)
    ang = np.where(degenerate, np.nan, np.arctan2(cross, dot))
    return ang[0] if vds.ndim == 1 else ang


def line_point_angle(vd: np.ndarray, seg: LineSegment, k: CameraIntrinsics) -> float:
    ang = line_point_angles(vd, SegmentSet.from_segments([seg]), k)[0]
    if np.isnan(ang):
        raise UndefinedAngle("segment midpoint coincides with the vanishing point")
    return float(ang)


def _scores(angles: np.ndarray, lengths: np.ndarray, cfg: RansacConfig) -> np.ndarray:
    l_m = lengths.max()
    with np.errstate(invalid="ignore"):
        keep = angles < cfg.theta_th  # NaN compares False
    terms = cfg.lambda1 * (1.0 - angles / cfg.theta_th) + cfg.lambda2 * (lengths / l_m)
    return np.where(keep, terms, 0.0).sum(axis=-1)


def _hypothesis_scores(hyp: np.ndarray, segs: SegmentSet, k: CameraIntrinsics, cfg: RansacConfig):
    """Scores of many hypotheses at once.

    Both angle terms are linear in the homogeneous VP, so they reduce to two
    matrix products. Degenerate pairs give 0/0 and never pass the strict test.
    """
    vph = hyp @ k.matrix.T
    mid = segs.midpoints
    d = segs.p2 - segs.p1
    a_cross = np.stack([d[:, 1], -d[:, 0], mid[:, 1] * d[:, 0] - mid[:, 0] * d[:, 1]])
    a_dot = np.stack([d[:, 0], d[:, 1], -(mid[:, 0] * d[:, 0] + mid[:, 1] * d[:, 1])])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs((vph @ a_cross) / (vph @ a_dot))  # tan of the angle
    inlier = ratio < np.tan(cfg.theta_th)  # NaN compares False
    lengths = segs.lengths
    count = inlier.sum(axis=1)
    length_sum = inlier.astype(float) @ lengths
    angle_sum = np.arctan(np.where(inlier, ratio, 0.0)).sum(axis=1)
    return (cfg.lambda1 * count - cfg.lambda1 / cfg.theta_th * angle_sum
            + cfg.lambda2 * length_sum / lengths.max())


def rother_score(
    vd: np.ndarray, segments: SegmentsLike, k: CameraIntrinsics, cfg: RansacConfig
) -> float:
    segs = as_segment_set(segments)
    if len(segs) == 0:
        raise EmptyInput("no segments to score")
    return float(_scores(line_point_angles(vd, segs, k), segs.lengths, cfg))


def solve_vp_svd(ngc_rows: np.ndarray) -> np.ndarray:
    """Unit v minimizing ||A v|| for A = stacked normals; z >= 0."""
    a = np.atleast_2d(np.asarray(ngc_rows, dtype=float))
    _, s, vt = np.linalg.svd(a, full_matrices=len(a) < 3)
    s_full = np.zeros(3)
    s_full[: len(s)] = s
    if s_full[1] < 1e-9 and s_full[2] < 1e-9:
        raise RankDeficient("normals do not span a plane; vanishing direction is not unique")
    return _canonical(vt[-1])


def ransac_vp(segments: SegmentsLike, k: CameraIntrinsics, cfg: RansacConfig = RansacConfig(),
              rng: np.random.Generator | None = None) -> VpResult:
    segs = as_segment_set(segments)
    n = len(segs)
    if n < 2:
        raise TooFewSegments(f"need at least 2 segments, got {n}")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)

    # two distinct indices per iteration, drawn up front
    i = rng.integers(n, size=cfg.n_loop)
    j = rng.integers(n - 1, size=cfg.n_loop)
    j = j + (j >= i)

    normals = ngcs(k, segs.p1, segs.p2)
    hyp = np.cross(normals[i], normals[j])
    hnorm = np.linalg.norm(hyp, axis=1)
    valid = hnorm >= CROSS_EPS  # NaN normals fail this too
    hyp = _canonical(hyp / np.where(valid, hnorm, 1.0)[:, None])

    scores = np.where(valid, _hypothesis_scores(hyp, segs, k, cfg), -np.inf)
    best = int(np.argmax(scores))  # first maximum wins ties
    s_max = float(scores[best])
    if not s_max > 0:
        raise NoConsensus("no hypothesis scored above zero")

    with np.errstate(invalid="ignore"):
        inlier_idx = np.flatnonzero(line_point_angles(hyp[best], segs, k) < cfg.theta_th)
    if len(inlier_idx) < max(cfg.min_inliers, 2):
        raise NoConsensus(f"best consensus set has {len(inlier_idx)} members")
    inlier_normals = normals[inlier_idx]
    inlier_normals = inlier_normals[np.all(np.isfinite(inlier_normals), axis=1)]
    vd = solve_vp_svd(inlier_normals)
    return VpResult(vd=vd, inliers=segs[inlier_idx], inlier_index=inlier_idx, score=s_max)
