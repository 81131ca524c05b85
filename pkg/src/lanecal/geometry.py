"""Pinhole camera and Gaussian-sphere primitives.

Conventions used across the package:

* camera frame: x right, y down, z forward (optical axis);
* unit vectors and rotations are plain ``numpy`` arrays of shape (3,) and (3, 3);
* angles are radians everywhere except file I/O.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

from .errors import DegenerateSegment, DegenerateVD

SEGMENT_EPS = 1e-9
CROSS_EPS = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        # closed form keeps K @ K^-1 exact to rounding
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def backproject(self, pts: np.ndarray) -> np.ndarray:
        """Rays K^-1 (u, v, 1) for an (N, 2) array of pixels; returns (N, 3), z = 1."""
        pts = np.asarray(pts, dtype=float)
        out = np.empty(pts.shape[:-1] + (3,))
        out[..., 0] = (pts[..., 0] - self.cx) / self.fx
        out[..., 1] = (pts[..., 1] - self.cy) / self.fy
        out[..., 2] = 1.0
        return out

    def project(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=float)
        u = self.fx * xyz[..., 0] / xyz[..., 2] + self.cx
        v = self.fy * xyz[..., 1] / xyz[..., 2] + self.cy
        return np.stack([u, v], axis=-1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))

    @classmethod
    def identity(cls) -> "CameraIntrinsics":
        return cls(1.0, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class LineSegment:
    p1: tuple
    p2: tuple
    boundary_id: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "p1", (float(self.p1[0]), float(self.p1[1])))
        object.__setattr__(self, "p2", (float(self.p2[0]), float(self.p2[1])))
        if self.length() <= SEGMENT_EPS:
            raise DegenerateSegment(f"segment endpoints coincide: {self.p1}")

    def length(self) -> float:
        return float(np.hypot(self.p2[0] - self.p1[0], self.p2[1] - self.p1[1]))

    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.p1) + np.asarray(self.p2))


@dataclass
class SegmentSet:
    """Column storage for many segments; the hot paths work on these arrays.

    ``boundary_id`` uses -1 for unlabeled segments.
    """

    p1: np.ndarray
    p2: np.ndarray
    boundary_id: np.ndarray = field(default=None)

    def __post_init__(self):
        self.p1 = np.asarray(self.p1, dtype=float).reshape(-1, 2)
        self.p2 = np.asarray(self.p2, dtype=float).reshape(-1, 2)
        if self.boundary_id is None:
            self.boundary_id = np.full(len(self.p1), -1, dtype=int)
        else:
            self.boundary_id = np.asarray(self.boundary_id, dtype=int).reshape(-1)
        if not (len(self.p1) == len(self.p2) == len(self.boundary_id)):
            raise ValueError("p1, p2 and boundary_id lengths differ")

    @classmethod
    def from_segments(cls, segments: Iterable[LineSegment]) -> "SegmentSet":
        segs = list(segments)
        if not segs:
            return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, dtype=int))
        return cls(
            np.array([s.p1 for s in segs]),
            np.array([s.p2 for s in segs]),
            np.array([-1 if s.boundary_id is None else s.boundary_id for s in segs]),
        )

    def __len__(self) -> int:
        return len(self.p1)

    def __iter__(self) -> Iterator[LineSegment]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            bid = int(self.boundary_id[idx])
            return LineSegment(tuple(self.p1[idx]), tuple(self.p2[idx]), None if bid < 0 else bid)
        return SegmentSet(self.p1[idx], self.p2[idx], self.boundary_id[idx])

    @property
    def lengths(self) -> np.ndarray:
        return np.hypot(*(self.p2 - self.p1).T)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.p1 + self.p2)

    def labeled(self) -> bool:
        return bool(np.all(self.boundary_id >= 0)) and len(self) > 0


SegmentsLike = Union[SegmentSet, Sequence[LineSegment]]


def as_segment_set(segments: SegmentsLike) -> SegmentSet:
    if isinstance(segments, SegmentSet):
        return segments
    return SegmentSet.from_segments(segments)


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def ngcs(k: CameraIntrinsics, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Unit great-circle normals for (N, 2) endpoint arrays.

    Rows whose rays are parallel come back as NaN.
    """
    n = np.cross(k.backproject(p1), k.backproject(p2))
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = n / norm
    out[norm[..., 0] < CROSS_EPS] = np.nan
    return out


def ngc_of_segment(k: CameraIntrinsics, seg: LineSegment) -> np.ndarray:
    """Normal of the great circle traced by ``seg`` on the Gaussian sphere."""
    n = np.cross(k.backproject(np.asarray(seg.p1)), k.backproject(np.asarray(seg.p2)))
    norm = np.linalg.norm(n)
    if norm < CROSS_EPS:
        raise DegenerateSegment("endpoints back-project to parallel rays")
    return n / norm


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def roll_matrix(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_pitch_yaw(theta: float, phi: float) -> np.ndarray:
    """World-to-camera rotation R(theta) @ R(phi): pitch about x, yaw about y."""
    return rot_x(theta) @ rot_y(phi)


def vd_of_pitch_yaw(theta: float, phi: float) -> np.ndarray:
    """Third column of ``rotation_pitch_yaw``: where the road direction points in the camera."""
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    return np.array([sp, -st * cp, ct * cp])


def pitch_yaw_from_vd(v: np.ndarray) -> tuple[float, float]:
    """Invert ``vd_of_pitch_yaw``.

    Pitch is atan2(-v_y, v_z). Yaw uses the y-z magnitude as the cosine term,
    atan2(v_x, hypot(v_y, v_z)), which is the exact inverse of the two-factor
    rotation and reduces to atan2(v_x, v_z) at zero pitch.
    """
    v = np.asarray(v, dtype=float)
    if abs(v[2]) < 1e-9:
        raise DegenerateVD(f"vanishing direction perpendicular to optical axis: {v}")
    if v[2] < 0:
        v = -v
    theta = float(np.arctan2(-v[1], v[2]))
    phi = float(np.arctan2(v[0], np.hypot(v[1], v[2])))
    return theta, phi


def vd_from_vp(k: CameraIntrinsics, vp) -> np.ndarray:
    d = normalize(k.backproject(np.asarray(vp, dtype=float)))
    return -d if d[2] < 0 else d


def vp_from_vd(k: CameraIntrinsics, v: np.ndarray) -> np.ndarray:
    """Homogeneous image point K v (third entry 0 for a VP at infinity)."""
    return k.matrix @ np.asarray(v, dtype=float)
