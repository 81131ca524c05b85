"""Bird's-eye-view homography and image warping."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import FormatError, NonInvertibleHomography
from .geometry import CameraIntrinsics, roll_matrix, rotation_pitch_yaw


@dataclass(frozen=True)
class BevConfig:
    """Pixels per meter (``a_x``, ``a_z``) and metric extent (``b_x``, ``b_z``) of the BEV grid.

    BEV columns run along lateral X centered on the camera, rows along forward
    Z with Z = b_z at row 0.
    """

    a_x: float = 20.0
    a_z: float = 20.0
    b_x: float = 24.0
    b_z: float = 60.0

    def __post_init__(self):
        if min(self.a_x, self.a_z) <= 0:
            raise ValueError("BEV scales must be positive")
        # zero extent is allowed: it puts the camera origin at BEV pixel (0, 0)
        if min(self.b_x, self.b_z) < 0:
            raise ValueError("BEV extents must be non-negative")

    @property
    def size(self) -> tuple[int, int]:
        """(width, height) in pixels covering the whole extent."""
        return int(round(self.a_x * self.b_x)), int(round(self.a_z * self.b_z))

    def affine(self) -> np.ndarray:
        return np.array(
            [
                [self.a_x, 0.0, 0.5 * self.b_x * self.a_x],
                [0.0, -self.a_z, self.b_z * self.a_z],
                [0.0, 0.0, 1.0],
            ]
        )

    def to_pixel(self, x, z) -> np.ndarray:
        return np.stack([self.a_x * (np.asarray(x) + 0.5 * self.b_x),
                         -self.a_z * (np.asarray(z) - self.b_z)], axis=-1)


def full_rotation(theta: float, phi: float, psi: float) -> np.ndarray:
    """Camera-to-road rotation: roll block times R_CW(theta, phi)^T."""
    return roll_matrix(psi) @ rotation_pitch_yaw(theta, phi).T


def bev_homography(k: CameraIntrinsics, theta: float, phi: float, psi: float, h: float,
                   cfg: BevConfig = BevConfig()) -> np.ndarray:
    """Image pixels -> BEV pixels. Road frame rows are reordered to (X, Z, Y / h)."""
    if not h > 0:
        raise ValueError(f"camera height must be positive, got {h}")
    r = full_rotation(theta, phi, psi)
    stacked = np.vstack([r[0], r[2], r[1] / h])
    return cfg.affine() @ stacked @ k.inverse


def apply_homography(hom: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    ph = np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1) @ hom.T
    return ph[..., :2] / ph[..., 2:3]


def warp_image(src: np.ndarray, hom: np.ndarray, out_width: int, out_height: int) -> np.ndarray:
    """Inverse-map every output pixel through ``hom^-1`` with bilinear sampling; black outside."""
    src = np.asarray(src)
    if src.size == 0:
        raise ValueError("empty source image")
    hom = np.asarray(hom, dtype=float)
    if abs(np.linalg.det(hom)) <= 1e-12:
        raise NonInvertibleHomography("homography determinant is zero")
    inv = np.linalg.inv(hom)
    cols, rows = np.meshgrid(np.arange(out_width, dtype=float), np.arange(out_height, dtype=float))
    q = np.stack([cols.ravel(), rows.ravel(), np.ones(cols.size)])
    p = inv @ q
    with np.errstate(divide="ignore", invalid="ignore"):
        u = p[0] / p[2]
        v = p[1] / p[2]
    # BEV pixels whose preimage lies above the horizon come back with p[2] <= 0
    bad = ~np.isfinite(u) | ~np.isfinite(v) | (p[2] <= 0)
    u = np.where(bad, -10.0, u)
    v = np.where(bad, -10.0, v)
    coords = np.stack([v, u])

    def sample(channel):
        out = ndimage.map_coordinates(channel.astype(float), coords, order=1, mode="constant", cval=0.0)
        return out.reshape(out_height, out_width)

    if src.ndim == 2:
        out = sample(src)
    else:
        out = np.stack([sample(src[..., c]) for c in range(src.shape[2])], axis=-1)
    if np.issubdtype(src.dtype, np.integer):
        out = np.clip(np.rint(out), 0, np.iinfo(src.dtype).max).astype(src.dtype)
    return out


def read_image(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) 8-bit image."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: expected binary PGM/PPM, found magic {magic!r}")
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise FormatError(f"{path}: only 8-bit images are supported")
    return arr


def write_image(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    if not (img.ndim == 2 or (img.ndim == 3 and img.shape[2] == 3)):
        raise FormatError(f"unsupported image shape {img.shape}")
    # uint8 (H, W) becomes L and (H, W, 3) becomes RGB, which save as P5 and P6
    Image.fromarray(img).save(path, format="PPM")


def stripe_centroids(bev: np.ndarray, cfg: BevConfig, lateral_x: float, half_window_m: float,
                     z_range: tuple[float, float] = (6.0, 40.0), background: float = 80.0):
    """Per-row column centroid of a bright stripe near lateral position ``lateral_x``.

    Only rows whose whole search window lies on the road (no black pixels)
    and that contain some stripe intensity are returned, as (rows, columns).
    """
    img = np.asarray(bev, dtype=float)
    if img.ndim == 3:
        img = img.mean(axis=2)
    r0 = max(int(np.ceil(cfg.a_z * (cfg.b_z - z_range[1]))), 0)
    r1 = min(int(np.floor(cfg.a_z * (cfg.b_z - z_range[0]))), img.shape[0])
    rows = np.arange(r0, r1)
    c0 = cfg.a_x * (lateral_x + 0.5 * cfg.b_x)
    half = half_window_m * cfg.a_x
    cols = np.arange(max(int(np.floor(c0 - half)), 0), min(int(np.ceil(c0 + half)), img.shape[1]))
    win = img[np.ix_(rows, cols)]
    weight = np.clip(win - background, 0.0, None)
    total = weight.sum(axis=1)
    keep = np.all(win > 0, axis=1) & (total > 0)
    return rows[keep], (weight[keep] @ cols) / total[keep]
