"""Rendering, latent-to-matrix conversion and differentiable affine warps.

Conventions
-----------
Normalized image coordinates span ``[-1, 1]^2`` with x to the right and y
down; pixel ``i`` has its center at ``(2 i + 1) / W - 1``. A shape with
latents ``z`` is placed by ``p -> s R(phi) p + t`` with
``t = (2 p_x - 1, 2 p_y - 1)``. The same matrix ``[s R(phi) | t]`` used as a
*sampling* matrix in :func:`warp` resamples the rendered image back into the
canonical pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import FrameViolationError
from .shapegen import ShapeSpec

TWO_PI = 2.0 * math.pi
DARK_RATIO = 0.4
_FRAME_TOL = 1e-9


@dataclass(frozen=True)
class Latents:
    class_id: int = 0
    color: float = 1.0
    scale: float = 1.0
    orientation: float = 0.0
    pos_x: float = 0.5
    pos_y: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.color <= 1.0:
            raise ValueError(f"color must lie in (0, 1], got {self.color}")
        if not self.scale > 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        for name in ("pos_x", "pos_y"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        phi = math.fmod(self.orientation, TWO_PI)
        if phi < 0.0:
            phi += TWO_PI
        if phi >= TWO_PI:
            phi = 0.0
        object.__setattr__(self, "orientation", phi)

    def canonical(self) -> "Latents":
        """Same class and color in the canonical pose."""
        return replace(self, scale=1.0, orientation=0.0, pos_x=0.5, pos_y=0.5)


def rotation(phi: float) -> np.ndarray:
    """Rotation by ``phi``; positive angles turn clockwise on screen (y down)."""
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def latents_to_matrix(z: Latents) -> np.ndarray:
    """Ground-truth normalization (sampling) matrix ``[s R(phi) | t]``, shape (2, 3)."""
    m = np.empty((2, 3))
    m[:, :2] = z.scale * rotation(z.orientation)
    m[0, 2] = 2.0 * z.pos_x - 1.0
    m[1, 2] = 2.0 * z.pos_y - 1.0
    return m


def factors_to_matrices(scale, orientation, pos_x, pos_y) -> np.ndarray:
    """Vectorized :func:`latents_to_matrix` for arrays of factors, shape (N, 2, 3)."""
    scale = np.asarray(scale, dtype=np.float64)
    c = np.cos(orientation)
    s = np.sin(orientation)
    m = np.empty(scale.shape + (2, 3))
    m[..., 0, 0] = scale * c
    m[..., 0, 1] = -scale * s
    m[..., 1, 0] = scale * s
    m[..., 1, 1] = scale * c
    m[..., 0, 2] = 2.0 * np.asarray(pos_x) - 1.0
    m[..., 1, 2] = 2.0 * np.asarray(pos_y) - 1.0
    return m


def apply_affine(m: np.ndarray, pts) -> np.ndarray:
    """``A p + b`` for an array of points of shape (..., 2)."""
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ m[:, :2].T + m[:, 2]


def _size(resolution) -> tuple[int, int]:
    if isinstance(resolution, (tuple, list)):
        w, h = resolution
        return int(w), int(h)
    return int(resolution), int(resolution)


def placed_outline(shape: ShapeSpec, z: Latents) -> np.ndarray:
    """Outline in normalized image coordinates."""
    return apply_affine(latents_to_matrix(z), shape.outline)


def fits_frame(shape: ShapeSpec, z: Latents) -> bool:
    return bool(np.abs(placed_outline(shape, z)).max() <= 1.0 + _FRAME_TOL)


def render(shape: ShapeSpec, z: Latents, resolution=64, supersample: int = 2) -> np.ndarray:
    """Rasterize ``shape`` at latents ``z`` into a float32 (H, W) image.

    The body is painted with ``z.color``; the half of the shape with positive
    shape-local y is painted at ``DARK_RATIO * color``. Pixels are the box
    average of ``supersample**2`` even-odd point samples.
    """
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    width, height = _size(resolution)
    pts = placed_outline(shape, z)
    if np.abs(pts).max() > 1.0 + _FRAME_TOL:
        raise FrameViolationError(
            f"shape leaves the frame at scale={z.scale:.4g}, "
            f"position=({z.pos_x:.4g}, {z.pos_y:.4g})"
        )
    pix = np.empty_like(pts)
    pix[:, 0] = (pts[:, 0] + 1.0) * (0.5 * width)
    pix[:, 1] = (pts[:, 1] + 1.0) * (0.5 * height)
    # local y > 0  <=>  -sin(phi) (qx - tx) + cos(phi) (qy - ty) > 0, with q = 2 x / W - 1
    sphi, cphi = math.sin(z.orientation), math.cos(z.orientation)
    tx, ty = 2.0 * z.pos_x - 1.0, 2.0 * z.pos_y - 1.0
    plane = (-2.0 * sphi / width, 2.0 * cphi / height, sphi * (1.0 + tx) - cphi * (1.0 + ty))
    img = kernels.raster_fill(pix, plane, z.color, DARK_RATIO * z.color, width, height, supersample)
    return img.astype(np.float32)


def pixel_affine(m: np.ndarray, width: int, height: int) -> np.ndarray:
    """Express a normalized sampling matrix in centered pixel units.

    The result maps ``(i - (W-1)/2, j - (H-1)/2)`` of an output pixel to the
    input pixel coordinate ``(u, v)`` that is sampled.
    """
    m = np.asarray(m, dtype=np.float64)
    return np.array([
        [m[0, 0], m[0, 1] * (width / height), m[0, 2] * (0.5 * width) + 0.5 * (width - 1)],
        [m[1, 0] * (height / width), m[1, 1], m[1, 2] * (0.5 * height) + 0.5 * (height - 1)],
    ])


def warp(img, m) -> np.ndarray:
    """Bilinear grid sampling of ``img`` at ``M [o; 1]`` with border padding."""
    img = np.asarray(img, dtype=np.float64)
    height, width = img.shape
    return kernels.warp_pixel(img, pixel_affine(m, width, height))


def warp_batch(imgs, ms) -> np.ndarray:
    imgs = np.asarray(imgs, dtype=np.float64)
    _, height, width = imgs.shape
    pix = np.stack([pixel_affine(m, width, height) for m in np.asarray(ms)]) if len(imgs) else np.zeros((0, 2, 3))
    return kernels.warp_batch_pixel(imgs, pix)


def warp_loss_and_grad(img, m, target) -> tuple[float, np.ndarray]:
    """Mean squared error of ``warp(img, m)`` against ``target`` and d/dM, shape (2, 3)."""
    img = np.asarray(img, dtype=np.float64)
    height, width = img.shape
    loss, gp = kernels.warp_grad_pixel(img, pixel_affine(m, width, height), target)
    grad = np.array([
        [gp[0, 0], gp[0, 1] * (width / height), gp[0, 2] * (0.5 * width)],
        [gp[1, 0] * (height / width), gp[1, 1], gp[1, 2] * (0.5 * height)],
    ])
    return loss, grad


def warp_grad(img, m, target) -> np.ndarray:
    return warp_loss_and_grad(img, m, target)[1]


def compose(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    """Sampling matrix equivalent to ``warp(warp(x, m1), m2)``, i.e. ``m1 . m2``."""
    a1, b1 = m1[:, :2], m1[:, 2]
    a2, b2 = m2[:, :2], m2[:, 2]
    out = np.empty((2, 3))
    out[:, :2] = a1 @ a2
    out[:, 2] = a1 @ b2 + b1
    return out


def to_uint8(img) -> np.ndarray:
    """8-bit quantization with round-half-up."""
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_png(img, path) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(img), mode="L").save(path)


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
