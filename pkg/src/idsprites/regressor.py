"""Normalization-matrix regressors.

:class:`AnalyticEstimator` recovers the pose from image moments in closed
form. :class:`TinyNet` is a small fully connected network trained with MSE to
the ground-truth matrices, with hand-written backpropagation and Adam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousOrientationError, InsufficientMassError
from .nets import MLP, AdamState, adam_step, downsample
from .raster import DARK_RATIO, Latents, latents_to_matrix
from .rng import Rng, derive_seed
from .shapegen import ShapeSpec

TWO_PI = 2.0 * math.pi


# ------------------------------------------------------------------ analytic


def _clip_half(outline: np.ndarray, sign: float) -> np.ndarray:
    """Clip a closed polygon to ``sign * y >= 0`` (one Sutherland-Hodgman pass)."""
    out = []
    pts = outline[:-1]
    n = len(pts)
    for k in range(n):
        p, q = pts[k], pts[(k + 1) % n]
        pin, qin = sign * p[1] >= 0.0, sign * q[1] >= 0.0
        if pin:
            out.append(p)
        if pin != qin:
            t = p[1] / (p[1] - q[1])
            out.append(p + t * (q - p))
    if len(out) < 3:
        return np.zeros((0, 2))
    out.append(out[0])
    return np.asarray(out)


def _shoelace(poly: np.ndarray) -> float:
    if len(poly) < 4:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return abs(0.5 * float((x[:-1] * y[1:] - x[1:] * y[:-1]).sum()))


def half_areas(shape: ShapeSpec) -> tuple[float, float]:
    """Shoelace areas of the bright (y < 0) and dark (y > 0) halves of a canonical shape."""
    return _shoelace(_clip_half(shape.outline, -1.0)), _shoelace(_clip_half(shape.outline, 1.0))


def _erode(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] &= mask[:-1, :]
    out[:-1, :] &= mask[1:, :]
    out[:, 1:] &= mask[:, :-1]
    out[:, :-1] &= mask[:, 1:]
    out[0, :] = out[-1, :] = out[:, 0] = out[:, -1] = False
    return out


@dataclass
class AnalyticEstimator:
    """Closed-form pose estimator from image moments.

    Translation is the centroid of the binarized foreground. Orientation is
    the angle of the line through that centroid that best separates the
    bright half from the dark half. Scale comes from the ratio of pixel mass
    to the canonical mass when a reference is known (shape recipe, exemplar
    image or ``canonical_mass``); without one it is the larger side of the
    foreground bounding box in the de-rotated frame, which is 1 for every
    canonical shape.
    """

    body_intensity: float = 1.0
    dark_ratio: float = DARK_RATIO
    canonical_mass: float | None = None
    min_mass_px: int = 20
    angle_steps: int = 180

    def __post_init__(self):
        if not 0.0 < self.dark_ratio < 1.0:
            raise ValueError("dark_ratio must lie in (0, 1)")

    def reference_mass(self, reference, width: int, height: int) -> float | None:
        if reference is None:
            return self.canonical_mass
        if isinstance(reference, ShapeSpec):
            bright, dark = half_areas(reference)
            return self.body_intensity * (bright + self.dark_ratio * dark) * (width * height / 4.0)
        if isinstance(reference, (int, float)):
            return float(reference)
        return float(np.asarray(reference, dtype=np.float64).sum())

    def estimate(self, img, reference=None) -> tuple[Latents, np.ndarray]:
        img = np.asarray(img, dtype=np.float64)
        height, width = img.shape
        lo = 0.5 * self.dark_ratio * self.body_intensity
        fg = img > lo
        if fg.sum() < self.min_mass_px:
            raise InsufficientMassError(f"only {int(fg.sum())} foreground pixels")
        jj, ii = np.nonzero(fg)
        cu, cv = ii.mean(), jj.mean()

        hi = 0.5 * (1.0 + self.dark_ratio) * self.body_intensity
        bright = img > hi
        bj, bi = np.nonzero(bright)
        if len(bi) == 0:
            raise AmbiguousOrientationError("no bright pixels")
        off = np.array([bi.mean() - cu, bj.mean() - cv])
        if math.hypot(*off) < 0.25:
            raise AmbiguousOrientationError("bright-half offset below 0.25 px")

        phi = self._orientation(img, fg, bright, cu, cv, width, height)

        ref_mass = self.reference_mass(reference, width, height)
        if ref_mass is not None and ref_mass > 0:
            scale = math.sqrt(img.sum() / ref_mass)
        else:
            scale = self._extent_scale(fg, phi, cu, cv, width, height)

        pos_x = (cu + 0.5) / width
        pos_y = (cv + 0.5) / height
        z = Latents(0, self.body_intensity, scale, phi, min(max(pos_x, 0.0), 1.0), min(max(pos_y, 0.0), 1.0))
        return z, latents_to_matrix(z)

    def _orientation(self, img, fg, bright, cu, cv, width, height) -> float:
        core = _erode(fg)
        if core.sum() < 3:
            core = fg
        jj, ii = np.nonzero(core)
        qx = (ii - cu) * (2.0 / width)
        qy = (jj - cv) * (2.0 / height)
        sign = np.where(bright[jj, ii], 1.0, -1.0)

        def hinge(phis):
            ly = -np.sin(phis)[:, None] * qx[None, :] + np.cos(phis)[:, None] * qy[None, :]
            return np.maximum(sign[None, :] * ly, 0.0).sum(axis=1)

        coarse = TWO_PI * np.arange(self.angle_steps) / self.angle_steps
        phi0 = float(coarse[int(np.argmin(hinge(coarse)))])

        # sub-pixel refinement: fit the bright fraction of interior pixels with
        # a linear coverage ramp across a line of free angle and offset
        pixel = 2.0 / width
        ly0 = -math.sin(phi0) * qx + math.cos(phi0) * qy
        near = np.abs(ly0) < 3.0 * pixel
        if near.sum() < 3:
            return phi0 % TWO_PI
        lo = self.dark_ratio * self.body_intensity
        frac = np.clip((img[jj[near], ii[near]] - lo) / (self.body_intensity - lo), 0.0, 1.0)
        px, py = qx[near], qy[near]

        def soft(phis, offs):
            c, s = np.cos(phis), np.sin(phis)
            ly = -s[:, None] * px[None, :] + c[:, None] * py[None, :]
            ramp = ((np.abs(c) + np.abs(s)) * pixel)[:, None, None]
            pred = np.clip(0.5 - (ly[:, None, :] - offs[None, :, None]) / ramp, 0.0, 1.0)
            err = ((pred - frac[None, None, :]) ** 2).sum(axis=2)
            k = int(np.argmin(err))
            return float(phis[k // len(offs)]), float(offs[k % len(offs)])

        deg = math.radians(1.0)
        phi1, off1 = soft(phi0 + deg * np.linspace(-8.0, 8.0, 65), pixel * np.linspace(-0.6, 0.6, 7))
        phi2, _ = soft(phi1 + deg * np.linspace(-0.3, 0.3, 31), off1 + pixel * np.linspace(-0.2, 0.2, 9))
        return phi2 % TWO_PI

    def _extent_scale(self, fg, phi, cu, cv, width, height) -> float:
        jj, ii = np.nonzero(fg)
        qx = (ii - cu) * (2.0 / width)
        qy = (jj - cv) * (2.0 / height)
        c, s = math.cos(phi), math.sin(phi)
        lx = c * qx + s * qy
        ly = -s * qx + c * qy
        pixel = 2.0 / width
        side = max(lx.max() - lx.min(), ly.max() - ly.min()) + 0.5 * pixel
        return float(side)


def analytic_estimate(img, reference=None, estimator: AnalyticEstimator | None = None):
    """Pose latents (class id 0) and normalization matrix of ``img``."""
    return (estimator or AnalyticEstimator()).estimate(img, reference)


# ------------------------------------------------------------------- learned

INPUT_SIZE = 16
DEFAULT_SIZES = (INPUT_SIZE * INPUT_SIZE, 256, 64, 6)


class TinyNet(MLP):
    """Pixel-to-matrix regressor: 16x16 pooled input, rectifier hidden layers, 6 outputs."""

    def __init__(self, sizes=DEFAULT_SIZES, seed: int = 0):
        if sizes[-1] != 6:
            raise ValueError("a matrix regressor needs exactly 6 outputs")
        super().__init__(sizes, seed)

    @property
    def input_size(self) -> int:
        return int(round(math.sqrt(self.sizes[0])))

    def features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2 and x.shape[1] == self.sizes[0]:
            return x
        return downsample(x, self.input_size)


def forward(net: TinyNet, imgs) -> np.ndarray:
    """Predicted matrices, shape (N, 2, 3)."""
    return net.forward(net.features(imgs)).reshape(-1, 2, 3)


def loss_and_grad(net: MLP, x, thetas) -> tuple[float, list[np.ndarray]]:
    """Mean squared error over the batch and the 6 entries, with parameter gradients."""
    x = net.features(x) if isinstance(net, TinyNet) else np.asarray(x, dtype=np.float64)
    target = np.asarray(thetas, dtype=np.float64).reshape(len(x), -1)
    out, acts = net.forward(x, keep=True)
    diff = out - target
    mse = float((diff * diff).mean())
    return mse, net.backward(acts, (2.0 / diff.size) * diff)


def train_on_task(net: TinyNet, state: AdamState, imgs, thetas, epochs: int = 5,
                  batch_size: int = 32, seed: int = 0) -> list[float]:
    """Minibatch Adam on (image, matrix) pairs; returns the mean MSE of each epoch."""
    x = net.features(imgs)
    y = np.asarray(thetas, dtype=np.float64).reshape(len(x), 6)
    log: list[float] = []
    for epoch in range(epochs):
        order = np.asarray(Rng(derive_seed(seed, epoch)).permutation(len(x)), dtype=np.intp)
        total = 0.0
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            mse, grads = loss_and_grad(net, x[idx], y[idx])
            adam_step(net, grads, state)
            total += mse * len(idx)
        log.append(total / max(len(x), 1))
    return log
