"""Random closed shapes: perturbed regular polygons joined by a closed spline.

Shapes live in shape-local coordinates (x right, y down, same handedness as
image rows). After :func:`canonicalize` the area centroid sits at the origin
and the larger bounding-box side has length 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DegenerateShapeError
from .rng import Rng


@dataclass(frozen=True)
class GenConfig:
    """Parameters of the shape distribution.

    ``radial_noise`` is the half-width of the multiplicative radius factor
    ``U[1 - r, 1 + r]``; ``angular_noise`` is the fraction of half the nominal
    vertex gap ``pi / n`` by which each vertex angle may move.
    """

    vertex_min: int = 3
    vertex_max: int = 8
    radial_noise: float = 0.3
    angular_noise: float = 0.5
    spline_orders: tuple[int, ...] = (1, 3)
    samples_per_segment: int = 64

    def __post_init__(self):
        if self.vertex_min < 3:
            raise ConfigError("vertex_min must be >= 3")
        if self.vertex_max < self.vertex_min:
            raise ConfigError("vertex_max must be >= vertex_min")
        for name in ("radial_noise", "angular_noise"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {v}")
        orders = tuple(self.spline_orders)
        if not orders or any(o not in (1, 3) for o in orders):
            raise ConfigError("spline_orders must be a non-empty subset of {1, 3}")
        object.__setattr__(self, "spline_orders", tuple(sorted(set(orders))))
        if self.samples_per_segment < 1:
            raise ConfigError("samples_per_segment must be >= 1")

    def to_dict(self) -> dict:
        return {
            "vertex_min": self.vertex_min,
            "vertex_max": self.vertex_max,
            "radial_noise": self.radial_noise,
            "angular_noise": self.angular_noise,
            "spline_orders": list(self.spline_orders),
            "samples_per_segment": self.samples_per_segment,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        if "spline_orders" in d:
            d["spline_orders"] = tuple(d["spline_orders"])
        return cls(**d)


class Region(NamedTuple):
    centroid: np.ndarray
    area: float
    winding: int  # +1 for positive signed area, -1 otherwise


@dataclass(eq=False)
class ShapeSpec:
    control_vertices: np.ndarray  # (n, 2)
    spline_order: int
    outline: np.ndarray  # (m, 2), closed: outline[0] == outline[-1]
    centroid: np.ndarray = field(default_factory=lambda: np.zeros(2))
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    seed: int | None = None

    def __eq__(self, other):
        if not isinstance(other, ShapeSpec):
            return NotImplemented
        return (
            self.spline_order == other.spline_order
            and self.seed == other.seed
            and tuple(self.bbox) == tuple(other.bbox)
            and np.array_equal(self.control_vertices, other.control_vertices)
            and np.array_equal(self.outline, other.outline)
            and np.array_equal(self.centroid, other.centroid)
        )

    @property
    def max_radius(self) -> float:
        return float(np.sqrt((self.outline ** 2).sum(axis=1)).max())

    @property
    def area(self) -> float:
        return centroid_area(self.outline).area


def flatten_spline(control_vertices, spline_order: int, samples_per_segment: int) -> np.ndarray:
    """Sample the closed curve through ``control_vertices``.

    Order 1 gives the polygon, order 3 a uniform periodic Catmull-Rom spline.
    Each of the ``n`` segments contributes ``samples_per_segment`` points
    starting at its first control vertex; the first point is repeated at the
    end so the polyline is closed exactly.
    """
    p = np.asarray(control_vertices, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) < 3:
        raise DegenerateShapeError("need at least 3 control vertices")
    if spline_order not in (1, 3):
        raise ValueError(f"unsupported spline order {spline_order}")
    if samples_per_segment < 1:
        raise ValueError("samples_per_segment must be >= 1")

    n = len(p)
    t = (np.arange(samples_per_segment, dtype=np.float64) / samples_per_segment)[None, :, None]
    p1 = p[:, None, :]
    p2 = np.roll(p, -1, axis=0)[:, None, :]
    if spline_order == 1:
        pts = p1 + t * (p2 - p1)
    else:
        p0 = np.roll(p, 1, axis=0)[:, None, :]
        p3 = np.roll(p, -2, axis=0)[:, None, :]
        c1 = p2 - p0
        c2 = 2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3
        c3 = 3.0 * (p1 - p2) + p3 - p0
        pts = 0.5 * (2.0 * p1 + t * (c1 + t * (c2 + t * c3)))
    pts = pts.reshape(n * samples_per_segment, 2)
    return np.concatenate([pts, pts[:1]], axis=0)


def centroid_area(outline) -> Region:
    """Area centroid and absolute area of a closed polyline (shoelace)."""
    pts = np.asarray(outline, dtype=np.float64)
    if len(pts) < 4:
        raise DegenerateShapeError("outline needs at least 3 distinct points")
    origin = pts[0]
    q = pts - origin
    x0, y0 = q[:-1, 0], q[:-1, 1]
    x1, y1 = q[1:, 0], q[1:, 1]
    cross = x0 * y1 - x1 * y0
    signed = 0.5 * cross.sum()
    if abs(signed) < 1e-12:
        raise DegenerateShapeError("outline encloses (near) zero area")
    cx = ((x0 + x1) * cross).sum() / (6.0 * signed)
    cy = ((y0 + y1) * cross).sum() / (6.0 * signed)
    return Region(np.array([cx, cy]) + origin, abs(signed), 1 if signed > 0 else -1)


def _bbox(pts: np.ndarray) -> tuple[float, float, float, float]:
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def canonicalize(shape: ShapeSpec) -> ShapeSpec:
    """Move the area centroid to the origin and scale the larger bbox side to 1."""
    c = centroid_area(shape.outline).centroid
    outline = shape.outline - c
    x0, y0, x1, y1 = _bbox(outline)
    side = max(x1 - x0, y1 - y0)
    if side <= 0.0:
        raise DegenerateShapeError("zero-size bounding box")
    k = 1.0 / side
    outline = outline * k
    verts = (shape.control_vertices - c) * k
    return ShapeSpec(
        control_vertices=verts,
        spline_order=shape.spline_order,
        outline=outline,
        centroid=centroid_area(outline).centroid,
        bbox=_bbox(outline),
        seed=shape.seed,
    )


def polygon_vertices(rng: Rng, cfg: GenConfig) -> np.ndarray:
    n = rng.randint(cfg.vertex_min, cfg.vertex_max)
    gap = 2.0 * math.pi / n
    verts = np.empty((n, 2))
    for k in range(n):
        r = 1.0 + cfg.radial_noise * (2.0 * rng.uniform() - 1.0)
        phi = k * gap + cfg.angular_noise * (2.0 * rng.uniform() - 1.0) * (0.5 * gap)
        verts[k] = (r * math.cos(phi), r * math.sin(phi))
    return verts


def sample_shape(seed: int, cfg: GenConfig | None = None) -> ShapeSpec:
    """Draw one canonical random shape; a pure function of ``(seed, cfg)``."""
    cfg = cfg or GenConfig()
    rng = Rng(seed)
    verts = polygon_vertices(rng, cfg)
    order = rng.choice(cfg.spline_orders)
    outline = flatten_spline(verts, order, cfg.samples_per_segment)
    raw = ShapeSpec(control_vertices=verts, spline_order=order, outline=outline, seed=int(seed))
    return canonicalize(raw)
