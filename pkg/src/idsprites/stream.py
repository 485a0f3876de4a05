"""Task streams: per-task shape sets, factor grids, splits, the bounded test
set, and the binary dataset format.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    ConfigError,
    FrameViolationError,
    TruncatedError,
    VersionError,
)
from .raster import Latents, factors_to_matrices, fits_frame, render
from .rng import MASK64, Rng, derive_seed
from .shapegen import GenConfig, ShapeSpec, sample_shape

FACTORS = ("scale", "orientation", "pos_x", "pos_y")
# columns of TaskDataset.factors
COLOR, SCALE, ORIENTATION, POS_X, POS_Y = range(5)

_SPLIT_TAG = 0x5350
_RESAMPLE_LIMIT = 64


@dataclass(frozen=True)
class FactorGrid:
    """Values taken by each factor of variation.

    Scale and positions are spaced linearly over their closed ranges;
    orientation takes ``2 pi k / K`` for ``k < K``.
    """

    k_scale: int = 3
    k_orientation: int = 3
    k_pos_x: int = 3
    k_pos_y: int = 3
    scale_range: tuple[float, float] = (0.5, 0.9)
    pos_x_range: tuple[float, float] = (0.35, 0.65)
    pos_y_range: tuple[float, float] = (0.35, 0.65)
    color: float = 1.0

    def __post_init__(self):
        for k in (self.k_scale, self.k_orientation, self.k_pos_x, self.k_pos_y):
            if k < 1:
                raise ConfigError("every factor needs at least one value")
        for lo, hi in (self.scale_range, self.pos_x_range, self.pos_y_range):
            if lo > hi:
                raise ConfigError("factor range lower bound exceeds upper bound")
        if self.scale_range[0] <= 0:
            raise ConfigError("scales must be positive")
        for lo, hi in (self.pos_x_range, self.pos_y_range):
            if lo < 0 or hi > 1:
                raise ConfigError("positions must lie in [0, 1]")
        if not 0 < self.color <= 1:
            raise ConfigError("color must lie in (0, 1]")
        for name in ("scale_range", "pos_x_range", "pos_y_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def counts(self) -> tuple[int, int, int, int]:
        return (self.k_scale, self.k_orientation, self.k_pos_x, self.k_pos_y)

    @property
    def size(self) -> int:
        return math.prod(self.counts)

    def values(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.linspace(*self.scale_range, self.k_scale),
            2.0 * math.pi * np.arange(self.k_orientation) / self.k_orientation,
            np.linspace(*self.pos_x_range, self.k_pos_x),
            np.linspace(*self.pos_y_range, self.k_pos_y),
        )

    def product(self) -> np.ndarray:
        """All grid points as rows (color, scale, orientation, pos_x, pos_y)."""
        s, o, x, y = np.meshgrid(*self.values(), indexing="ij")
        rows = np.empty((self.size, 5))
        rows[:, COLOR] = self.color
        rows[:, SCALE] = s.ravel()
        rows[:, ORIENTATION] = o.ravel()
        rows[:, POS_X] = x.ravel()
        rows[:, POS_Y] = y.ravel()
        return rows

    def to_dict(self) -> dict:
        return {
            "values_per_factor": dict(zip(FACTORS, self.counts)),
            "scale_range": list(self.scale_range),
            "pos_x_range": list(self.pos_x_range),
            "pos_y_range": list(self.pos_y_range),
            "color": self.color,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FactorGrid":
        k = d.get("values_per_factor", {})
        return cls(
            k_scale=k.get("scale", 3),
            k_orientation=k.get("orientation", 3),
            k_pos_x=k.get("pos_x", 3),
            k_pos_y=k.get("pos_y", 3),
            scale_range=tuple(d.get("scale_range", (0.5, 0.9))),
            pos_x_range=tuple(d.get("pos_x_range", (0.35, 0.65))),
            pos_y_range=tuple(d.get("pos_y_range", (0.35, 0.65))),
            color=d.get("color", 1.0),
        )


@dataclass(frozen=True)
class StreamConfig:
    num_tasks: int = 20
    shapes_per_task: int = 5
    grid: FactorGrid = field(default_factory=FactorGrid)
    gen: GenConfig = field(default_factory=GenConfig)
    resolution: int = 64
    supersample: int = 2
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    test_cap: int = 50_000
    master_seed: int = 0

    def __post_init__(self):
        if self.num_tasks < 1 or self.shapes_per_task < 1:
            raise ConfigError("num_tasks and shapes_per_task must be >= 1")
        if self.resolution < 2 or self.supersample < 1:
            raise ConfigError("resolution must be >= 2 and supersample >= 1")
        r = tuple(float(v) for v in self.split_ratios)
        if len(r) != 3 or any(v < 0 for v in r) or r[0] <= 0 or abs(sum(r) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be non-negative, train > 0, and sum to 1: {r}")
        object.__setattr__(self, "split_ratios", r)
        per_task_test = math.floor(self.shapes_per_task * self.grid.size * r[2] + 0.5)
        if self.test_cap < per_task_test:
            raise ConfigError("test_cap must hold at least one task's test split")
        object.__setattr__(self, "master_seed", int(self.master_seed) & MASK64)

    @property
    def samples_per_task(self) -> int:
        return self.shapes_per_task * self.grid.size

    def to_dict(self) -> dict:
        return {
            "num_tasks": self.num_tasks,
            "shapes_per_task": self.shapes_per_task,
            "grid": self.grid.to_dict(),
            "gen": self.gen.to_dict(),
            "resolution": self.resolution,
            "supersample": self.supersample,
            "split_ratios": list(self.split_ratios),
            "test_cap": self.test_cap,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StreamConfig":
        d = dict(d)
        if "grid" in d:
            d["grid"] = FactorGrid.from_dict(d["grid"])
        if "gen" in d:
            d["gen"] = GenConfig.from_dict(d["gen"])
        if "split_ratios" in d:
            d["split_ratios"] = tuple(d["split_ratios"])
        return cls(**d)


@dataclass(eq=False)
class TaskDataset:
    """One task: its shapes plus samples stored as render recipes.

    Sample ``m`` is the shape of class ``labels[m]`` rendered at the factor
    row ``factors[m]``. ``pixels`` holds rendered images when the dataset was
    loaded from an eager file or rendered with :meth:`materialize`.
    """

    task_index: int
    shapes: list[ShapeSpec]
    class_ids: list[int]
    labels: np.ndarray
    factors: np.ndarray
    grid: FactorGrid
    resolution: int = 64
    supersample: int = 2
    pixels: np.ndarray | None = None
    exemplar_pixels: np.ndarray | None = None
    config: dict | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, TaskDataset):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(a, b)

        return (
            self.task_index == other.task_index
            and self.class_ids == other.class_ids
            and self.shapes == other.shapes
            and self.grid == other.grid
            and self.resolution == other.resolution
            and self.supersample == other.supersample
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.factors, other.factors)
            and same(self.pixels, other.pixels)
            and same(self.exemplar_pixels, other.exemplar_pixels)
        )

    @property
    def seeds(self) -> list[int | None]:
        return [s.seed for s in self.shapes]

    def shape_of(self, class_id: int) -> ShapeSpec:
        return self.shapes[self.class_ids.index(int(class_id))]

    def latents(self, m: int) -> Latents:
        f = self.factors[m]
        return Latents(int(self.labels[m]), *map(float, f))

    def matrices(self) -> np.ndarray:
        """Ground-truth normalization matrices of every sample, (N, 2, 3)."""
        f = self.factors
        return factors_to_matrices(f[:, SCALE], f[:, ORIENTATION], f[:, POS_X], f[:, POS_Y])

    def images(self, threads: int = 1) -> np.ndarray:
        """All sample images, (N, H, W) float32."""
        if self.pixels is not None:
            return self.pixels
        lookup = dict(zip(self.class_ids, self.shapes))
        recipes = [(lookup[int(c)], self.latents(m)) for m, c in enumerate(self.labels)]
        return render_many(recipes, self.resolution, self.supersample, threads)

    def exemplars(self) -> np.ndarray:
        """Canonical render of every class, (n, H, W) float32, ordered as ``class_ids``."""
        if self.exemplar_pixels is not None:
            return self.exemplar_pixels
        z = Latents(color=self.grid.color)
        out = np.empty((len(self.shapes), self.resolution, self.resolution), dtype=np.float32)
        for k, shape in enumerate(self.shapes):
            out[k] = render(shape, z, self.resolution, self.supersample)
        return out

    def materialize(self, threads: int = 1) -> "TaskDataset":
        """Copy with pixels rendered eagerly."""
        return TaskDataset(
            self.task_index, list(self.shapes), list(self.class_ids), self.labels.copy(),
            self.factors.copy(), self.grid, self.resolution, self.supersample,
            np.ascontiguousarray(self.images(threads)), np.ascontiguousarray(self.exemplars()), self.config,
        )

    def subset(self, idx) -> "TaskDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return TaskDataset(
            self.task_index, list(self.shapes), list(self.class_ids), self.labels[idx],
            self.factors[idx], self.grid, self.resolution, self.supersample,
            None if self.pixels is None else self.pixels[idx], self.exemplar_pixels, self.config,
        )


def render_many(recipes, resolution: int, supersample: int, threads: int = 1) -> np.ndarray:
    """Render (shape, latents) pairs in order; the thread count never changes the output."""
    out = np.empty((len(recipes), resolution, resolution), dtype=np.float32)
    if threads > 1 and len(recipes) > 1:
        with ThreadPoolExecutor(threads) as pool:
            for m, img in enumerate(pool.map(lambda r: render(r[0], r[1], resolution, supersample), recipes)):
                out[m] = img
    else:
        for m, (shape, z) in enumerate(recipes):
            out[m] = render(shape, z, resolution, supersample)
    return out


def _fits_grid(shape: ShapeSpec, grid: FactorGrid) -> bool:
    scales, orients, xs, ys = grid.values()
    for s in (scales.min(), scales.max()):
        for phi in orients:
            for px in (xs.min(), xs.max()):
                for py in (ys.min(), ys.max()):
                    z = Latents(scale=float(s), orientation=float(phi), pos_x=float(px), pos_y=float(py))
                    if not fits_frame(shape, z):
                        return False
    return True


def task_shape(cfg: StreamConfig, t: int, i: int) -> ShapeSpec:
    """Shape ``i`` of task ``t``; redrawn with the next attempt seed if it cannot fit the grid."""
    for attempt in range(_RESAMPLE_LIMIT):
        shape = sample_shape(derive_seed(cfg.master_seed, t, i, attempt), cfg.gen)
        if _fits_grid(shape, cfg.grid):
            return shape
    raise FrameViolationError(f"no shape for task {t}, slot {i} fits the factor grid")


def make_task(cfg: StreamConfig, t: int) -> TaskDataset:
    if not 0 <= t < cfg.num_tasks:
        raise ConfigError(f"task index {t} outside [0, {cfg.num_tasks})")
    n = cfg.shapes_per_task
    shapes = [task_shape(cfg, t, i) for i in range(n)]
    class_ids = [t * n + i for i in range(n)]
    rows = cfg.grid.product()
    labels = np.repeat(np.asarray(class_ids, dtype=np.int64), len(rows))
    factors = np.tile(rows, (n, 1))
    return TaskDataset(
        t, shapes, class_ids, labels, factors, cfg.grid, cfg.resolution, cfg.supersample,
        config=cfg.to_dict(),
    )


def split_sizes(total: int, ratios) -> tuple[int, int, int]:
    """Validation and test sizes are ``round(ratio * total)``; train takes the rest."""
    n_val = math.floor(ratios[1] * total + 0.5)
    n_test = math.floor(ratios[2] * total + 0.5)
    return total - n_val - n_test, n_val, n_test


def split(ds: TaskDataset, ratios=(0.98, 0.01, 0.01), seed: int = 0, require_nonempty: bool = False):
    """Seeded disjoint partition into (train, val, test) subsets."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"invalid split ratios {ratios}")
    sizes = split_sizes(len(ds), ratios)
    if sizes[0] < 0:
        raise ConfigError("split sizes exceed dataset size")
    if require_nonempty and min(sizes) == 0:
        raise ConfigError(f"split sizes {sizes} contain an empty part")
    perm = Rng(seed).permutation(len(ds))
    n_train, n_val, _ = sizes
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(ds.subset(sorted(p)) for p in parts)


def task_split(cfg: StreamConfig, ds: TaskDataset):
    return split(ds, cfg.split_ratios, derive_seed(cfg.master_seed, ds.task_index, _SPLIT_TAG))


class ClassBalancedReservoir:
    """Bounded store that stays class-balanced once full.

    Below capacity every offered item is kept. Above it, each class gets a
    quota of ``capacity // classes`` with the remainder going to the lowest
    class ids; a class holding fewer items than its quota keeps them all and
    its slack is shared by the others. Surplus items are evicted uniformly at
    random.
    """

    def __init__(self, capacity: int, seed: int = 0):
        if capacity < 1:
            raise ConfigError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.rng = Rng(seed)
        self.items: dict[int, list] = {}

    def __len__(self) -> int:
        return sum(len(v) for v in self.items.values())

    @property
    def classes(self) -> list[int]:
        return sorted(self.items)

    def counts(self) -> dict[int, int]:
        return {c: len(self.items[c]) for c in self.classes}

    def quotas(self, available: dict[int, int]) -> dict[int, int]:
        remaining = sorted(available)
        budget = self.capacity
        fixed: dict[int, int] = {}
        while remaining:
            q, r = divmod(budget, len(remaining))
            target = {c: q + (1 if k < r else 0) for k, c in enumerate(remaining)}
            short = [c for c in remaining if available[c] < target[c]]
            if not short:
                fixed.update(target)
                break
            for c in short:
                fixed[c] = available[c]
                budget -= available[c]
            remaining = [c for c in remaining if c not in short]
        return fixed

    def add(self, class_ids, items) -> None:
        """Offer ``items`` with their class ids, then rebalance if over capacity."""
        for c, it in zip(class_ids, items):
            self.items.setdefault(int(c), []).append(it)
        if len(self) <= self.capacity:
            return
        quota = self.quotas({c: len(v) for c, v in self.items.items()})
        for c in self.classes:
            have = self.items[c]
            if len(have) > quota[c]:
                keep = self.rng.sample_indices(len(have), quota[c])
                self.items[c] = [have[k] for k in keep]
            if not self.items[c]:
                del self.items[c]

    def all_items(self) -> list[tuple[int, object]]:
        return [(c, it) for c in self.classes for it in self.items[c]]


class TestAccumulator(ClassBalancedReservoir):
    """Accumulated test set over all tasks seen so far.

    Items are ``(class_id, factor_row)`` recipes; shapes are looked up from
    the registry filled by :func:`accumulate_test`.
    """

    __test__ = False  # not a pytest class

    def __init__(self, capacity: int = 50_000, seed: int = 0):
        super().__init__(capacity, seed)
        self.shapes: dict[int, ShapeSpec] = {}
        self.retired: set[int] = set()

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        pairs = self.all_items()
        labels = np.array([c for c, _ in pairs], dtype=np.int64)
        factors = np.array([f for _, f in pairs], dtype=np.float64).reshape(len(pairs), 5)
        return labels, factors

    def dataset(self, template: TaskDataset) -> TaskDataset:
        labels, factors = self.arrays()
        ids = sorted(self.shapes)
        return TaskDataset(
            template.task_index, [self.shapes[c] for c in ids], ids, labels, factors,
            template.grid, template.resolution, template.supersample,
        )


def accumulate_test(acc: TestAccumulator, test: TaskDataset) -> TestAccumulator:
    incoming = set(int(c) for c in np.unique(test.labels))
    clash = incoming & (acc.retired | set(acc.items))
    if clash:
        raise ConfigError(f"classes already seen by the accumulator: {sorted(clash)[:5]}")
    for c in incoming:
        acc.shapes[c] = test.shape_of(c)
    acc.add(test.labels.tolist(), [tuple(row) for row in test.factors.tolist()])
    acc.retired |= incoming - set(acc.items)
    return acc


# ---------------------------------------------------------------- file format

MAGIC = b"IDSP"
VERSION = 1
KIND_RECIPE = 0
KIND_PIXELS = 1
_HEAD = struct.Struct("<4sHB")
_META = struct.Struct("<6I4I7dQI")
_NO_SEED = MASK64


def _pack_shape(out: list, class_id: int, shape: ShapeSpec) -> None:
    seed = _NO_SEED if shape.seed is None else shape.seed
    out.append(struct.pack("<qQBI", class_id, seed, shape.spline_order, len(shape.control_vertices)))
    out.append(np.ascontiguousarray(shape.control_vertices, dtype="<f8").tobytes())
    out.append(struct.pack("<I", len(shape.outline)))
    out.append(np.ascontiguousarray(shape.outline, dtype="<f8").tobytes())
    out.append(np.ascontiguousarray(shape.centroid, dtype="<f8").tobytes())
    out.append(struct.pack("<4d", *shape.bbox))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError("payload ends early")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype: str, shape) -> np.ndarray:
        n = int(np.prod(shape))
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(n * dt.itemsize), dtype=dt).astype(dt.newbyteorder("="), copy=True).reshape(shape)


def encode_dataset(ds: TaskDataset, kind: int | None = None) -> bytes:
    if kind is None:
        kind = KIND_PIXELS if ds.pixels is not None else KIND_RECIPE
    parts: list[bytes] = []
    for c, shape in zip(ds.class_ids, ds.shapes):
        _pack_shape(parts, c, shape)
    parts.append(np.ascontiguousarray(ds.labels, dtype="<i8").tobytes())
    parts.append(np.ascontiguousarray(ds.factors, dtype="<f8").tobytes())
    if kind == KIND_PIXELS:
        parts.append(np.ascontiguousarray(ds.images(), dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(ds.exemplars(), dtype="<f4").tobytes())
    elif kind != KIND_RECIPE:
        raise ValueError(f"unknown payload kind {kind}")
    payload = b"".join(parts)
    g = ds.grid
    meta = _META.pack(
        ds.task_index, len(ds.shapes), ds.resolution, ds.resolution, ds.supersample, len(ds),
        *g.counts, *g.scale_range, *g.pos_x_range, *g.pos_y_range, g.color,
        len(payload), zlib.crc32(payload),
    )
    return _HEAD.pack(MAGIC, VERSION, kind) + meta + payload


def decode_dataset(buf: bytes) -> TaskDataset:
    if len(buf) < _HEAD.size:
        raise TruncatedError("file shorter than its header")
    magic, version, kind = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionError(f"unsupported dataset version {version}")
    if kind not in (KIND_RECIPE, KIND_PIXELS):
        raise VersionError(f"unknown payload kind {kind}")
    if len(buf) < _HEAD.size + _META.size:
        raise TruncatedError("file shorter than its header")
    meta = _META.unpack_from(buf, _HEAD.size)
    t, n_shapes, width, _height, ss, n_samples = meta[:6]
    counts = meta[6:10]
    s_lo, s_hi, x_lo, x_hi, y_lo, y_hi, color = meta[10:17]
    length, crc = meta[17:19]
    payload = buf[_HEAD.size + _META.size:]
    if len(payload) < length:
        raise TruncatedError(f"payload has {len(payload)} of {length} bytes")
    payload = payload[:length]
    if zlib.crc32(payload) != crc:
        raise ChecksumError("payload CRC32 mismatch")
    grid = FactorGrid(*counts, (s_lo, s_hi), (x_lo, x_hi), (y_lo, y_hi), color)
    r = _Reader(payload)
    shapes, class_ids = [], []
    for _ in range(n_shapes):
        c, seed, order, nv = r.unpack("<qQBI")
        verts = r.array("<f8", (nv, 2))
        (no,) = r.unpack("<I")
        outline = r.array("<f8", (no, 2))
        centroid = r.array("<f8", (2,))
        bbox = r.unpack("<4d")
        class_ids.append(c)
        shapes.append(ShapeSpec(verts, order, outline, centroid, bbox, None if seed == _NO_SEED else seed))
    labels = r.array("<i8", (n_samples,))
    factors = r.array("<f8", (n_samples, 5))
    pixels = exemplars = None
    if kind == KIND_PIXELS:
        pixels = r.array("<f4", (n_samples, width, width))
        exemplars = r.array("<f4", (n_shapes, width, width))
    return TaskDataset(t, shapes, class_ids, labels, factors, grid, width, ss, pixels, exemplars)


def write_dataset(ds: TaskDataset, path, kind: int | None = None, manifest: bool = True) -> Path:
    path = Path(path)
    path.write_bytes(encode_dataset(ds, kind))
    if manifest:
        side = {
            "task_index": ds.task_index,
            "class_ids": ds.class_ids,
            "seeds": ds.seeds,
            "num_samples": len(ds),
            "config": ds.config,
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2))
    return path


def read_dataset(path) -> TaskDataset:
    path = Path(path)
    ds = decode_dataset(path.read_bytes())
    side = path.with_suffix(path.suffix + ".json")
    if side.exists():
        ds.config = json.loads(side.read_text()).get("config")
    return ds
