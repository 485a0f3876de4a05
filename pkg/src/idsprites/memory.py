"""Exemplar memory: one canonical image per class, nearest-exemplar
classification, the two-nearest novelty rule and precision-recall evaluation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DuplicateClassError, EmptyBufferError, FormatError, MissingClassError
from .raster import load_png, save_png

DEFAULT_SIGMAS = np.linspace(0.0, 1.0, 101)


class ExemplarBuffer:
    """Map of class id to exemplar image with an append-only edit log.

    Two buffers compare equal when they hold the same classes with identical
    images; the log is not part of equality.
    """

    def __init__(self):
        self._items: dict[int, np.ndarray] = {}
        self.log: list[tuple[str, int]] = []
        self._cache = None

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, class_id) -> bool:
        return int(class_id) in self._items

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExemplarBuffer):
            return NotImplemented
        return self._items.keys() == other._items.keys() and all(
            np.array_equal(v, other._items[k]) for k, v in self._items.items())

    @property
    def classes(self) -> list[int]:
        return sorted(self._items)

    @property
    def shape(self):
        return next(iter(self._items.values())).shape if self._items else None

    def get(self, class_id: int) -> np.ndarray:
        try:
            return self._items[int(class_id)]
        except KeyError:
            raise MissingClassError(int(class_id)) from None

    def add(self, class_id: int, img, replace: bool = False) -> None:
        class_id = int(class_id)
        if class_id in self._items and not replace:
            raise DuplicateClassError(class_id)
        img = np.array(img, dtype=np.float32)
        if img.ndim != 2:
            raise ValueError("exemplars are 2-D images")
        if self.shape is not None and img.shape != self.shape and not (len(self) == 1 and class_id in self._items):
            raise ValueError(f"exemplar shape {img.shape} differs from buffer shape {self.shape}")
        self._items[class_id] = img
        self.log.append(("replace" if replace else "add", class_id))
        self._cache = None

    def remove(self, class_id: int) -> None:
        class_id = int(class_id)
        if class_id not in self._items:
            raise MissingClassError(class_id)
        del self._items[class_id]
        self.log.append(("remove", class_id))
        self._cache = None

    def clear(self) -> None:
        for c in self.classes:
            self.remove(c)

    def copy(self) -> "ExemplarBuffer":
        out = ExemplarBuffer()
        out._items = {k: v.copy() for k, v in self._items.items()}
        out.log = list(self.log)
        return out

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Class ids (ascending) and the exemplars flattened to rows (float64)."""
        if self._cache is None:
            ids = np.array(self.classes, dtype=np.int64)
            rows = np.stack([self._items[c].ravel() for c in ids]).astype(np.float64) if len(ids) else np.zeros((0, 0))
            self._cache = (ids, rows)
        return self._cache

    # -------------------------------------------------------------- export

    def export(self, directory) -> Path:
        """Write ``<class_id>.png`` per exemplar plus ``index.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for c in self.classes:
            save_png(self._items[c], directory / f"{c}.png")
        index = {"classes": self.classes, "shape": list(self.shape or ()), "log": [list(e) for e in self.log]}
        (directory / "index.json").write_text(json.dumps(index, indent=2))
        return directory

    @classmethod
    def load(cls, directory) -> "ExemplarBuffer":
        """Read an exported buffer. Pixels come back quantized to 8 bits."""
        directory = Path(directory)
        try:
            index = json.loads((directory / "index.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"unreadable buffer index in {directory}: {exc}") from exc
        buf = cls()
        for c in index["classes"]:
            buf.add(c, load_png(directory / f"{c}.png"))
        buf.log = [tuple(e) for e in index.get("log", [])]
        return buf


def add_exemplar(buf: ExemplarBuffer, class_id: int, img, replace: bool = False) -> ExemplarBuffer:
    buf.add(class_id, img, replace)
    return buf


def remove_class(buf: ExemplarBuffer, class_id: int) -> ExemplarBuffer:
    buf.remove(class_id)
    return buf


def distances(buf: ExemplarBuffer, imgs, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Mean squared pixel distance of every image to every exemplar.

    Returns the class ids (ascending) and an (N, C) distance matrix. The
    difference is formed explicitly, which keeps zero distances exact.
    """
    if len(buf) == 0:
        raise EmptyBufferError("exemplar buffer is empty")
    ids, ex = buf.matrix()
    x = np.asarray(imgs, dtype=np.float64).reshape(-1, ex.shape[1])
    out = np.empty((len(x), len(ids)))
    for s in range(0, len(x), chunk):
        diff = x[s:s + chunk, None, :] - ex[None, :, :]
        out[s:s + chunk] = np.einsum("ncp,ncp->nc", diff, diff) / ex.shape[1]
    return ids, out


def classify_batch(buf: ExemplarBuffer, imgs) -> tuple[np.ndarray, np.ndarray]:
    """Nearest exemplar per image; ties go to the lowest class id."""
    ids, d = distances(buf, imgs)
    best = np.argmin(d, axis=1)
    return ids[best], d[np.arange(len(d)), best]


def classify(buf: ExemplarBuffer, img) -> tuple[int, float]:
    labels, d = classify_batch(buf, np.asarray(img)[None])
    return int(labels[0]), float(d[0])


@dataclass(frozen=True)
class NoveltyDecision:
    is_novel: bool
    best_class: int
    d1: float
    d2: float
    sigma: float


def two_nearest(buf: ExemplarBuffer, imgs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best class, smallest and second smallest distance per image."""
    if len(buf) < 2:
        raise EmptyBufferError("novelty detection needs at least two exemplars")
    ids, d = distances(buf, imgs)
    best = np.argmin(d, axis=1)
    rows = np.arange(len(d))
    d1 = d[rows, best]
    rest = d.copy()
    rest[rows, best] = np.inf
    return ids[best], d1, rest.min(axis=1)


def detect_novel(buf: ExemplarBuffer, img, sigma: float) -> NoveltyDecision:
    """Novel when the best match is not clearly better than the runner-up: ``d1 > sigma * d2``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    best, d1, d2 = two_nearest(buf, np.asarray(img)[None])
    return NoveltyDecision(bool(d1[0] > sigma * d2[0]), int(best[0]), float(d1[0]), float(d2[0]), float(sigma))


# ------------------------------------------------------------------ PR curve


@dataclass
class PRCurve:
    sigmas: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    auc: float

    def rows(self):
        return [(float(s), float(p), float(r)) for s, p, r in zip(self.sigmas, self.precision, self.recall)]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sigma", "precision", "recall"])
            for s, p, r in self.rows():
                w.writerow([repr(s), repr(p), repr(r)])
        return path

    @classmethod
    def from_csv(cls, path) -> "PRCurve":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        s = np.array([float(r["sigma"]) for r in rows])
        p = np.array([float(r["precision"]) for r in rows])
        r_ = np.array([float(r["recall"]) for r in rows])
        return cls(s, p, r_, trapezoid_auc(p, r_))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PRCurve):
            return NotImplemented
        return (np.array_equal(self.sigmas, other.sigmas) and np.array_equal(self.precision, other.precision)
                and np.array_equal(self.recall, other.recall))


def trapezoid_auc(precision, recall) -> float:
    """Area under precision(recall) by the trapezoid rule over recall-sorted points."""
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    order = np.lexsort((-precision, recall))
    r, p = recall[order], precision[order]
    return float(np.sum(np.diff(r) * 0.5 * (p[1:] + p[:-1])))


def pr_curve(ratios, is_seen, sigmas=DEFAULT_SIGMAS) -> PRCurve:
    """Precision and recall of the "seen" decision over a sigma grid.

    ``ratios`` are ``d1 / d2`` per input (``d1 > sigma * d2`` is the novelty
    test, so an input is declared seen when ``d1 <= sigma * d2``); pass
    ``(d1, d2)`` pairs via :func:`pr_curve_from_distances` to avoid division.
    The positive class is "seen". When nothing is declared seen, precision is
    defined as 1 with recall 0; when everything is, recall is 1 and precision
    equals the seen prevalence.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    return _pr(lambda s: ratios <= s, is_seen, sigmas)


def pr_curve_from_distances(d1, d2, is_seen, sigmas=DEFAULT_SIGMAS) -> PRCurve:
    d1 = np.asarray(d1, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    return _pr(lambda s: ~(d1 > s * d2), is_seen, sigmas)


def _pr(declared_seen, is_seen, sigmas) -> PRCurve:
    truth = np.asarray(is_seen, dtype=bool)
    if truth.all() or not truth.any():
        raise ValueError("precision-recall needs both seen and novel ground truth")
    sigmas = np.asarray(sigmas, dtype=np.float64)
    prec = np.empty(len(sigmas))
    rec = np.empty(len(sigmas))
    n_pos = truth.sum()
    for k, s in enumerate(sigmas):
        pred = declared_seen(s)
        tp = np.count_nonzero(pred & truth)
        npred = np.count_nonzero(pred)
        prec[k] = tp / npred if npred else 1.0
        rec[k] = tp / n_pos
    return PRCurve(sigmas, prec, rec, trapezoid_auc(prec, rec))
