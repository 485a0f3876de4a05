"""Experiment orchestration: continual runs of every method over a generated
stream, one-shot and open-set protocols, and CSV/SVG export.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import ClassifierNet, ContrastiveLearner, ReplayBuffer, finetune_step, replay_buffer_only_step, replay_mixed_step
from .errors import ConfigError, EstimationError, IDSpritesError
from .memory import DEFAULT_SIGMAS, ExemplarBuffer, PRCurve, classify_batch, distances, pr_curve_from_distances, two_nearest
from .nets import AdamState, downsample
from .raster import Latents, render, warp_batch
from .regressor import DEFAULT_SIZES, AnalyticEstimator, TinyNet, forward, train_on_task
from .rng import Rng, derive_seed
from .stream import StreamConfig, TestAccumulator, accumulate_test, make_task, render_many, task_shape, task_split

log = logging.getLogger(__name__)

METHODS = (
    "disentangled-analytic",
    "disentangled-learned",
    "finetune",
    "replay-buffer-only",
    "replay-mixed",
    "replay-unbounded",
    "contrastive",
)
REPLAY_METHODS = ("replay-buffer-only", "replay-mixed", "replay-unbounded")
CLASSIFIER_INPUT = 32
UNBOUNDED = 2 ** 62

# seed domains
_NET, _ACC, _REPLAY, _TRAIN, _ONESHOT, _OPENSET = 1, 2, 3, 4, 5, 6


class RunError(IDSpritesError):
    """A module error raised while processing task ``task``."""

    def __init__(self, task: int, cause: BaseException):
        super().__init__(f"task {task}: {type(cause).__name__}: {cause}")
        self.task = task
        self.cause = cause


def desk_stream(**kw) -> StreamConfig:
    """The 20-task, 5-class, 3-values-per-factor stream used for desk runs."""
    return StreamConfig(**kw)


@dataclass(frozen=True)
class ExperimentConfig:
    stream: StreamConfig = field(default_factory=desk_stream)
    method: str = "disentangled-analytic"
    epochs_per_task: int = 5
    batch_size: int = 32
    replay_capacity: int | None = None
    sigmas: tuple = tuple(float(s) for s in DEFAULT_SIGMAS)
    output_dir: str | None = None
    seed: int = 0
    repeats: int = 1
    regressor_sizes: tuple = DEFAULT_SIZES
    threads: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.epochs_per_task < 0 or self.batch_size < 1 or self.repeats < 1 or self.threads < 1:
            raise ConfigError("epochs_per_task >= 0, batch_size >= 1, repeats >= 1 and threads >= 1 required")
        cap = self.replay_capacity
        if self.method in ("replay-buffer-only", "replay-mixed"):
            if cap is None:
                raise ConfigError(f"{self.method} needs replay_capacity")
            if cap < 1:
                raise ConfigError("replay_capacity must be >= 1")
        sig = tuple(float(s) for s in self.sigmas)
        if not sig or any(s < 0 or not math.isfinite(s) for s in sig):
            raise ConfigError("sigmas must be finite and non-negative")
        object.__setattr__(self, "sigmas", sig)
        object.__setattr__(self, "regressor_sizes", tuple(int(v) for v in self.regressor_sizes))

    def capacity(self) -> int:
        return UNBOUNDED if self.method == "replay-unbounded" else int(self.replay_capacity)

    def to_dict(self) -> dict:
        return {
            "stream": self.stream.to_dict(),
            "method": self.method,
            "epochs_per_task": self.epochs_per_task,
            "batch_size": self.batch_size,
            "replay_capacity": self.replay_capacity,
            "sigmas": list(self.sigmas),
            "output_dir": self.output_dir,
            "seed": self.seed,
            "repeats": self.repeats,
            "regressor_sizes": list(self.regressor_sizes),
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "stream" in d:
            try:
                d["stream"] = StreamConfig.from_dict(d["stream"])
            except TypeError as exc:
                raise ConfigError(f"bad stream config: {exc}") from exc
        for k in ("sigmas", "regressor_sizes"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


# ------------------------------------------------------------------ metrics

FIELDS = ("task", "cumulative_accuracy", "own_task_accuracy", "buffer_size", "samples_seen")


@dataclass
class MetricsLog:
    """Per-task metrics. Wall time is kept apart so the CSV stays reproducible."""

    method: str
    rows: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MetricsLog):
            return NotImplemented
        return self.method == other.method and self.rows == other.rows

    def column(self, name: str) -> np.ndarray:
        k = FIELDS.index(name)
        return np.array([r[k] for r in self.rows])

    def append(self, task, cumulative, own, buffer_size, samples_seen, seconds=0.0) -> None:
        self.rows.append((int(task), float(cumulative), float(own), int(buffer_size), int(samples_seen)))
        self.wall_time.append(float(seconds))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FIELDS)
            for t, c, o, b, s in self.rows:
                w.writerow([t, repr(c), repr(o), b, s])
        return path

    def timing_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["task", "wall_time_s"])
            for (t, *_), sec in zip(self.rows, self.wall_time):
                w.writerow([t, f"{sec:.6f}"])
        return path

    @classmethod
    def from_csv(cls, path, method: str | None = None) -> "MetricsLog":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        out = cls(method or path.stem)
        for r in rows:
            out.append(r["task"], r["cumulative_accuracy"], r["own_task_accuracy"], r["buffer_size"], r["samples_seen"])
        return out


def aggregate(logs: list[MetricsLog]) -> list[dict]:
    """Mean and standard deviation of the accuracy columns across repeated runs."""
    if not logs:
        return []
    acc = np.stack([lg.column("cumulative_accuracy") for lg in logs])
    own = np.stack([lg.column("own_task_accuracy") for lg in logs])
    return [
        {"task": int(t), "cumulative_mean": float(acc[:, k].mean()), "cumulative_std": float(acc[:, k].std()),
         "own_mean": float(own[:, k].mean()), "own_std": float(own[:, k].std())}
        for k, t in enumerate(logs[0].column("task"))
    ]


# ------------------------------------------------------------- normalizers


def analytic_matrices(imgs, estimator: AnalyticEstimator | None = None) -> np.ndarray:
    """Analytic pose per image; images the estimator rejects get the identity."""
    est = estimator or AnalyticEstimator()
    out = np.empty((len(imgs), 2, 3))
    for k, img in enumerate(imgs):
        try:
            out[k] = est.estimate(img)[1]
        except EstimationError:
            out[k] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
    return out


def normalize(imgs, regressor=None) -> np.ndarray:
    """Warp images to canonical pose with the analytic estimator (``None``) or a TinyNet."""
    imgs = np.asarray(imgs, dtype=np.float32)
    if regressor is None or isinstance(regressor, AnalyticEstimator):
        mats = analytic_matrices(imgs, regressor)
    else:
        mats = forward(regressor, imgs)
    return warp_batch(imgs, mats)


# ------------------------------------------------------------------ method


class _Method:
    """Training and prediction for one method; owns the model state."""

    def __init__(self, cfg: ExperimentConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.samples_seen = 0
        m = cfg.method
        self.buffer = ExemplarBuffer() if m.startswith("disentangled") else None
        self.net = self.state = None
        if m == "disentangled-learned":
            self.net = TinyNet(cfg.regressor_sizes, derive_seed(seed, _NET))
            self.state = AdamState(self.net.params)
        elif m == "contrastive":
            self.model = ContrastiveLearner(seed=derive_seed(seed, _NET))
            self.exemplars: dict[int, np.ndarray] = {}
        elif m != "disentangled-analytic":
            self.model = ClassifierNet(seed=derive_seed(seed, _NET))
            self.replay = ReplayBuffer(cfg.capacity(), derive_seed(seed, _REPLAY)) if m in REPLAY_METHODS else None

    def buffer_size(self) -> int:
        if self.buffer is not None:
            return len(self.buffer)
        replay = getattr(self, "replay", None)
        return len(replay) if replay is not None else 0

    def start_task(self, ds) -> None:
        ex = ds.exemplars()
        if self.buffer is not None:
            for c, img in zip(ds.class_ids, ex):
                self.buffer.add(c, img)
        elif self.cfg.method == "contrastive":
            for c, f in zip(ds.class_ids, downsample(ex, CLASSIFIER_INPUT)):
                self.exemplars[c] = f

    def train(self, t: int, train, images) -> None:
        cfg, m = self.cfg, self.cfg.method
        e, b = cfg.epochs_per_task, cfg.batch_size
        s = derive_seed(self.seed, _TRAIN, t)
        n = len(train)
        if m == "disentangled-analytic":
            return
        if m == "disentangled-learned":
            train_on_task(self.net, self.state, images, train.matrices(), e, b, s)
            self.samples_seen += n * e
            return
        x = downsample(images, CLASSIFIER_INPUT)
        if m == "contrastive":
            self.model.train_task(x, train.labels, self.exemplars, e, b, s)
            self.samples_seen += n * e
        elif m == "finetune":
            finetune_step(self.model, x, train.labels, e, b, s)
            self.samples_seen += n * e
        elif m == "replay-mixed":
            replayed = n if len(self.replay) else 0
            replay_mixed_step(self.model, self.replay, x, train.labels, e, b, s)
            self.samples_seen += (n + replayed) * e
        else:
            replay_buffer_only_step(self.model, self.replay, x, train.labels, e, b, s)
            self.samples_seen += len(self.replay) * e

    def predict(self, images, normalized=None) -> np.ndarray:
        m = self.cfg.method
        if m == "disentangled-analytic":
            return classify_batch(self.buffer, normalized if normalized is not None else normalize(images))[0]
        if m == "disentangled-learned":
            return classify_batch(self.buffer, normalize(images, self.net))[0]
        x = downsample(images, CLASSIFIER_INPUT)
        if m == "contrastive":
            return self.model.predict(x, self.exemplars)
        return self.model.predict(x)


def run_experiment(cfg: ExperimentConfig, seed: int | None = None) -> MetricsLog:
    """Train task by task, scoring on the accumulated test set after each task."""
    seed = cfg.seed if seed is None else seed
    run_log, _ = run_with_model(cfg, seed)
    return run_log


def run_with_model(cfg: ExperimentConfig, seed: int | None = None):
    """Like :func:`run_experiment` but also returns the trained method state
    (``.buffer``, ``.net``, ``.model``) for the one-shot and open-set protocols.
    """
    seed = cfg.seed if seed is None else seed
    stream = cfg.stream
    method = _Method(cfg, seed)
    acc = TestAccumulator(stream.test_cap, derive_seed(seed, _ACC))
    cache: dict = {}
    norm_cache: dict = {}
    out = MetricsLog(cfg.method)
    for t in range(stream.num_tasks):
        t0 = time.perf_counter()
        try:
            ds = make_task(stream, t)
            train, _, test = task_split(stream, ds)
            method.start_task(ds)
            method.train(t, train, train.images(cfg.threads))
            test_imgs = test.images(cfg.threads)
            for c, row, img in zip(test.labels.tolist(), test.factors.tolist(), test_imgs):
                cache[(c, tuple(row))] = img
            accumulate_test(acc, test)
            pairs = acc.all_items()
            live = {(c, tuple(r)) for c, r in pairs}
            for k in [k for k in cache if k not in live]:
                del cache[k]
                norm_cache.pop(k, None)
            labels = np.array([c for c, _ in pairs], dtype=np.int64)
            imgs = np.stack([cache[(c, tuple(r))] for c, r in pairs])
            normalized = None
            if cfg.method == "disentangled-analytic":
                fresh = [(c, tuple(r)) for c, r in pairs if (c, tuple(r)) not in norm_cache]
                if fresh:
                    warped = normalize(np.stack([cache[k] for k in fresh]))
                    norm_cache.update(zip(fresh, warped))
                normalized = np.stack([norm_cache[(c, tuple(r))] for c, r in pairs])
            cumulative = float(np.mean(method.predict(imgs, normalized) == labels))
            own_norm = np.stack([norm_cache[(c, tuple(r))] for c, r in zip(test.labels.tolist(), test.factors.tolist())
                                 if (c, tuple(r)) in norm_cache]) if normalized is not None else None
            if own_norm is not None and len(own_norm) != len(test):
                own_norm = None
            own = float(np.mean(method.predict(test_imgs, own_norm) == test.labels))
        except IDSpritesError as exc:
            raise RunError(t, exc) from exc
        out.append(t, cumulative, own, method.buffer_size(), method.samples_seen, time.perf_counter() - t0)
        log.info("%s task %d: cumulative %.3f own %.3f", cfg.method, t, cumulative, own)
    return out, method


def run_and_save(cfg: ExperimentConfig, out_dir=None) -> list[MetricsLog]:
    """Run all repeats, writing metrics, timing, aggregate CSVs, a plot and the config echo."""
    out_dir = Path(out_dir or cfg.output_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config_echo(cfg.to_dict(), out_dir / "config.json")
    logs = []
    for r in range(cfg.repeats):
        seed = cfg.seed if r == 0 else derive_seed(cfg.seed, r)
        lg = run_experiment(cfg, seed)
        suffix = "" if cfg.repeats == 1 else f"_run{r}"
        lg.to_csv(out_dir / f"{cfg.method}{suffix}.csv")
        lg.timing_csv(out_dir / f"{cfg.method}{suffix}_timing.csv")
        logs.append(lg)
    if cfg.repeats > 1:
        rows = aggregate(logs)
        with open(out_dir / f"{cfg.method}_aggregate.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows({k: repr(v) if isinstance(v, float) else v for k, v in row.items()} for row in rows)
    export_plots(logs[:1], out_dir / f"{cfg.method}.svg")
    return logs


def write_config_echo(d: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------- protocols


def fresh_classes(stream: StreamConfig, n: int, seed: int, domain: int, first_id: int = 1_000_000):
    """``n`` new shapes from a seed domain disjoint from the training stream."""
    sub = dataclasses.replace(stream, master_seed=derive_seed(stream.master_seed, domain, seed))
    per = stream.shapes_per_task
    return [(first_id + i, task_shape(sub, i // per, i % per)) for i in range(n)]


def _probe_renders(stream: StreamConfig, classes, per_class: int, seed: int, threads: int = 1):
    """``per_class`` renders of each class at grid points drawn without replacement."""
    grid = stream.grid.product()
    recipes, labels = [], []
    for c, shape in classes:
        rng = Rng(derive_seed(seed, c))
        for k in rng.sample_indices(len(grid), min(per_class, len(grid))):
            z = grid[k]
            recipes.append((shape, Latents(c, z[0], z[1], z[2], z[3], z[4])))
            labels.append(c)
    imgs = render_many(recipes, stream.resolution, stream.supersample, threads)
    return imgs, np.array(labels, dtype=np.int64)


def one_shot_eval(regressor, policy: str, unseen_counts=(5, 20, 50), seed: int = 0, train_buffer: ExemplarBuffer | None = None,
                  stream: StreamConfig | None = None, per_class: int = 20, threads: int = 1) -> dict[int, float]:
    """Accuracy on never-trained classes given one exemplar each.

    ``max(unseen_counts)`` fresh classes are probed with the same renders in
    every column. In column ``n`` a probe of class ``i`` is classified against
    the exemplars of the ``n`` fresh classes ``i, i+1, ..., i+n-1`` (cyclic),
    so columns differ only in how many one-shot classes share the memory,
    not in which shapes are tested. ``policy`` "keep" adds ``train_buffer``'s
    exemplars to every lookup, "reset" starts from an empty buffer.
    """
    if policy not in ("keep", "reset"):
        raise ConfigError("policy must be 'keep' or 'reset'")
    counts = sorted(int(n) for n in unseen_counts if int(n) > 0)
    if not counts:
        return {}
    stream = stream or desk_stream()
    n_max = counts[-1]
    classes = fresh_classes(stream, n_max, seed, _ONESHOT)
    imgs, labels = _probe_renders(stream, classes, per_class, seed, threads)
    buf = train_buffer.copy() if policy == "keep" and train_buffer is not None else ExemplarBuffer()
    for c, shape in classes:
        buf.add(c, render(shape, Latents(c).canonical(), stream.resolution, stream.supersample))
    ids, d = distances(buf, normalize(imgs, regressor))
    fresh = np.array([c for c, _ in classes])
    base = ~np.isin(ids, fresh)
    col = {c: int(np.searchsorted(ids, c)) for c in fresh}
    table = {}
    for n in counts:
        correct = 0
        for k, c in enumerate(fresh):
            allowed = base.copy()
            allowed[[col[fresh[(k + j) % n_max]] for j in range(n)]] = True
            rows = labels == c
            masked = np.where(allowed[None, :], d[rows], np.inf)
            correct += int(np.sum(ids[np.argmin(masked, axis=1)] == c))
        table[n] = correct / len(labels)
    return table


def open_set_eval(regressor, n_seen: int = 50, n_unseen: int = 50, sigmas=DEFAULT_SIGMAS, seed: int = 0,
                  stream: StreamConfig | None = None, per_class: int = 10, threads: int = 1) -> PRCurve:
    """Precision-recall of the two-nearest novelty rule on seen versus unseen shapes."""
    if n_seen < 2:
        raise ConfigError("open-set evaluation needs at least two seen classes")
    if n_unseen < 1:
        raise ValueError("precision-recall needs both seen and novel ground truth")
    stream = stream or desk_stream()
    classes = fresh_classes(stream, n_seen + n_unseen, seed, _OPENSET)
    buf = ExemplarBuffer()
    for c, shape in classes[:n_seen]:
        buf.add(c, render(shape, Latents(c).canonical(), stream.resolution, stream.supersample))
    imgs, labels = _probe_renders(stream, classes, per_class, seed, threads)
    _, d1, d2 = two_nearest(buf, normalize(imgs, regressor))
    seen = np.isin(labels, buf.classes)
    return pr_curve_from_distances(d1, d2, seen, sigmas)


# ------------------------------------------------------------------ export


def export_plots(logs, path) -> list[Path]:
    """CSV of every series plus one self-contained SVG line chart.

    ``logs`` holds either :class:`MetricsLog` (cumulative accuracy over
    tasks) or :class:`PRCurve` (precision over recall) objects.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    logs = list(logs)
    if not logs:
        raise ValueError("nothing to plot")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write to {path.parent}: {exc}") from exc
    written = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, lg in enumerate(logs):
        if isinstance(lg, PRCurve):
            csv_path = lg.to_csv(path.with_suffix(".csv") if len(logs) == 1 else path.with_name(f"{path.stem}_pr{k}.csv"))
            ax.plot(lg.recall, lg.precision, label=f"AUC {lg.auc:.3f}")
            ax.set_xlabel("recall (seen)")
            ax.set_ylabel("precision (seen)")
        else:
            csv_path = lg.to_csv(path.with_suffix(".csv") if len(logs) == 1 else path.with_name(f"{path.stem}_{lg.method}.csv"))
            ax.plot(lg.column("task") + 1, lg.column("cumulative_accuracy"), label=lg.method)
            ax.set_xlabel("task")
            ax.set_ylabel("cumulative test accuracy")
        written.append(csv_path)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    with matplotlib.rc_context({"svg.hashsalt": "idsprites", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    written.append(path)
    return written
