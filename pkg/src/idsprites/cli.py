"""Command line entry point: ``idsprites {gen,run,oneshot,openset,inspect,plot}``.

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .harness import (ExperimentConfig, MetricsLog, export_plots, one_shot_eval, open_set_eval, run_and_save,
                      run_with_model, write_config_echo)
from .memory import PRCurve
from .stream import KIND_PIXELS, KIND_RECIPE, StreamConfig, make_task, read_dataset, write_dataset

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("idsprites")


def _experiment_config(args) -> ExperimentConfig:
    d = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if "method" not in d and "stream" not in d:
            d = {"stream": d}
    if getattr(args, "method", None):
        d["method"] = args.method
    if getattr(args, "epochs", None) is not None:
        d["epochs_per_task"] = args.epochs
    if args.seed is not None:
        d["seed"] = args.seed
        stream = dict(d.get("stream", {}))
        stream["master_seed"] = args.seed
        d["stream"] = stream
    d["threads"] = args.threads
    if args.out:
        d["output_dir"] = args.out
    try:
        return ExperimentConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _out(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    cfg = _experiment_config(args)
    stream = cfg.stream
    out = _out(args)
    kind = KIND_PIXELS if args.pixels else KIND_RECIPE
    tasks = range(stream.num_tasks) if args.tasks is None else range(min(args.tasks, stream.num_tasks))
    for t in tasks:
        ds = make_task(stream, t)
        if kind == KIND_PIXELS:
            ds = ds.materialize(cfg.threads)
        write_dataset(ds, out / f"task_{t:04d}.idsp", kind)
    write_config_echo(stream.to_dict(), out / "config.json")
    print(f"wrote {len(tasks)} task files to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _experiment_config(args)
    out = _out(args)
    logs = run_and_save(cfg, out)
    acc = logs[0].column("cumulative_accuracy")
    print(f"{cfg.method}: final cumulative accuracy {acc[-1]:.4f} over {len(acc)} tasks -> {out}")
    return EXIT_OK


def _trained_regressor(cfg: ExperimentConfig):
    if cfg.method not in ("disentangled-analytic", "disentangled-learned"):
        raise ConfigError("one-shot and open-set protocols need a disentangled method")
    _, state = run_with_model(cfg)
    return (state.net if cfg.method == "disentangled-learned" else None), state.buffer


def cmd_oneshot(args) -> int:
    cfg = _experiment_config(args)
    out = _out(args)
    regressor, buffer = _trained_regressor(cfg)
    counts = [int(v) for v in args.counts.split(",") if v.strip()]
    table = {p: one_shot_eval(regressor, p, counts, cfg.seed, buffer, cfg.stream, threads=cfg.threads)
             for p in ("keep", "reset")}
    with open(out / "oneshot.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy"] + [str(n) for n in sorted(counts)])
        for p in ("keep", "reset"):
            w.writerow([p] + [repr(table[p][n]) for n in sorted(counts)])
    write_config_echo(cfg.to_dict(), out / "config.json")
    for p in ("keep", "reset"):
        print(p, " ".join(f"{n}:{a:.3f}" for n, a in sorted(table[p].items())))
    return EXIT_OK


def cmd_openset(args) -> int:
    cfg = _experiment_config(args)
    out = _out(args)
    regressor = _trained_regressor(cfg)[0] if args.train else None
    curve = open_set_eval(regressor, args.seen, args.unseen, cfg.sigmas, cfg.seed, cfg.stream, threads=cfg.threads)
    export_plots([curve], out / "openset.svg")
    (out / "openset_auc.json").write_text(json.dumps({"auc": curve.auc}, indent=2) + "\n")
    write_config_echo(cfg.to_dict(), out / "config.json")
    print(f"open-set AUC {curve.auc:.4f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from PIL import Image

    from .raster import to_uint8

    if args.dataset:
        ds = read_dataset(args.dataset)
    else:
        ds = make_task(_experiment_config(args).stream, args.task)
    n = min(args.limit, len(ds))
    idx = np.linspace(0, len(ds) - 1, n).round().astype(int) if n else np.zeros(0, dtype=int)
    imgs = ds.subset(idx).images(args.threads) if n else np.zeros((0, ds.resolution, ds.resolution))
    cols = max(1, math.ceil(math.sqrt(n)))
    rows = max(1, math.ceil(n / cols))
    r = ds.resolution
    sheet = np.zeros((rows * (r + 1) + 1, cols * (r + 1) + 1), dtype=np.float32)
    for k, img in enumerate(imgs):
        i, j = divmod(k, cols)
        sheet[1 + i * (r + 1):1 + i * (r + 1) + r, 1 + j * (r + 1):1 + j * (r + 1) + r] = img
    out = _out(args)
    path = out / f"task_{ds.task_index:04d}.png"
    Image.fromarray(to_uint8(sheet)).save(path)
    ex = ds.exemplars()
    strip = np.ones((r + 2, len(ex) * (r + 1) + 1), dtype=np.float32) * 0.25
    for k, img in enumerate(ex):
        strip[1:1 + r, 1 + k * (r + 1):1 + k * (r + 1) + r] = img
    Image.fromarray(to_uint8(strip)).save(out / f"task_{ds.task_index:04d}_exemplars.png")
    print(f"task {ds.task_index}: {len(ds)} samples, classes {ds.class_ids} -> {path}")
    return EXIT_OK


def cmd_plot(args) -> int:
    series = []
    for p in args.csv:
        with open(p, newline="") as fh:
            header = next(csv.reader(fh), [])
        if header[:3] == ["sigma", "precision", "recall"]:
            series.append(PRCurve.from_csv(p))
        elif "cumulative_accuracy" in header:
            series.append(MetricsLog.from_csv(p))
        else:
            raise FormatError(f"{p}: unrecognised CSV header {header}")
    out = Path(args.out or ".")
    target = out if out.suffix == ".svg" else out / "plot.svg"
    export_plots(series, target)
    print(f"wrote {target}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment (or stream) config")
    common.add_argument("--seed", type=lambda s: int(s, 0), help="master seed (u64)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="render threads; results do not depend on it")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="idsprites", description="Procedural sprite streams and continual-learning experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="write task dataset files")
    g.add_argument("--pixels", action="store_true", help="store rendered pixels instead of recipes")
    g.add_argument("--tasks", type=int, help="only the first N tasks")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", parents=[common], help="run a continual experiment")
    r.add_argument("--method", help="override the config's method")
    r.add_argument("--epochs", type=int, help="override epochs per task")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oneshot", parents=[common], help="one-shot generalization table")
    o.add_argument("--method", help="disentangled-analytic or disentangled-learned")
    o.add_argument("--epochs", type=int)
    o.add_argument("--counts", default="5,20,50", help="comma-separated unseen class counts")
    o.set_defaults(func=cmd_oneshot)

    s = sub.add_parser("openset", parents=[common], help="open-set precision-recall sweep")
    s.add_argument("--method", help="disentangled-analytic or disentangled-learned")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seen", type=int, default=50)
    s.add_argument("--unseen", type=int, default=50)
    s.add_argument("--train", action="store_true", help="train the configured regressor first (learned method)")
    s.set_defaults(func=cmd_openset)

    i = sub.add_parser("inspect", parents=[common], help="dump a task's images as a PNG grid")
    i.add_argument("--dataset", help="dataset file written by gen")
    i.add_argument("--task", type=int, default=0)
    i.add_argument("--limit", type=int, default=64)
    i.set_defaults(func=cmd_inspect)

    pl = sub.add_parser("plot", parents=[common], help="re-render metric or PR CSVs to SVG")
    pl.add_argument("csv", nargs="+")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except Exception as exc:  # noqa: BLE001
        cause = getattr(exc, "cause", None)
        if isinstance(cause, ConfigError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if isinstance(cause, FormatError):
            print(f"data format error: {exc}", file=sys.stderr)
            return EXIT_FORMAT
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
