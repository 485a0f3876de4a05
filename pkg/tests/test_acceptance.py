"""Acceptance criteria 1-10, one test each.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured values
before asserting. Run with ``pytest tests/test_acceptance.py -s`` (or ``-v``;
the lines are printed outside output capture).
"""

import json
import math
import time

import numpy as np
import pytest

from fd_util import mlp_grad_probe, warp_grad_errors
from idsprites.errors import BadMagicError, ChecksumError
from idsprites.harness import ExperimentConfig, MetricsLog, one_shot_eval, open_set_eval, run_with_model, run_experiment
from idsprites.nets import AdamState, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from idsprites.raster import Latents, fits_frame, latents_to_matrix, render, warp
from idsprites.regressor import TinyNet, train_on_task
from idsprites.shapegen import sample_shape
from idsprites.stream import (KIND_PIXELS, KIND_RECIPE, FactorGrid, StreamConfig, decode_dataset, encode_dataset,
                              make_task, read_dataset, task_split, write_dataset)

DESK = StreamConfig(num_tasks=20, shapes_per_task=5)
REPLAY_CAPACITY = 10 * 100  # 10 samples per class over the 100 classes of the desk stream


@pytest.fixture
def report(capsys):
    def _report(n, name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n:>2} {name}: {detail}", flush=True)
        assert ok, detail
    return _report


_runs = {}


def _desk_run(method, epochs=5, **kw):
    key = (method, epochs)
    if key not in _runs:
        t0 = time.perf_counter()
        lg = run_experiment(ExperimentConfig(stream=DESK, method=method, epochs_per_task=epochs, seed=0, **kw))
        _runs[key] = (lg, time.perf_counter() - t0)
    return _runs[key]


def test_01_generator_arithmetic(report):
    t0 = time.perf_counter()
    cfg = StreamConfig(num_tasks=1, shapes_per_task=10, grid=FactorGrid(8, 8, 8, 8), split_ratios=(0.98, 0.01, 0.01))
    n = len(make_task(cfg, 0))
    dt = time.perf_counter() - t0
    report(1, "generator arithmetic", n == 40_960 and dt < 1.0, f"{n} samples (want 40960) in {dt:.3f} s (< 1 s)")


def test_02_geometry_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    mses = []
    while len(mses) < 100:
        shape = sample_shape(int(rng.integers(2**63)))
        z = Latents(0, 1.0, rng.uniform(0.5, 0.9), rng.uniform(0, 2 * math.pi), rng.uniform(0.35, 0.65),
                    rng.uniform(0.35, 0.65))
        if not fits_frame(shape, z):
            continue
        back = warp(render(shape, z, 64, 2), latents_to_matrix(z))
        mses.append(np.mean((back - render(shape, Latents(), 64, 2)) ** 2))
    dt = time.perf_counter() - t0
    m = float(np.mean(mses))
    report(2, "geometry oracle", m < 0.02 and dt < 30, f"mean MSE {m:.5f} (< 0.02), max {max(mses):.5f}, {dt:.1f} s (< 30 s)")


def test_03_gradient_suites(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    net = TinyNet(seed=3)
    x = rng.random((10, net.sizes[0]))
    y = rng.normal(0, 0.5, (10, 6))
    e_net = mlp_grad_probe(net, x, y, rng, 100, h=1e-5).max()
    e_warp = warp_grad_errors(rng, 100).max()
    dt = time.perf_counter() - t0
    ok = e_net < 1e-4 and e_warp < 1e-3 and dt < 60
    report(3, "gradient suites", ok, f"TinyNet max rel err {e_net:.2e} (< 1e-4), warp_grad {e_warp:.2e} (< 1e-3), {dt:.1f} s (< 60 s)")


def test_04_analytic_no_forgetting(report):
    lg, dt = _desk_run("disentangled-analytic")
    acc = lg.column("cumulative_accuracy")
    report(4, "analytic pipeline, no forgetting", acc.min() >= 0.95 and dt < 300,
           f"min cumulative accuracy {acc.min():.4f} over {len(acc)} tasks (>= 0.95), final {acc[-1]:.4f}, {dt:.0f} s (< 300 s)")


def test_05_forgetting_ordering(report):
    learned, t1 = _desk_run("disentangled-learned")
    contrast, t2 = _desk_run("contrastive")
    naive, t3 = _desk_run("finetune")
    replay, t4 = _desk_run("replay-buffer-only", replay_capacity=REPLAY_CAPACITY)
    fl, fc, fn = (lg.column("cumulative_accuracy")[-1] for lg in (learned, contrast, naive))
    r = replay.column("cumulative_accuracy")
    peak = r[:-1].max()
    total = t1 + t2 + t3 + t4
    ok = fl > fc > fn and fn < 0.3 and peak - r[-1] >= 0.05 and total < 1800
    report(5, "forgetting ordering", ok,
           f"final learned {fl:.3f} > contrastive {fc:.3f} > finetune {fn:.3f} (finetune < 0.3); "
           f"replay-buffer-only peak {peak:.3f} at task {int(np.argmax(r[:-1])) + 1} -> {r[-1]:.3f} "
           f"(drop {peak - r[-1]:.3f} >= 0.05); {total:.0f} s (< 1800 s)")


def test_06_one_shot_orderings(report):
    t0 = time.perf_counter()
    _, state = run_with_model(ExperimentConfig(stream=DESK, method="disentangled-analytic"))
    counts = (5, 20, 50)
    keep = one_shot_eval(None, "keep", counts, 0, state.buffer, DESK)
    reset = one_shot_eval(None, "reset", counts, 0, state.buffer, DESK)
    dt = time.perf_counter() - t0
    col = all(reset[n] >= keep[n] for n in counts)
    rows = all(row[a] >= row[b] for row in (keep, reset) for a, b in zip(counts, counts[1:]))
    low = min(min(keep.values()), min(reset.values()))
    ok = col and rows and low >= 0.9 and dt < 300
    fmt = lambda row: " ".join(f"{row[n]:.3f}" for n in counts)  # noqa: E731
    report(6, "one-shot orderings", ok,
           f"keep [{fmt(keep)}], reset [{fmt(reset)}] for {counts} unseen classes; reset>=keep {col}, "
           f"non-increasing {rows}, min {low:.3f} (>= 0.9); {dt:.0f} s (< 300 s)")


def test_07_open_set(report):
    t0 = time.perf_counter()
    curve = open_set_eval(None, 50, 50, np.linspace(0.0, 1.0, 101), seed=0, stream=DESK)
    dt = time.perf_counter() - t0
    # positive class = seen: all-novel (sigma 0) -> precision 1, all-seen (sigma 1) -> recall 1
    ends = curve.precision[0] == 1.0 and curve.recall[0] == 0.0 and curve.recall[-1] == 1.0
    ok = curve.auc > 0.8 and ends and dt < 300
    report(7, "open-set PR", ok,
           f"AUC {curve.auc:.4f} (> 0.8; reference 0.92) over {len(curve.sigmas)} sigmas; sigma=0 -> P {curve.precision[0]:.2f} "
           f"R {curve.recall[0]:.2f}, sigma=1 -> P {curve.precision[-1]:.3f} R {curve.recall[-1]:.2f}; {dt:.0f} s (< 300 s)")


def test_08_online_vs_offline(report):
    offline, t1 = _desk_run("disentangled-learned", 5)
    online, t2 = _desk_run("disentangled-learned", 1)
    off, on = offline.column("cumulative_accuracy"), online.column("cumulative_accuracy")
    ok = off[-1] >= on[-1] and on[19] > on[4] and t1 + t2 < 1200
    report(8, "online vs offline", ok,
           f"final offline(5 epochs) {off[-1]:.3f} >= online(1 epoch) {on[-1]:.3f}; online task 5 {on[4]:.3f} -> "
           f"task 20 {on[19]:.3f}; {t1 + t2:.0f} s (< 1200 s)")


def test_09_determinism(report, tmp_path):
    from idsprites.cli import main

    stream = StreamConfig(num_tasks=4, shapes_per_task=5)
    cfg_path = tmp_path / "cfg.json"
    same = []
    for method in ("disentangled-learned", "contrastive", "replay-mixed"):
        cfg = ExperimentConfig(stream=stream, method=method, epochs_per_task=2, replay_capacity=100)
        cfg_path.write_text(json.dumps(cfg.to_dict()))
        blobs = []
        for threads in (1, 4, 1):
            out = tmp_path / f"{method}_{threads}_{len(blobs)}"
            assert main(["run", "--config", str(cfg_path), "--out", str(out), "--threads", str(threads)]) == 0
            blobs.append((out / f"{method}.csv").read_bytes())
        same.append(blobs[0] == blobs[1] == blobs[2])
    pr = [open_set_eval(None, 10, 10, seed=1, stream=stream, threads=t) for t in (1, 3)]
    paths = [pr[k].to_csv(tmp_path / f"pr{k}.csv") for k in range(2)]
    same.append(paths[0].read_bytes() == paths[1].read_bytes())
    report(9, "determinism", all(same), f"byte-identical CSVs across reruns and thread counts: {same}")


def test_10_format_round_trips(report, tmp_path):
    t0 = time.perf_counter()
    cfg = StreamConfig(num_tasks=2, shapes_per_task=5)
    ds = make_task(cfg, 1)
    checks = {}
    checks["recipe file"] = read_dataset(write_dataset(ds, tmp_path / "r.idsp", KIND_RECIPE)) == ds
    eager = ds.materialize()
    checks["pixel file"] = read_dataset(write_dataset(eager, tmp_path / "p.idsp", KIND_PIXELS)) == eager
    net = TinyNet(seed=1)
    tr, _, _ = task_split(cfg, ds)
    train_on_task(net, AdamState(net.params), tr.images()[:64], tr.matrices()[:64], epochs=1)
    back = load_checkpoint(save_checkpoint(net, tmp_path / "n.ckpt"))
    checks["checkpoint"] = back.sizes == net.sizes and np.array_equal(back.flat(), net.flat())
    lg = MetricsLog("m")
    for t in range(5):
        lg.append(t, 1 / 3 + t * 0.1, 2 / 7, t, 17 * t)
    checks["metrics csv"] = MetricsLog.from_csv(lg.to_csv(tmp_path / "m.csv"), "m") == lg

    def rejects(fn, buf, err):
        try:
            fn(buf)
        except err:
            return True
        return False

    blob = encode_dataset(ds)
    flipped = bytearray(blob)
    flipped[-5] ^= 0x01
    ck = encode_checkpoint(net)
    ck_flip = bytearray(ck)
    ck_flip[-5] ^= 0x01
    checks["dataset bad magic"] = rejects(decode_dataset, b"JUNK" + blob[4:], BadMagicError)
    checks["dataset bad crc"] = rejects(decode_dataset, bytes(flipped), ChecksumError)
    checks["checkpoint bad magic"] = rejects(decode_checkpoint, b"JUNK" + ck[4:], BadMagicError)
    checks["checkpoint bad crc"] = rejects(decode_checkpoint, bytes(ck_flip), ChecksumError)
    dt = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    report(10, "format round-trips", not failed and dt < 10,
           f"{len(checks) - len(failed)}/{len(checks)} checks ok{' (failed: ' + ', '.join(failed) + ')' if failed else ''}, {dt:.1f} s (< 10 s)")
