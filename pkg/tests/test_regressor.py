import math

import numpy as np
import pytest

from fd_util import mlp_grad_probe
from idsprites.errors import AmbiguousOrientationError, InsufficientMassError
from idsprites.nets import AdamState
from idsprites.raster import Latents, latents_to_matrix, render
from idsprites.regressor import AnalyticEstimator, TinyNet, analytic_estimate, forward, half_areas, loss_and_grad, train_on_task
from idsprites.shapegen import sample_shape
from idsprites.stream import StreamConfig, make_task, task_split


def _angle_err(a, b):
    d = (a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


# ------------------------------------------------------------------ analytic


def test_exemplar_gives_identity():
    for seed in range(10):
        shape = sample_shape(seed)
        _, m = analytic_estimate(render(shape, Latents()), shape)
        assert np.abs(m - latents_to_matrix(Latents())).max() < 0.02


def test_pure_translation():
    shape = sample_shape(3)
    z = Latents(0, 1.0, 1.0 * 0.7, 0.0, 0.62, 0.41)
    est, _ = analytic_estimate(render(shape, z), shape)
    assert abs(est.pos_x - z.pos_x) * 64 <= 1 and abs(est.pos_y - z.pos_y) * 64 <= 1
    assert math.degrees(_angle_err(est.orientation, 0.0)) <= 2


def test_quarter_turn():
    for seed in range(5):
        shape = sample_shape(seed)
        est, _ = analytic_estimate(render(shape, Latents(orientation=math.pi / 2, scale=0.8)), shape)
        assert 85 <= math.degrees(est.orientation) <= 95


def test_half_areas_sum():
    shape = sample_shape(8)
    bright, dark = half_areas(shape)
    assert bright + dark == pytest.approx(shape.area, rel=1e-9)


def test_reference_free_scale_is_close():
    shape = sample_shape(12)
    est, _ = analytic_estimate(render(shape, Latents(scale=0.7, orientation=1.0)))
    assert est.scale == pytest.approx(0.7, rel=0.15)


def test_estimator_errors():
    with pytest.raises(InsufficientMassError):
        analytic_estimate(np.zeros((64, 64)))
    flat = np.zeros((64, 64))
    flat[20:40, 20:40] = 1.0
    with pytest.raises(AmbiguousOrientationError):
        analytic_estimate(flat)
    with pytest.raises(ValueError):
        AnalyticEstimator(dark_ratio=1.0)


@pytest.mark.slow
def test_exactness_ladder():
    rng = np.random.default_rng(5)
    est = AnalyticEstimator()
    worst = np.zeros(3)
    n = 0
    while n < 500:
        shape = sample_shape(int(rng.integers(2**63)))
        z = Latents(0, 1.0, rng.uniform(0.5, 0.9), rng.uniform(0, 2 * math.pi), rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65))
        try:
            img = render(shape, z)
        except ValueError:
            continue
        got, _ = est.estimate(img, shape)
        n += 1
        t = 64 * max(abs(got.pos_x - z.pos_x), abs(got.pos_y - z.pos_y))
        worst = np.maximum(worst, [t, abs(got.scale / z.scale - 1), math.degrees(_angle_err(got.orientation, z.orientation))])
    assert worst[0] <= 1 and worst[1] <= 0.03 and worst[2] <= 5


# ------------------------------------------------------------------- learned


def test_zero_weights_give_bias():
    net = TinyNet((16, 8, 6), seed=0)
    for k, p in enumerate(net.params):
        p[...] = 0.0 if k % 2 == 0 else np.arange(p.size) * (k == 3)
    out = forward(net, np.random.default_rng(0).random((3, 16)))
    assert np.array_equal(out.reshape(3, 6), np.tile(np.arange(6.0), (3, 1)))


def test_identical_rows():
    net = TinyNet(seed=1)
    img = render(sample_shape(1), Latents(scale=0.8))
    out = forward(net, np.stack([img, img, img]))
    assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])


def test_lipschitz_probe():
    net = TinyNet(seed=2)
    x = np.random.default_rng(1).random((1, 256))
    # operator-norm bound of the stack: product of spectral norms
    lip = np.prod([np.linalg.norm(w, 2) for w in net.params[0::2]])
    for k in range(20):
        d = np.zeros_like(x)
        d[0, k * 7] = 0.05
        assert np.linalg.norm(net.forward(x + d) - net.forward(x)) <= lip * 0.05 + 1e-12


def test_loss_zero_and_quadratic():
    net = TinyNet((16, 8, 6), seed=0)
    x = np.random.default_rng(0).random((4, 16))
    out = net.forward(x)
    loss, grads = loss_and_grad(net, x, out)
    assert loss == 0.0 and all(not g.any() for g in grads)
    l1, _ = loss_and_grad(net, x, out + 0.1)
    l2, _ = loss_and_grad(net, x, out + 0.2)
    assert l2 == pytest.approx(4 * l1)


def test_tinynet_gradient():
    rng = np.random.default_rng(3)
    net = TinyNet(seed=3)
    x = rng.random((10, 256))
    y = rng.normal(0, 0.5, (10, 6))
    assert mlp_grad_probe(net, x, y, rng, 100).max() < 1e-4


def test_tinynet_requires_six_outputs():
    with pytest.raises(ValueError):
        TinyNet((16, 4, 5))


@pytest.fixture(scope="module")
def desk_task():
    cfg = StreamConfig(num_tasks=1, shapes_per_task=5)
    tr, _, te = task_split(cfg, make_task(cfg, 0))
    return tr.images(), tr.matrices(), te.images(), te.matrices()


def test_train_epochs_zero(desk_task):
    net = TinyNet(seed=0)
    before = [p.copy() for p in net.params]
    assert train_on_task(net, AdamState(net.params), desk_task[0], desk_task[1], epochs=0) == []
    assert all(np.array_equal(p, q) for p, q in zip(net.params, before))


def test_training_reduces_mse(desk_task):
    net = TinyNet(seed=0)
    log = train_on_task(net, AdamState(net.params), desk_task[0], desk_task[1], epochs=3, seed=1)
    assert len(log) == 3 and log[-1] < log[0]


def test_offline_not_worse_than_online(desk_task):
    x, y = desk_task[0], desk_task[1]
    on = TinyNet(seed=4)
    off = TinyNet(seed=4)
    l_on = train_on_task(on, AdamState(on.params), x, y, epochs=1, seed=2)
    l_off = train_on_task(off, AdamState(off.params), x, y, epochs=5, seed=2)
    assert l_off[-1] <= l_on[-1]


def test_training_deterministic(desk_task):
    nets = [TinyNet(seed=6) for _ in range(2)]
    for n in nets:
        train_on_task(n, AdamState(n.params), desk_task[0][:64], desk_task[1][:64], epochs=2, seed=7)
    assert np.array_equal(nets[0].flat(), nets[1].flat())


@pytest.mark.slow
def test_equivariance_transfer():
    cfg = StreamConfig(num_tasks=10, shapes_per_task=5)
    net = TinyNet(seed=0)
    state = AdamState(net.params)
    seen_x, seen_y = [], []
    for t in range(8):
        tr, _, te = task_split(cfg, make_task(cfg, t))
        train_on_task(net, state, tr.images(), tr.matrices(), epochs=5, seed=t)
        seen_x.append(te.images())
        seen_y.append(te.matrices())
    held = [make_task(cfg, t) for t in (8, 9)]
    hx = np.concatenate([d.images() for d in held])
    hy = np.concatenate([d.matrices() for d in held])
    mse_seen = np.mean((forward(net, np.concatenate(seen_x)) - np.concatenate(seen_y)) ** 2)
    mse_held = np.mean((forward(net, hx) - hy) ** 2)
    assert mse_held <= 2 * mse_seen
