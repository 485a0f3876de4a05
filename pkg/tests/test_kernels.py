import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from idsprites import _kernels_py, kernels
from idsprites.raster import Latents, latents_to_matrix, pixel_affine, placed_outline, render
from idsprites.shapegen import sample_shape

compiled = pytest.importorskip("idsprites._kernels")


def _plane(z, w, h):
    s, c = np.sin(z.orientation), np.cos(z.orientation)
    tx, ty = 2 * z.pos_x - 1, 2 * z.pos_y - 1
    return np.array([-2 * s / w, 2 * c / h, s * (1 + tx) - c * (1 + ty)])


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("res,ss", [(16, 1), (33, 3), (64, 2)])
def test_fill_bit_identical(seed, res, ss):
    z = Latents(0, 0.8, 0.7, 0.37 * seed, 0.45 + 0.01 * seed, 0.55 - 0.01 * seed)
    pts = placed_outline(sample_shape(seed), z)
    pix = (pts + 1.0) * (0.5 * res)
    a = compiled.raster_fill(pix, _plane(z, res, res), 0.8, 0.32, res, res, ss)
    b = _kernels_py.raster_fill(pix, _plane(z, res, res), 0.8, 0.32, res, res, ss)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("seed", range(5))
def test_warp_bit_identical(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((24, 31))
    m = latents_to_matrix(Latents(0, 1.0, 0.6 + 0.1 * seed, rng.uniform(0, 6.2), rng.uniform(0.3, 0.7), 0.5))
    pix = pixel_affine(m, 31, 24)
    assert np.array_equal(compiled.warp_pixel(img, pix), _kernels_py.warp_pixel(img, pix))
    batch = np.stack([img, img[::-1].copy()])
    pixb = np.stack([pix, pix])
    assert np.array_equal(compiled.warp_batch_pixel(batch, pixb), _kernels_py.warp_batch_pixel(batch, pixb))


def test_warp_grad_agrees():
    rng = np.random.default_rng(0)
    img, target = rng.random((16, 16)), rng.random((16, 16))
    pix = pixel_affine(latents_to_matrix(Latents(0, 1.0, 0.8, 0.4, 0.52, 0.47)), 16, 16)
    la, ga = compiled.warp_grad_pixel(img, pix, target)
    lb, gb = _kernels_py.warp_grad_pixel(img, pix, target)
    assert la == pytest.approx(lb, rel=1e-12)
    assert np.allclose(ga, gb, rtol=1e-10, atol=1e-14)


def test_backend_selected():
    assert kernels.BACKEND == "compiled"


def test_pure_python_switch():
    code = "from idsprites import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, IDSPRITES_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_render_same_under_both_backends(monkeypatch):
    from idsprites import raster

    shape, z = sample_shape(5), Latents(0, 1.0, 0.75, 1.1, 0.5, 0.45)
    a = render(shape, z, 64, 2)
    monkeypatch.setattr(raster.kernels, "raster_fill", _kernels_py.raster_fill)
    assert np.array_equal(render(shape, z, 64, 2), a)
