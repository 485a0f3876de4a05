"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N time per call for each kernel and backend, the speedup,
and whether both backends return bit-identical results.
"""

import argparse
import importlib
import timeit

import numpy as np

from idsprites import _kernels_py
from idsprites.raster import Latents, latents_to_matrix, pixel_affine, placed_outline, render
from idsprites.shapegen import sample_shape


def _cases(res: int, ss: int):
    shape = sample_shape(7)
    z = Latents(0, 1.0, 0.8, 0.6, 0.47, 0.52)
    poly = placed_outline(shape, z)
    s, c = np.sin(z.orientation), np.cos(z.orientation)
    tx, ty = 2 * z.pos_x - 1, 2 * z.pos_y - 1
    plane = np.array([-2 * s / res, 2 * c / res, s * (1 + tx) - c * (1 + ty)])
    img = render(shape, z, res, ss)
    pix = pixel_affine(latents_to_matrix(z), res, res)
    batch = np.repeat(img[None], 64, axis=0)
    pixb = np.repeat(pix[None], 64, axis=0)
    target = render(shape, Latents(0), res, ss)
    return {
        "raster_fill": lambda k: k.raster_fill(poly, plane, 1.0, 0.4, res, res, ss),
        "warp_pixel": lambda k: k.warp_pixel(img, pix),
        "warp_batch_pixel[64]": lambda k: k.warp_batch_pixel(batch, pixb),
        "warp_grad_pixel": lambda k: k.warp_grad_pixel(img, pix, target),
    }


def _agreement(a, b) -> str:
    """"yes" when bit-identical, otherwise the largest relative difference."""
    a = np.concatenate([np.ravel(x) for x in (a if isinstance(a, tuple) else (a,))]).astype(np.float64)
    b = np.concatenate([np.ravel(x) for x in (b if isinstance(b, tuple) else (b,))]).astype(np.float64)
    if np.array_equal(a, b):
        return "yes"
    return f"rel {np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300):.1e}"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--resolution", type=int, default=64)
    ap.add_argument("--supersample", type=int, default=2)
    args = ap.parse_args()
    try:
        compiled = importlib.import_module("idsprites._kernels")
    except ImportError:
        compiled = None
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':<22}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}  bit-identical")
    for name, fn in _cases(args.resolution, args.supersample).items():
        number = 20
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=number, repeat=args.repeat)) / number * 1e3
        if compiled is None:
            print(f"{name:<22}{t_py:>10.3f}")
            continue
        t_c = min(timeit.repeat(lambda: fn(compiled), number=number, repeat=args.repeat)) / number * 1e3
        same = _agreement(fn(_kernels_py), fn(compiled))
        print(f"{name:<22}{t_py:>10.3f}{t_c:>13.3f}{t_py / t_c:>8.1f}x  {same}")


if __name__ == "__main__":
    main()
