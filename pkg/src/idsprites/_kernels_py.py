"""Pure numpy implementations of the raster kernels.

These mirror ``_kernels.pyx`` operation for operation, so rasterization and
warping agree bit-for-bit with the compiled build. Only the reductions inside
:func:`warp_grad_pixel` may differ in the last ulp (numpy sums pairwise).
"""

import numpy as np

_ROW_CHUNK = 32


def raster_fill(poly, dark_plane, body, dark, width, height, ss):
    """Even-odd fill of ``poly`` (pixel units) with box-filtered supersampling.

    ``dark_plane = (a, b, c)`` marks a sub-sample at pixel position ``(x, y)``
    as dark when ``a*x + b*y + c > 0``.
    """
    poly = np.ascontiguousarray(poly, dtype=np.float64)
    x0, y0 = poly[:-1, 0], poly[:-1, 1]
    x1, y1 = poly[1:, 0], poly[1:, 1]
    a, b, c = dark_plane
    sw, sh = width * ss, height * ss
    xc = (np.arange(sw) + 0.5) / ss
    yc = (np.arange(sh) + 0.5) / ss
    sub = np.empty((sh, sw))
    with np.errstate(divide="ignore", invalid="ignore"):
        for r0 in range(0, sh, _ROW_CHUNK):
            y = yc[r0:r0 + _ROW_CHUNK, None]
            hit = (y0 <= y) != (y1 <= y)
            xs = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            xs = np.where(hit, xs, np.inf)
            count = (xs[:, None, :] < xc[None, :, None]).sum(axis=2)
            inside = (count & 1).astype(bool)
            is_dark = (a * xc[None, :] + b * y + c) > 0.0
            sub[r0:r0 + _ROW_CHUNK] = np.where(inside, np.where(is_dark, dark, body), 0.0)
    acc = np.zeros((height, width))
    for dy in range(ss):
        for dx in range(ss):
            acc += sub[dy::ss, dx::ss]
    return acc / (ss * ss)


def _sample_coords(pix, width, height):
    ci = np.arange(width) - (width - 1) / 2.0
    cj = np.arange(height) - (height - 1) / 2.0
    u = pix[0, 0] * ci[None, :] + pix[0, 1] * cj[:, None] + pix[0, 2]
    v = pix[1, 0] * ci[None, :] + pix[1, 1] * cj[:, None] + pix[1, 2]
    return ci, cj, u, v


def _bilinear_setup(u, v, width, height):
    u_in = (u >= 0.0) & (u <= width - 1)
    v_in = (v >= 0.0) & (v <= height - 1)
    u = np.minimum(np.maximum(u, 0.0), width - 1.0)
    v = np.minimum(np.maximum(v, 0.0), height - 1.0)
    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    fx = u - x0
    fy = v - y0
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    return u_in, v_in, x0, x1, y0, y1, fx, fy


def warp_pixel(img, pix):
    """Bilinear border-padded resampling of one image with a pixel-space affine."""
    img = np.asarray(img, dtype=np.float64)
    height, width = img.shape
    _, _, u, v = _sample_coords(np.asarray(pix, dtype=np.float64), width, height)
    _, _, x0, x1, y0, y1, fx, fy = _bilinear_setup(u, v, width, height)
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bot = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1.0 - fy) * top + fy * bot


def warp_batch_pixel(imgs, pix):
    imgs = np.asarray(imgs, dtype=np.float64)
    out = np.empty(imgs.shape)
    for k in range(len(imgs)):
        out[k] = warp_pixel(imgs[k], pix[k])
    return out


def warp_grad_pixel(img, pix, target):
    """MSE between warp and ``target`` and its gradient w.r.t. the pixel affine."""
    img = np.asarray(img, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    height, width = img.shape
    ci, cj, u, v = _sample_coords(np.asarray(pix, dtype=np.float64), width, height)
    u_in, v_in, x0, x1, y0, y1, fx, fy = _bilinear_setup(u, v, width, height)
    i00, i01 = img[y0, x0], img[y0, x1]
    i10, i11 = img[y1, x0], img[y1, x1]
    top = (1.0 - fx) * i00 + fx * i01
    bot = (1.0 - fx) * i10 + fx * i11
    out = (1.0 - fy) * top + fy * bot
    r = out - target
    n = width * height
    loss = float((r * r).sum() / n)
    g = 2.0 * r / n
    dwdu = np.where(u_in, (1.0 - fy) * (i01 - i00) + fy * (i11 - i10), 0.0)
    dwdv = np.where(v_in, bot - top, 0.0)
    gu = g * dwdu
    gv = g * dwdv
    ci2 = np.broadcast_to(ci[None, :], gu.shape)
    cj2 = np.broadcast_to(cj[:, None], gu.shape)
    grad = np.array([
        [(gu * ci2).sum(), (gu * cj2).sum(), gu.sum()],
        [(gv * ci2).sum(), (gv * cj2).sum(), gv.sum()],
    ])
    return loss, grad
