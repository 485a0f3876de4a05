# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled raster kernels.

Same arithmetic, in the same order, as ``_kernels_py``. Built without
``-ffast-math`` and with ``-ffp-contract=off`` so no FMA contraction changes
the rounding.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef void _insertion_sort(double* xs, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double key
    for i in range(1, n):
        key = xs[i]
        j = i - 1
        while j >= 0 and xs[j] > key:
            xs[j + 1] = xs[j]
            j -= 1
        xs[j + 1] = key


def raster_fill(poly, dark_plane, double body, double dark, int width, int height, int ss):
    cdef double[:, ::1] p = np.ascontiguousarray(poly, dtype=np.float64)
    cdef double a = dark_plane[0]
    cdef double b = dark_plane[1]
    cdef double c = dark_plane[2]
    cdef Py_ssize_t n_edges = p.shape[0] - 1
    cdef int sw = width * ss
    cdef int sh = height * ss
    out_arr = np.zeros((height, width), dtype=np.float64)
    sub_arr = np.empty((sh, sw), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] sub = sub_arr
    cdef double* xs = <double*> malloc(max(n_edges, 1) * sizeof(double))
    if xs == NULL:
        raise MemoryError()
    cdef Py_ssize_t e, k, ptr, nx
    cdef int row, col, dy, dx, i, j
    cdef double y, xc, x0, y0, x1, y1
    cdef double norm = ss * ss
    try:
        with nogil:
            for row in range(sh):
                y = (row + 0.5) / ss
                nx = 0
                for e in range(n_edges):
                    y0 = p[e, 1]
                    y1 = p[e + 1, 1]
                    if (y0 <= y) != (y1 <= y):
                        x0 = p[e, 0]
                        x1 = p[e + 1, 0]
                        xs[nx] = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
                        nx += 1
                _insertion_sort(xs, nx)
                ptr = 0
                for col in range(sw):
                    xc = (col + 0.5) / ss
                    while ptr < nx and xs[ptr] < xc:
                        ptr += 1
                    if ptr & 1:
                        if a * xc + b * y + c > 0.0:
                            sub[row, col] = dark
                        else:
                            sub[row, col] = body
                    else:
                        sub[row, col] = 0.0
            for dy in range(ss):
                for dx in range(ss):
                    for j in range(height):
                        for i in range(width):
                            out[j, i] += sub[j * ss + dy, i * ss + dx]
            for j in range(height):
                for i in range(width):
                    out[j, i] = out[j, i] / norm
    finally:
        free(xs)
    return out_arr


cdef inline double _clamp(double x, double hi) noexcept nogil:
    if x < 0.0:
        return 0.0
    if x > hi:
        return hi
    return x


cdef void _warp_one(const double[:, ::1] img, const double[:, ::1] pix, double[:, ::1] out) noexcept nogil:
    cdef int height = img.shape[0]
    cdef int width = img.shape[1]
    cdef int i, j, x0, y0, x1, y1
    cdef double ci, cj, u, v, fx, fy, top, bot
    for j in range(height):
        cj = j - (height - 1) / 2.0
        for i in range(width):
            ci = i - (width - 1) / 2.0
            u = _clamp(pix[0, 0] * ci + pix[0, 1] * cj + pix[0, 2], width - 1.0)
            v = _clamp(pix[1, 0] * ci + pix[1, 1] * cj + pix[1, 2], height - 1.0)
            x0 = <int> floor(u)
            y0 = <int> floor(v)
            fx = u - x0
            fy = v - y0
            x1 = x0 + 1 if x0 + 1 < width else width - 1
            y1 = y0 + 1 if y0 + 1 < height else height - 1
            top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
            bot = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
            out[j, i] = (1.0 - fy) * top + fy * bot


def warp_pixel(img, pix):
    cdef const double[:, ::1] im = np.ascontiguousarray(img, dtype=np.float64)
    cdef const double[:, ::1] pm = np.ascontiguousarray(pix, dtype=np.float64)
    out_arr = np.empty((im.shape[0], im.shape[1]), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        _warp_one(im, pm, out)
    return out_arr


def warp_batch_pixel(imgs, pix):
    cdef const double[:, :, ::1] im = np.ascontiguousarray(imgs, dtype=np.float64)
    cdef const double[:, :, ::1] pm = np.ascontiguousarray(pix, dtype=np.float64)
    out_arr = np.empty((im.shape[0], im.shape[1], im.shape[2]), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t k
    with nogil:
        for k in range(im.shape[0]):
            _warp_one(im[k], pm[k], out[k])
    return out_arr


def warp_grad_pixel(img, pix, target):
    cdef const double[:, ::1] im = np.ascontiguousarray(img, dtype=np.float64)
    cdef const double[:, ::1] pm = np.ascontiguousarray(pix, dtype=np.float64)
    cdef const double[:, ::1] tg = np.ascontiguousarray(target, dtype=np.float64)
    cdef int height = im.shape[0]
    cdef int width = im.shape[1]
    cdef int i, j, x0, y0, x1, y1
    cdef double ci, cj, u, v, fx, fy, top, bot, r, g, gu, gv, dwdu, dwdv
    cdef double i00, i01, i10, i11
    cdef bint u_in, v_in
    cdef double n = width * height
    cdef double loss = 0.0
    cdef double g00 = 0.0, g01 = 0.0, g02 = 0.0, g10 = 0.0, g11 = 0.0, g12 = 0.0
    with nogil:
        for j in range(height):
            cj = j - (height - 1) / 2.0
            for i in range(width):
                ci = i - (width - 1) / 2.0
                u = pm[0, 0] * ci + pm[0, 1] * cj + pm[0, 2]
                v = pm[1, 0] * ci + pm[1, 1] * cj + pm[1, 2]
                u_in = u >= 0.0 and u <= width - 1
                v_in = v >= 0.0 and v <= height - 1
                u = _clamp(u, width - 1.0)
                v = _clamp(v, height - 1.0)
                x0 = <int> floor(u)
                y0 = <int> floor(v)
                fx = u - x0
                fy = v - y0
                x1 = x0 + 1 if x0 + 1 < width else width - 1
                y1 = y0 + 1 if y0 + 1 < height else height - 1
                i00 = im[y0, x0]
                i01 = im[y0, x1]
                i10 = im[y1, x0]
                i11 = im[y1, x1]
                top = (1.0 - fx) * i00 + fx * i01
                bot = (1.0 - fx) * i10 + fx * i11
                r = (1.0 - fy) * top + fy * bot - tg[j, i]
                loss += r * r
                g = 2.0 * r / n
                dwdu = (1.0 - fy) * (i01 - i00) + fy * (i11 - i10) if u_in else 0.0
                dwdv = bot - top if v_in else 0.0
                gu = g * dwdu
                gv = g * dwdv
                g00 += gu * ci
                g01 += gu * cj
                g02 += gu
                g10 += gv * ci
                g11 += gv * cj
                g12 += gv
    grad = np.array([[g00, g01, g02], [g10, g11, g12]])
    return loss / n, grad
