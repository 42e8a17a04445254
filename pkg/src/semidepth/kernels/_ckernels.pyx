# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; same contracts as ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY, isfinite

cnp.import_array()


def bilinear_sample(img, u, v, double eps=1e-9):
    cdef const double[:, :, ::1] im = np.ascontiguousarray(img, dtype=np.float64)
    cdef const double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t h = im.shape[0], w = im.shape[1], c = im.shape[2]
    cdef Py_ssize_t n = uu.shape[0]
    vals_a = np.zeros((n, c))
    du_a = np.zeros((n, c))
    dv_a = np.zeros((n, c))
    inside_a = np.zeros(n, dtype=np.bool_)
    cdef double[:, ::1] vals = vals_a
    cdef double[:, ::1] du = du_a
    cdef double[:, ::1] dv = dv_a
    cdef cnp.npy_bool[::1] inside = inside_a
    cdef Py_ssize_t i, k, u0, v0, u1, v1
    cdef Py_ssize_t umax = w - 2 if w >= 2 else 0
    cdef Py_ssize_t vmax = h - 2 if h >= 2 else 0
    cdef double x, y, fu, fv, a00, a01, a10, a11
    for i in range(n):
        x = uu[i]
        y = vv[i]
        if not (x >= -eps and x <= w - 1 + eps and y >= -eps and y <= h - 1 + eps):
            continue
        inside[i] = 1
        if x < 0:
            x = 0
        elif x > w - 1:
            x = w - 1
        if y < 0:
            y = 0
        elif y > h - 1:
            y = h - 1
        u0 = <Py_ssize_t>floor(x)
        v0 = <Py_ssize_t>floor(y)
        if u0 > umax:
            u0 = umax
        if v0 > vmax:
            v0 = vmax
        u1 = u0 + 1 if u0 + 1 < w else w - 1
        v1 = v0 + 1 if v0 + 1 < h else h - 1
        fu = x - u0
        fv = y - v0
        for k in range(c):
            a00 = im[v0, u0, k]
            a01 = im[v0, u1, k]
            a10 = im[v1, u0, k]
            a11 = im[v1, u1, k]
            vals[i, k] = (1 - fv) * ((1 - fu) * a00 + fu * a01) + fv * ((1 - fu) * a10 + fu * a11)
            du[i, k] = (1 - fv) * (a01 - a00) + fv * (a11 - a10)
            dv[i, k] = (1 - fu) * (a10 - a00) + fu * (a11 - a01)
    return vals_a, du_a, dv_a, inside_a


def zbuffer(rows, cols, depth, Py_ssize_t height, Py_ssize_t width):
    cdef const cnp.int64_t[::1] rr = np.ascontiguousarray(rows, dtype=np.int64)
    cdef const cnp.int64_t[::1] cc = np.ascontiguousarray(cols, dtype=np.int64)
    cdef const double[::1] dd = np.ascontiguousarray(depth, dtype=np.float64)
    out_a = np.full((height, width), np.inf)
    cdef double[:, ::1] out = out_a
    cdef Py_ssize_t i
    for i in range(dd.shape[0]):
        if dd[i] < out[rr[i], cc[i]]:
            out[rr[i], cc[i]] = dd[i]
    return out_a


def box_sum(a, Py_ssize_t radius):
    arr = np.asarray(a, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    cdef const double[:, :, ::1] src = np.ascontiguousarray(arr)
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], c = src.shape[2]
    tmp_a = np.zeros((h, w, c))
    out_a = np.zeros((h, w, c))
    cdef double[:, :, ::1] tmp = tmp_a
    cdef double[:, :, ::1] out = out_a
    cdef Py_ssize_t r, col, k, j, lo, hi
    cdef double acc
    # horizontal pass
    for r in range(h):
        for k in range(c):
            for col in range(w):
                lo = col - radius if col >= radius else 0
                hi = col + radius if col + radius < w else w - 1
                acc = 0
                for j in range(lo, hi + 1):
                    acc += src[r, j, k]
                tmp[r, col, k] = acc
    # vertical pass
    for r in range(h):
        lo = r - radius if r >= radius else 0
        hi = r + radius if r + radius < h else h - 1
        for col in range(w):
            for k in range(c):
                acc = 0
                for j in range(lo, hi + 1):
                    acc += tmp[j, col, k]
                out[r, col, k] = acc
    return out_a[:, :, 0] if squeeze else out_a
