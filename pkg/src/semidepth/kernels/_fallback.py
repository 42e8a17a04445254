"""Pure numpy implementations of the hot kernels."""

import numpy as np


def bilinear_sample(img, u, v, eps=1e-9):
    """Sample ``img`` (H, W, C) at continuous (u, v) = (col, row).

    Returns ``(values, d_du, d_dv, inside)``. A sample is inside when its
    2x2 footprint lies within the image (up to ``eps`` of slack); outside
    samples get zero values and zero derivatives.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    h, w, c = img.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n = u.shape[0]
    with np.errstate(invalid="ignore"):
        inside = (u >= -eps) & (u <= w - 1 + eps) & (v >= -eps) & (v <= h - 1 + eps)
    vals = np.zeros((n, c))
    du = np.zeros((n, c))
    dv = np.zeros((n, c))
    if not inside.any():
        return vals, du, dv, inside
    uc = np.clip(u[inside], 0.0, w - 1)
    vc = np.clip(v[inside], 0.0, h - 1)
    u0 = np.minimum(np.floor(uc).astype(np.int64), max(w - 2, 0))
    v0 = np.minimum(np.floor(vc).astype(np.int64), max(h - 2, 0))
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (uc - u0)[:, None]
    fv = (vc - v0)[:, None]
    i00 = img[v0, u0]
    i01 = img[v0, u1]
    i10 = img[v1, u0]
    i11 = img[v1, u1]
    vals[inside] = (1 - fv) * ((1 - fu) * i00 + fu * i01) + fv * ((1 - fu) * i10 + fu * i11)
    du[inside] = (1 - fv) * (i01 - i00) + fv * (i11 - i10)
    dv[inside] = (1 - fu) * (i10 - i00) + fu * (i11 - i01)
    return vals, du, dv, inside


def zbuffer(rows, cols, depth, height, width):
    """Scatter samples into an (H, W) grid keeping the smallest depth; empty = inf."""
    out = np.full(height * width, np.inf)
    flat = np.asarray(rows, dtype=np.int64) * width + np.asarray(cols, dtype=np.int64)
    np.minimum.at(out, flat, np.asarray(depth, dtype=np.float64))
    return out.reshape(height, width)


def box_sum(a, radius):
    """Sum over the (2r+1)^2 window around each pixel, truncated at the border.

    ``a`` is (H, W) or (H, W, C); summation runs over the first two axes.
    """
    a = np.asarray(a, dtype=np.float64)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[:, :, None]
    h, w, c = a.shape
    integral = np.zeros((h + 1, w + 1, c))
    integral[1:, 1:] = a.cumsum(0).cumsum(1)
    r0 = np.clip(np.arange(h) - radius, 0, h)
    r1 = np.clip(np.arange(h) + radius + 1, 0, h)
    c0 = np.clip(np.arange(w) - radius, 0, w)
    c1 = np.clip(np.arange(w) + radius + 1, 0, w)
    out = (integral[r1][:, c1] - integral[r0][:, c1]
           - integral[r1][:, c0] + integral[r0][:, c0])
    return out[:, :, 0] if squeeze else out
