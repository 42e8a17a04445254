"""Disparity <-> depth with the learning scale ``s``: ``d = s / (a x + b)``.

``a = 1/d_min - 1/d_max`` and ``b = 1/d_max``; with ``s = 1`` this is the plain
inverse-depth mapping onto [d_min, d_max].
"""

from __future__ import annotations

import numpy as np

from .core import DepthMap, DepthRange, DisparityMap

# relative slack on the closed range so that far/near endpoints survive round-off
_RANGE_RTOL = 1e-12


class RangeError(ValueError):
    """Input outside the domain of the conversion."""

    def __init__(self, message: str, pixels: tuple[tuple[int, int], ...] = ()):
        self.pixels = pixels
        if pixels:
            message = f"{message} at pixel {pixels[0]}" + (f" (+{len(pixels) - 1} more)" if len(pixels) > 1 else "")
        super().__init__(message)


def disparity_to_depth(x, r: DepthRange = DepthRange()):
    """Depth for disparity ``x`` (scalar or array); raises on x outside [0,1]."""
    arr = np.asarray(x, dtype=np.float64)
    bad = ~((arr >= 0) & (arr <= 1))
    if bad.any():
        raise RangeError("disparity out of [0,1]", _where(bad))
    d = r.s / (r.a * arr + r.b)
    return float(d) if np.ndim(x) == 0 else d


def depth_to_disparity(d, r: DepthRange = DepthRange()):
    """Exact inverse of :func:`disparity_to_depth`; raises outside [s d_min, s d_max]."""
    arr = np.asarray(d, dtype=np.float64)
    lo = r.min_depth * (1 - _RANGE_RTOL)
    hi = r.max_depth * (1 + _RANGE_RTOL)
    bad = ~((arr >= lo) & (arr <= hi))
    if bad.any():
        raise RangeError(f"depth out of [{r.min_depth:g}, {r.max_depth:g}]", _where(bad))
    x = np.clip((r.s / arr - r.b) / r.a, 0.0, 1.0)
    return float(x) if np.ndim(d) == 0 else x


def clamp_depth(d, r: DepthRange = DepthRange()):
    """Clip depths into the representable interval [s d_min, s d_max]."""
    out = np.clip(np.asarray(d, dtype=np.float64), r.min_depth, r.max_depth)
    return float(out) if np.ndim(d) == 0 else out


def map_to_depth(x: DisparityMap, r: DepthRange = DepthRange()) -> DepthMap:
    return DepthMap(disparity_to_depth(x.x, r), np.ones(x.shape, dtype=bool))


def map_to_disparity(d: DepthMap, r: DepthRange = DepthRange(), fill: float = 0.0) -> DisparityMap:
    """Per-pixel disparity of the valid pixels; invalid pixels get ``fill``."""
    x = np.full(d.shape, fill, dtype=np.float64)
    vals = d.depth[d.valid]
    try:
        x[d.valid] = depth_to_disparity(vals, r)
    except RangeError:
        lo = r.min_depth * (1 - _RANGE_RTOL)
        hi = r.max_depth * (1 + _RANGE_RTOL)
        bad = d.valid & ~((d.depth >= lo) & (d.depth <= hi))
        raise RangeError(f"depth out of [{r.min_depth:g}, {r.max_depth:g}]", _where(bad)) from None
    return DisparityMap(x)


def depth_derivative(x, r: DepthRange = DepthRange()):
    """d(depth)/dx = -s a / (a x + b)^2."""
    x = np.asarray(x, dtype=np.float64)
    return -r.s * r.a / (r.a * x + r.b) ** 2


def _where(bad: np.ndarray) -> tuple[tuple[int, ...], ...]:
    if bad.ndim == 0:
        return ()
    idx = np.argwhere(bad)
    return tuple(tuple(int(i) for i in row) for row in idx)
