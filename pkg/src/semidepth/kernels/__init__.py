"""Hot kernels: bilinear sampling with derivatives, z-buffer scatter, box sums.

The compiled extension is used when it was built; otherwise the numpy
fallback. Set ``SEMIDEPTH_KERNELS=python`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"

if os.environ.get("SEMIDEPTH_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

bilinear_sample = _impl.bilinear_sample
zbuffer = _impl.zbuffer
box_sum = _impl.box_sum


def backends():
    """Available kernel implementations by name."""
    out = {"python": _fallback}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


__all__ = ["BACKEND", "backends", "bilinear_sample", "box_sum", "zbuffer"]
