"""Backend selection for the convolution kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation is used.  Setting ``ROSETTE_GAN_PURE_PYTHON=1`` forces the
fallback.
"""
import os

import numpy as np

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"numpy": _kernels_py}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

if _ckernels is not None and os.environ.get("ROSETTE_GAN_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
else:
    BACKEND = "numpy"

_impl = _BACKENDS[BACKEND]


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Module exposing ``im2col`` / ``col2im`` for ``name`` (default: active backend)."""
    if name is None:
        return _impl
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}") from None


def set_backend(name):
    global BACKEND, _impl
    _impl = get_backend(name)
    BACKEND = name


def im2col(x, k, stride, pad, out_h, out_w):
    """Patch matrix ``[C*k*k, B*out_h*out_w]`` (float64) of a ``[B, C, H, W]`` array."""
    x = np.ascontiguousarray(x)
    if x.dtype != np.float32 and x.dtype != np.float64:
        x = x.astype(np.float32)
    return _impl.im2col(x, k, stride, pad, out_h, out_w)


def col2im(cols, B, C, H, W, k, stride, pad, out_h, out_w):
    """Adjoint of :func:`im2col`: scatter-add patches back to ``[B, C, H, W]`` (float64)."""
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    return _impl.col2im(cols, B, C, H, W, k, stride, pad, out_h, out_w)
