"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback is
always available. Set PSANET_KERNELS=py or =c to force a backend (=c raises
if the extension is missing). Both backends are bit-identical by contract
and by test.
"""

import os

import numpy as np

from ..errors import ConfigError

_choice = os.environ.get("PSANET_KERNELS", "auto")
if _choice not in ("auto", "c", "py"):
    raise ConfigError(f"PSANET_KERNELS must be auto, c, or py, not {_choice!r}")

if _choice == "py":
    _impl = None
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _choice == "c":
            raise
        _impl = None

from . import _pykernels as _py

BACKEND = "c" if _impl is not None else "py"


def im2col(x: np.ndarray, k: int, stride: int, dtype) -> np.ndarray:
    """Gather sliding windows: out[n,c,j,t] = x[n,c,t*stride+j], C-contiguous."""
    if _impl is not None:
        if dtype == np.float64:
            return _impl.im2col_f64(x, k, stride)
        return _impl.im2col_f32(x, k, stride)
    return _py.im2col(x, k, stride, dtype)


def col2im(cols: np.ndarray, stride: int, lp: int) -> np.ndarray:
    """Scatter-add the im2col adjoint back onto a length-lp signal."""
    if _impl is not None:
        return _impl.col2im_f32(cols, stride, lp)
    return _py.col2im(cols, stride, lp)
