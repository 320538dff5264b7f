"""Pure-numpy gather/scatter kernels (fallback backend).

Semantics are shared with the compiled backend and pinned by tests:
  im2col:  cols[n, c, k, t] = x[n, c, t*stride + k]
  col2im:  x[n, c, t*stride + k] += cols[n, c, k, t], accumulated in
           ascending-k order so overlapping taps always add in the same order.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(x: np.ndarray, k: int, stride: int, dtype) -> np.ndarray:
    n, c, lp = x.shape
    lout = (lp - k) // stride + 1
    s0, s1, s2 = x.strides
    win = as_strided(x, (n, c, k, lout), (s0, s1, s2, s2 * stride))
    return win.astype(dtype, order="C")


def col2im(cols: np.ndarray, stride: int, lp: int) -> np.ndarray:
    n, c, k, lout = cols.shape
    out = np.zeros((n, c, lp), dtype=np.float32)
    for j in range(k):
        out[:, :, j : j + stride * lout : stride] += cols[:, :, j, :]
    return out
