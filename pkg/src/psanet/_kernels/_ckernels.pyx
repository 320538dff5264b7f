# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled gather/scatter kernels.

Must stay bit-identical to _pykernels: same gather layout, and col2im
accumulates overlapping taps in ascending-k order.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def im2col_f64(const float[:, :, ::1] x, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], lp = x.shape[2]
    cdef Py_ssize_t lout = (lp - k) // stride + 1
    out_arr = np.empty((n, c, k, lout), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, p, t
    for i in range(n):
        for j in range(c):
            for p in range(k):
                for t in range(lout):
                    out[i, j, p, t] = <double> x[i, j, t * stride + p]
    return out_arr


def im2col_f32(const float[:, :, ::1] x, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], lp = x.shape[2]
    cdef Py_ssize_t lout = (lp - k) // stride + 1
    out_arr = np.empty((n, c, k, lout), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, p, t
    for i in range(n):
        for j in range(c):
            for p in range(k):
                for t in range(lout):
                    out[i, j, p, t] = x[i, j, t * stride + p]
    return out_arr


def col2im_f32(const float[:, :, :, ::1] cols, Py_ssize_t stride, Py_ssize_t lp):
    cdef Py_ssize_t n = cols.shape[0], c = cols.shape[1]
    cdef Py_ssize_t k = cols.shape[2], lout = cols.shape[3]
    out_arr = np.zeros((n, c, lp), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, p, t
    for i in range(n):
        for j in range(c):
            # p outer, t inner: overlapping targets accumulate in ascending-k
            # order, matching the fallback's slice loop exactly.
            for p in range(k):
                for t in range(lout):
                    out[i, j, t * stride + p] += cols[i, j, p, t]
    return out_arr
