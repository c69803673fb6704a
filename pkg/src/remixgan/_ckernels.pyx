# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im, same contract as ``_pykernels``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    """(N, C, H, W) -> (N*OH*OW, C*KH*KW), rows ordered (n, p, q)."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t oh = (h - kh) // stride + 1, ow = (wd - kw) // stride + 1
    cdef Py_ssize_t k = c * kh * kw
    cols_arr = np.empty((n * oh * ow, k), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef Py_ssize_t b, ic, i, j, p, q, row, col
    with nogil:
        for b in range(n):
            for p in range(oh):
                for q in range(ow):
                    row = (b * oh + p) * ow + q
                    col = 0
                    for ic in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                cols[row, col] = x[b, ic, p * stride + i, q * stride + j]
                                col = col + 1
    return cols_arr


def col2im(const double[:, ::1] cols, Py_ssize_t n, Py_ssize_t c, Py_ssize_t h, Py_ssize_t wd,
           Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    """Adjoint of ``im2col``: scatter-add columns back into (N, C, H, W)."""
    cdef Py_ssize_t oh = (h - kh) // stride + 1, ow = (wd - kw) // stride + 1
    x_arr = np.zeros((n, c, h, wd), dtype=np.float64)
    cdef double[:, :, :, ::1] x = x_arr
    cdef Py_ssize_t b, ic, i, j, p, q, row, col
    with nogil:
        for b in range(n):
            for p in range(oh):
                for q in range(ow):
                    row = (b * oh + p) * ow + q
                    col = 0
                    for ic in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                x[b, ic, p * stride + i, q * stride + j] += cols[row, col]
                                col = col + 1
    return x_arr
