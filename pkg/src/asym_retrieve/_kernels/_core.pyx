# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled encoder kernels.

Same contract as ``pykernels``: float64 C-contiguous arrays, int64 ids and
offsets. All per-row arithmetic is independent of batch composition, and all
reductions run in a fixed order, so results are deterministic and a batch
call equals mapping the single-item call bit for bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, tanh as c_tanh

NAME = "compiled"


def mean_pool(double[:, ::1] table, long[::1] flat_ids, long[::1] offsets):
    cdef Py_ssize_t nrows = offsets.shape[0] - 1
    cdef Py_ssize_t h = table.shape[1]
    out_arr = np.zeros((nrows, h), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t b, t, j, tok
    cdef double inv
    with nogil:
        for b in range(nrows):
            for t in range(offsets[b], offsets[b + 1]):
                tok = flat_ids[t]
                for j in range(h):
                    out[b, j] += table[tok, j]
            inv = 1.0 / <double>(offsets[b + 1] - offsets[b])
            for j in range(h):
                out[b, j] *= inv
    return out_arr


def affine(double[:, ::1] x, double[:, ::1] w, double[::1] b):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t din = w.shape[0]
    cdef Py_ssize_t dout = w.shape[1]
    out_arr = np.empty((n, dout), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, j
    cdef double xv
    with nogil:
        for i in range(n):
            for j in range(dout):
                out[i, j] = b[j]
            for k in range(din):
                xv = x[i, k]
                for j in range(dout):
                    out[i, j] += xv * w[k, j]
    return out_arr


def tanh(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out_arr = np.empty_like(x)
    cdef double[::1] flat_in = x.ravel()
    cdef double[::1] flat_out = out_arr.ravel()
    cdef Py_ssize_t i
    with nogil:
        for i in range(flat_in.shape[0]):
            flat_out[i] = c_tanh(flat_in[i])
    return out_arr


def normalize_rows(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    norms_arr = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] norms = norms_arr
    cdef Py_ssize_t i, j
    cdef double acc, inv
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(d):
                acc += x[i, j] * x[i, j]
            acc = sqrt(acc)
            norms[i] = acc
            if acc != 0.0:
                inv = 1.0 / acc
                for j in range(d):
                    out[i, j] = x[i, j] * inv
    return out_arr, norms_arr


def tanh_backward(double[:, ::1] y, double[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t d = y.shape[1]
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            for j in range(d):
                out[i, j] = gy[i, j] * (1.0 - y[i, j] * y[i, j])
    return out_arr


def affine_backward(double[:, ::1] x, double[:, ::1] w, double[:, ::1] gy):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t din = w.shape[0]
    cdef Py_ssize_t dout = w.shape[1]
    gx_arr = np.empty((n, din), dtype=np.float64)
    gw_arr = np.zeros((din, dout), dtype=np.float64)
    gb_arr = np.zeros(dout, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t i, k, j
    cdef double acc, xv
    with nogil:
        for i in range(n):
            for k in range(din):
                acc = 0.0
                for j in range(dout):
                    acc += gy[i, j] * w[k, j]
                gx[i, k] = acc
            for k in range(din):
                xv = x[i, k]
                for j in range(dout):
                    gw[k, j] += xv * gy[i, j]
            for j in range(dout):
                gb[j] += gy[i, j]
    return gx_arr, gw_arr, gb_arr


def normalize_backward(double[:, ::1] y, double[::1] norms, double[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t d = y.shape[1]
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dot, inv
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(d):
                dot += y[i, j] * gy[i, j]
            inv = 1.0 / norms[i]
            for j in range(d):
                out[i, j] = (gy[i, j] - y[i, j] * dot) * inv
    return out_arr


def mean_pool_backward(double[:, ::1] g, long[::1] flat_ids, long[::1] offsets,
                       Py_ssize_t vocab_size):
    cdef Py_ssize_t nrows = offsets.shape[0] - 1
    cdef Py_ssize_t h = g.shape[1]
    gtable_arr = np.zeros((vocab_size, h), dtype=np.float64)
    cdef double[:, ::1] gtable = gtable_arr
    cdef Py_ssize_t b, t, j, tok
    cdef double coeff
    with nogil:
        for b in range(nrows):
            coeff = 1.0 / <double>(offsets[b + 1] - offsets[b])
            for t in range(offsets[b], offsets[b + 1]):
                tok = flat_ids[t]
                for j in range(h):
                    gtable[tok, j] += g[b, j] * coeff
    return gtable_arr
