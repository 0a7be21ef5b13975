# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot-loop kernels: fused elementwise nonlinearities and the
masked row softmax used by the attention step.

Contracts mirror ``_kernels_numpy``; the dispatcher in ``kernels.py``
reshapes inputs to the flat/3-D layouts expected here.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log1p

cnp.import_array()

MASK_FILL = -1e30


cdef inline double _softplus1(double x) noexcept nogil:
    if x > 0.0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid1(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def softplus_flat(const double[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = _softplus1(x[i])
    return out_arr


def softplus_grad_flat(const double[::1] x, const double[::1] g):
    cdef Py_ssize_t n = x.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = g[i] * _sigmoid1(x[i])
    return out_arr


def sigmoid_flat(const double[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = _sigmoid1(x[i])
    return out_arr


def sigmoid_grad_flat(const double[::1] y, const double[::1] g):
    cdef Py_ssize_t n = y.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = g[i] * y[i] * (1.0 - y[i])
    return out_arr


def tanh_grad_flat(const double[::1] y, const double[::1] g):
    cdef Py_ssize_t n = y.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = g[i] * (1.0 - y[i] * y[i])
    return out_arr


def masked_softmax3(const double[:, :, ::1] scores, const double[:, ::1] mask):
    """scores (R, M, n), mask (M, n) shared across the leading axis."""
    cdef Py_ssize_t R = scores.shape[0]
    cdef Py_ssize_t M = scores.shape[1]
    cdef Py_ssize_t n = scores.shape[2]
    out_arr = np.empty((R, M, n), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t r, i, j
    cdef double hi, s, v
    for r in range(R):
        for i in range(M):
            hi = -1e308
            for j in range(n):
                v = scores[r, i, j] + MASK_FILL * (1.0 - mask[i, j])
                out[r, i, j] = v
                if v > hi:
                    hi = v
            s = 0.0
            for j in range(n):
                if mask[i, j] != 0.0:
                    v = exp(out[r, i, j] - hi)
                else:
                    v = 0.0
                out[r, i, j] = v
                s += v
            if s <= 0.0:
                s = 1e-300
            for j in range(n):
                out[r, i, j] /= s
    return out_arr


def masked_softmax_grad2(const double[:, ::1] probs, const double[:, ::1] g):
    """Row softmax backward over the last axis; rows flattened to (R, n)."""
    cdef Py_ssize_t R = probs.shape[0]
    cdef Py_ssize_t n = probs.shape[1]
    out_arr = np.empty((R, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, j
    cdef double dot
    for r in range(R):
        dot = 0.0
        for j in range(n):
            dot += probs[r, j] * g[r, j]
        for j in range(n):
            out[r, j] = probs[r, j] * (g[r, j] - dot)
    return out_arr
