# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled pair-message and pairwise-L1 kernels.

Same signatures and results as ``reminet._kernels_py``; loops are written out
so each (i, j, k) triple is touched once with no temporaries.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def pair_message_forward(double[:, ::1] edge_pre, double[:, ::1] node_pre):
    cdef Py_ssize_t n = node_pre.shape[0]
    cdef Py_ssize_t h = node_pre.shape[1]
    cdef Py_ssize_t i, j, k, row
    cdef double inv
    if edge_pre.shape[0] != n * n or edge_pre.shape[1] != h:
        raise ValueError("edge_pre must have shape (n*n, h)")
    # tanh is evaluated by numpy's vectorized ufunc; libc tanh per element is
    # several times slower than the whole fallback kernel.
    ep = np.asarray(edge_pre).reshape(n, n, h)
    npre = np.asarray(node_pre)
    a_arr = np.add(ep, npre[:, None, :])
    b_arr = np.add(ep, npre[None, :, :])
    np.tanh(a_arr, out=a_arr)
    np.tanh(b_arr, out=b_arr)
    a_arr = a_arr.reshape(n * n, h)
    b_arr = b_arr.reshape(n * n, h)
    out_arr = np.zeros((n, h), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] b = b_arr
    inv = 1.0 / (n - 1) if n > 1 else 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            row = i * n + j
            for k in range(h):
                out[i, k] += a[row, k] * b[row, k]
        for k in range(h):
            out[i, k] *= inv
    return out_arr, a_arr, b_arr


def pair_message_backward(double[:, ::1] grad_out, double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = grad_out.shape[0]
    cdef Py_ssize_t h = grad_out.shape[1]
    cdef Py_ssize_t i, j, k, row
    cdef double g, av, bv, da, db, inv
    ge_arr = np.zeros((n * n, h), dtype=np.float64)
    gn_arr = np.zeros((n, h), dtype=np.float64)
    cdef double[:, ::1] ge = ge_arr
    cdef double[:, ::1] gn = gn_arr
    if n < 2:
        return ge_arr, gn_arr
    inv = 1.0 / (n - 1)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            row = i * n + j
            for k in range(h):
                g = grad_out[i, k] * inv
                av = a[row, k]
                bv = b[row, k]
                da = g * bv * (1.0 - av * av)
                db = g * av * (1.0 - bv * bv)
                ge[row, k] = da + db
                gn[i, k] += da
                gn[j, k] += db
    return ge_arr, gn_arr


def pairwise_l1_forward(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t h = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double s, d
    out_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for k in range(h):
                d = x[i, k] - x[j, k]
                s += d if d >= 0.0 else -d
            out[i, j] = s
            out[j, i] = s
    return out_arr


def pairwise_l1_backward(double[:, ::1] grad_out, double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t h = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double g, d
    gx_arr = np.zeros((n, h), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    for i in range(n):
        for j in range(i + 1, n):
            g = grad_out[i, j] + grad_out[j, i]
            for k in range(h):
                d = x[i, k] - x[j, k]
                if d > 0.0:
                    gx[i, k] += g
                    gx[j, k] -= g
                elif d < 0.0:
                    gx[i, k] -= g
                    gx[j, k] += g
    return gx_arr
