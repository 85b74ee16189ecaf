# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: 2-D cross-correlation and max-pooling, forward and backward.

Inputs are already padded; padding and unpadding live in the caller so the
compiled and fallback backends share one contract (see kernels/fallback.py).
All arrays are C-contiguous float64.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(double[:, :, ::1] xp, double[:, :, :, ::1] w,
                   double[::1] bias, int stride):
    """Cross-correlate padded input (C,Hp,Wp) with kernels (O,C,k,k) -> (O,Ho,Wo)."""
    cdef Py_ssize_t C = xp.shape[0], Hp = xp.shape[1], Wp = xp.shape[2]
    cdef Py_ssize_t O = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t Ho = (Hp - k) // stride + 1
    cdef Py_ssize_t Wo = (Wp - k) // stride + 1
    out_arr = np.empty((O, Ho, Wo), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t o, c, i, j, ki, kj
    cdef double acc
    with nogil:
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = bias[o]
                    for c in range(C):
                        for ki in range(k):
                            for kj in range(k):
                                acc += w[o, c, ki, kj] * xp[c, i * stride + ki, j * stride + kj]
                    out[o, i, j] = acc
    return out_arr


def conv2d_backward_input(double[:, :, ::1] go, double[:, :, :, ::1] w,
                          int stride, Py_ssize_t Hp, Py_ssize_t Wp):
    """Gradient wrt the padded input: scatter go (O,Ho,Wo) through kernels."""
    cdef Py_ssize_t O = go.shape[0], Ho = go.shape[1], Wo = go.shape[2]
    cdef Py_ssize_t C = w.shape[1], k = w.shape[2]
    dxp_arr = np.zeros((C, Hp, Wp), dtype=np.float64)
    cdef double[:, :, ::1] dxp = dxp_arr
    cdef Py_ssize_t o, c, i, j, ki, kj
    cdef double g
    with nogil:
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    g = go[o, i, j]
                    for c in range(C):
                        for ki in range(k):
                            for kj in range(k):
                                dxp[c, i * stride + ki, j * stride + kj] += g * w[o, c, ki, kj]
    return dxp_arr


def conv2d_backward_kernel(double[:, :, ::1] go, double[:, :, ::1] xp,
                           Py_ssize_t k, int stride):
    """Gradients wrt kernels (O,C,k,k) and bias (O,)."""
    cdef Py_ssize_t O = go.shape[0], Ho = go.shape[1], Wo = go.shape[2]
    cdef Py_ssize_t C = xp.shape[0]
    dw_arr = np.zeros((O, C, k, k), dtype=np.float64)
    db_arr = np.zeros(O, dtype=np.float64)
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t o, c, i, j, ki, kj
    cdef double g
    with nogil:
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    g = go[o, i, j]
                    db[o] += g
                    for c in range(C):
                        for ki in range(k):
                            for kj in range(k):
                                dw[o, c, ki, kj] += g * xp[c, i * stride + ki, j * stride + kj]
    return dw_arr, db_arr


def maxpool_forward(double[:, :, ::1] x, int window):
    """Non-overlapping max pooling (stride == window).

    Returns (out, argmax) where argmax holds the flat H*W index of the first
    row-major maximum in each window.
    """
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t Ho = H // window, Wo = W // window
    out_arr = np.empty((C, Ho, Wo), dtype=np.float64)
    idx_arr = np.empty((C, Ho, Wo), dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t c, i, j, wi, wj, r, s, best_r, best_s
    cdef double best, v
    with nogil:
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    best = -1e308
                    best_r = 0
                    best_s = 0
                    for wi in range(window):
                        for wj in range(window):
                            r = i * window + wi
                            s = j * window + wj
                            v = x[c, r, s]
                            if v > best:
                                best = v
                                best_r = r
                                best_s = s
                    out[c, i, j] = best
                    idx[c, i, j] = best_r * W + best_s
    return out_arr, idx_arr


def maxpool_backward(double[:, :, ::1] go, cnp.int64_t[:, :, ::1] idx,
                     Py_ssize_t H, Py_ssize_t W):
    """Route output gradients back to the argmax positions."""
    cdef Py_ssize_t C = go.shape[0], Ho = go.shape[1], Wo = go.shape[2]
    dx_arr = np.zeros((C, H, W), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t c, i, j, flat
    with nogil:
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    flat = idx[c, i, j]
                    dx[c, flat // W, flat % W] += go[c, i, j]
    return dx_arr
