"""Pure-numpy kernels, contract-identical to the compiled extension.

Vectorized with sliding windows and einsum; used when the extension is not
built or when LESIONBENCH_BACKEND=fallback.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    # (C, Ho, Wo, k, k) view of the padded input
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    return win[:, ::stride, ::stride]


def conv2d_forward(xp: np.ndarray, w: np.ndarray, bias: np.ndarray, stride: int) -> np.ndarray:
    k = w.shape[2]
    win = _windows(xp, k, stride)
    out = np.einsum("cijkl,ockl->oij", win, w)
    return out + bias[:, None, None]


def conv2d_backward_input(go: np.ndarray, w: np.ndarray, stride: int, Hp: int, Wp: int) -> np.ndarray:
    O, Ho, Wo = go.shape
    C, k = w.shape[1], w.shape[2]
    dxp = np.zeros((C, Hp, Wp), dtype=np.float64)
    # contribution of each output position to each in-window offset
    contrib = np.einsum("oij,ockl->cijkl", go, w)
    for ki in range(k):
        for kj in range(k):
            dxp[:, ki:ki + Ho * stride:stride, kj:kj + Wo * stride:stride] += contrib[:, :, :, ki, kj]
    return dxp


def conv2d_backward_kernel(go: np.ndarray, xp: np.ndarray, k: int, stride: int):
    win = _windows(xp, k, stride)
    dw = np.einsum("oij,cijkl->ockl", go, win)
    db = go.sum(axis=(1, 2))
    return dw, db


def maxpool_forward(x: np.ndarray, window: int):
    C, H, W = x.shape
    Ho, Wo = H // window, W // window
    cropped = x[:, :Ho * window, :Wo * window]
    # (C, Ho, Wo, window, window), window elements in row-major order
    tiles = cropped.reshape(C, Ho, window, Wo, window).transpose(0, 1, 3, 2, 4)
    flat = tiles.reshape(C, Ho, Wo, window * window)
    local = np.argmax(flat, axis=3)  # first occurrence on ties, row-major
    out = np.take_along_axis(flat, local[..., None], axis=3)[..., 0]
    rows = (np.arange(Ho)[None, :, None] * window) + local // window
    cols = (np.arange(Wo)[None, None, :] * window) + local % window
    idx = (rows * W + cols).astype(np.int64)
    return np.ascontiguousarray(out), idx


def maxpool_backward(go: np.ndarray, idx: np.ndarray, H: int, W: int) -> np.ndarray:
    C = go.shape[0]
    dx = np.zeros((C, H * W), dtype=np.float64)
    chan = np.arange(C)[:, None]
    np.add.at(dx, (chan, idx.reshape(C, -1)), go.reshape(C, -1))
    return dx.reshape(C, H, W)
