"""Hot numeric kernels: valid 2-d convolution forward/backward.

Two implementations with identical semantics:

* numba: straight nested loops under ``@njit`` (default backend)
* numpy: ``sliding_window_view`` + ``einsum``

Both operate on float64 arrays in CHW layout. The backend is fixed at
import time by :mod:`affectnn.backend`. No fastmath: accumulation order is
part of the determinism contract.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .backend import BACKEND


def _np_conv2d_fwd(x, w, b):
    k = w.shape[2]
    win = sliding_window_view(x, (k, k), axis=(1, 2))
    return np.einsum("chwij,ocij->ohw", win, w) + b[:, None, None]


def _np_conv2d_bwd(x, w, g):
    k = w.shape[2]
    win = sliding_window_view(x, (k, k), axis=(1, 2))
    dw = np.einsum("chwij,ohw->ocij", win, g)
    db = g.sum(axis=(1, 2))
    gpad = np.pad(g, ((0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    gwin = sliding_window_view(gpad, (k, k), axis=(1, 2))
    dx = np.einsum("ohwij,ocij->chw", gwin, w[:, :, ::-1, ::-1])
    return dx, dw, db


if BACKEND == "numba":
    from numba import njit

    @njit(cache=True)
    def _nb_conv2d_fwd(x, w, b):
        c_out, c_in, k, _ = w.shape
        h_out = x.shape[1] - k + 1
        w_out = x.shape[2] - k + 1
        out = np.empty((c_out, h_out, w_out))
        for o in range(c_out):
            for y in range(h_out):
                for z in range(w_out):
                    acc = b[o]
                    for c in range(c_in):
                        for i in range(k):
                            for j in range(k):
                                acc += x[c, y + i, z + j] * w[o, c, i, j]
                    out[o, y, z] = acc
        return out

    @njit(cache=True)
    def _nb_conv2d_bwd(x, w, g):
        c_out, c_in, k, _ = w.shape
        h_out = g.shape[1]
        w_out = g.shape[2]
        dx = np.zeros(x.shape)
        dw = np.zeros(w.shape)
        db = np.zeros(c_out)
        for o in range(c_out):
            for y in range(h_out):
                for z in range(w_out):
                    up = g[o, y, z]
                    db[o] += up
                    for c in range(c_in):
                        for i in range(k):
                            for j in range(k):
                                dx[c, y + i, z + j] += up * w[o, c, i, j]
                                dw[o, c, i, j] += up * x[c, y + i, z + j]
        return dx, dw, db

    def conv2d_fwd(x, w, b):
        return _nb_conv2d_fwd(
            np.ascontiguousarray(x), np.ascontiguousarray(w), np.ascontiguousarray(b)
        )

    def conv2d_bwd(x, w, g):
        return _nb_conv2d_bwd(
            np.ascontiguousarray(x), np.ascontiguousarray(w), np.ascontiguousarray(g)
        )

else:
    conv2d_fwd = _np_conv2d_fwd
    conv2d_bwd = _np_conv2d_bwd
