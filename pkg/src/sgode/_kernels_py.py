"""Pure-numpy versions of the dynamics kernels, same signatures as the extension."""
import numpy as np


def _scatter(rows, n, vals):
    out = np.zeros((n, vals.shape[1]))
    np.add.at(out, rows, vals)
    return out


def heat(x, rows, cols, w, k):
    return -k * _scatter(rows, x.shape[0], w[:, None] * (x[rows] - x[cols]))


def mutualistic(x, rows, cols, w, b, kcap, c, dd, ee, hh):
    xi, xj = x[rows], x[cols]
    den = dd[rows, None] + ee[rows, None] * xi + hh[cols, None] * xj
    small = np.abs(den) < 1e-9
    if small.any():
        return np.full_like(x, np.nan), int(np.flatnonzero(small.any(axis=1))[0])
    local = b[:, None] + x * (1.0 - x / kcap[:, None]) * (x / c[:, None] - 1.0)
    return local + _scatter(rows, x.shape[0], w[:, None] * xi * xj / den), -1


def gene(x, rows, cols, w, b, fexp, hill):
    p = x[cols] ** hill
    return -b[:, None] * x ** fexp + _scatter(rows, x.shape[0], w[:, None] * p / (p + 1.0))
