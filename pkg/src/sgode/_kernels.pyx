# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled edge-list kernels for the ground-truth dynamics right-hand sides."""
import numpy as np
from libc.math cimport fabs, pow


def heat(const double[:, ::1] x, const long[::1] rows, const long[::1] cols,
         const double[::1] w, double k):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], e, f, i, j
    out_arr = np.zeros((n, d))
    cdef double[:, ::1] out = out_arr
    for e in range(rows.shape[0]):
        i = rows[e]
        j = cols[e]
        for f in range(d):
            out[i, f] -= k * w[e] * (x[i, f] - x[j, f])
    return out_arr


def mutualistic(const double[:, ::1] x, const long[::1] rows, const long[::1] cols,
                const double[::1] w, const double[::1] b, const double[::1] kcap,
                const double[::1] c, const double[::1] dd, const double[::1] ee,
                const double[::1] hh):
    """Returns (derivative, index of first edge with a vanishing denominator or -1)."""
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], e, f, i, j
    cdef double xi, xj, den
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for f in range(d):
            xi = x[i, f]
            out[i, f] = b[i] + xi * (1.0 - xi / kcap[i]) * (xi / c[i] - 1.0)
    for e in range(rows.shape[0]):
        i = rows[e]
        j = cols[e]
        for f in range(d):
            xi = x[i, f]
            xj = x[j, f]
            den = dd[i] + ee[i] * xi + hh[j] * xj
            if fabs(den) < 1e-9:
                return out_arr, e
            out[i, f] += w[e] * xi * xj / den
    return out_arr, -1


cdef inline double _power(double v, double a) nogil:
    if a == 1.0:
        return v
    if a == 2.0:
        return v * v
    return pow(v, a)


def gene(const double[:, ::1] x, const long[::1] rows, const long[::1] cols,
         const double[::1] w, const double[::1] b, double fexp, double hill):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], e, f, i, j
    cdef double p
    out_arr = np.empty((n, d))
    hill_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] act = hill_arr
    # the Hill activation depends only on the source node: one pow per node
    for i in range(n):
        for f in range(d):
            out[i, f] = -b[i] * _power(x[i, f], fexp)
            p = _power(x[i, f], hill)
            act[i, f] = p / (p + 1.0)
    for e in range(rows.shape[0]):
        i = rows[e]
        j = cols[e]
        for f in range(d):
            out[i, f] += w[e] * act[j, f]
    return out_arr
