# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled quasi-Monte Carlo sweep kernel.

Same contract as :mod:`multipipe._mvnkern_py` (see there for the parameter
documentation); this version runs the per-sample conditioning loop in C.
It calls the identical scipy special functions (``ndtr``/``ndtri``) so the
two kernels differ only by floating-point summation order.
"""

from libc.math cimport floor, fabs

import numpy as np

cimport numpy as cnp
from scipy.special.cython_special cimport ndtr, ndtri

cnp.import_array()

cdef double UEPS = 1e-15


def sweep_batches(
    double[:, ::1] cho,
    double[::1] lo,
    double[::1] hi,
    double[::1] gen,
    double[:, ::1] shifts,
    Py_ssize_t n_pts,
):
    cdef Py_ssize_t j_dim = cho.shape[0]
    cdef Py_ssize_t n_batches = shifts.shape[0]
    out_arr = np.empty(n_batches)
    cdef double[::1] out = out_arr
    y_arr = np.empty(j_dim)
    cdef double[::1] y = y_arr

    cdef Py_ssize_t b, k, i, m
    cdef double c0, d0, c, d, dc, pv, acc, z, x, u, s

    c0 = ndtr(lo[0])
    d0 = ndtr(hi[0])
    if j_dim == 1:
        for b in range(n_batches):
            out[b] = d0 - c0
        return out_arr

    for b in range(n_batches):
        acc = 0.0
        for k in range(1, n_pts + 1):
            c = c0
            dc = d0 - c0
            pv = dc
            for i in range(1, j_dim):
                z = gen[i - 1] * k + shifts[b, i - 1]
                z -= floor(z)
                x = fabs(2.0 * z - 1.0)
                u = c + x * dc
                if u < UEPS:
                    u = UEPS
                elif u > 1.0 - UEPS:
                    u = 1.0 - UEPS
                y[i - 1] = ndtri(u)
                s = 0.0
                for m in range(i):
                    s += cho[i, m] * y[m]
                if cho[i, i] > 0.0:
                    c = ndtr(lo[i] - s)
                    d = ndtr(hi[i] - s)
                else:
                    c = 0.0 if s >= lo[i] else 1.0
                    d = 1.0 if s <= hi[i] else 0.0
                dc = d - c
                pv *= dc
            acc += pv
        out[b] = acc / n_pts
    return out_arr
