# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: thresholded edit distance, ARMA residual recursion, SES."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def edit_distance(a, b, double eps):
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], i, j
    cdef long[::1] prev = np.arange(m + 1, dtype=np.int_)
    cdef long[::1] cur = np.empty(m + 1, dtype=np.int_)
    cdef long[::1] tmp
    cdef long sub, best
    cdef double ai
    for i in range(1, n + 1):
        cur[0] = i
        ai = av[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if fabs(ai - bv[j - 1]) <= eps else 1)
            best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            if sub < best:
                best = sub
            cur[j] = best
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])


def css_residuals(w, double const, phi, theta):
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[::1] pv = np.ascontiguousarray(phi, dtype=np.float64)
    cdef const double[::1] qv = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t n = wv.shape[0], p = pv.shape[0], q = qv.shape[0], t, i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=1] e_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] e = e_arr
    cdef double acc
    for t in range(p, n):
        acc = wv[t] - const
        for i in range(p):
            acc -= pv[i] * wv[t - 1 - i]
        for j in range(q):
            if t - 1 - j >= 0:
                acc -= qv[j] * e[t - 1 - j]
        e[t] = acc
    return e_arr[p:].copy()


def ses_sse(y, double alpha):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0], t
    cdef double level = yv[0], sse = 0.0, err
    for t in range(1, n):
        err = yv[t] - level
        sse += err * err
        level = alpha * yv[t] + (1.0 - alpha) * level
    return sse, level
