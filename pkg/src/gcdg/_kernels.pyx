# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: Gaussian-mixture scoring/backward and Sinkhorn scaling.

Drop-in replacements for the functions in ``_kernels_py``; results agree with
the numpy versions to rounding (summation order differs).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, M_PI

cnp.import_array()

cdef double LOG_2PI = log(2.0 * M_PI)


def log_density(double[:, ::1] Z, double[:, :, ::1] means, double[:, :, ::1] log_var):
    cdef Py_ssize_t N = Z.shape[0], D = Z.shape[1]
    cdef Py_ssize_t C = means.shape[0], K = means.shape[1]
    cdef Py_ssize_t n, c, k, d
    cdef double acc, diff
    out_arr = np.empty((N, C, K))
    cdef double[:, :, ::1] out = out_arr
    prec_arr = np.exp(-np.asarray(log_var))
    cdef double[:, :, ::1] prec = prec_arr
    cdef double[:, ::1] lvsum = np.asarray(log_var).sum(axis=-1)
    for n in range(N):
        for c in range(C):
            for k in range(K):
                acc = 0.0
                for d in range(D):
                    diff = Z[n, d] - means[c, k, d]
                    acc += diff * diff * prec[c, k, d]
                out[n, c, k] = -0.5 * (D * LOG_2PI + lvsum[c, k] + acc)
    return out_arr


def density_backward(double[:, ::1] Z, double[:, :, ::1] means,
                     double[:, :, ::1] log_var, double[:, :, ::1] U):
    cdef Py_ssize_t N = Z.shape[0], D = Z.shape[1]
    cdef Py_ssize_t C = means.shape[0], K = means.shape[1]
    cdef Py_ssize_t n, c, k, d
    cdef double u, diff, s
    dm_arr = np.zeros((C, K, D))
    dl_arr = np.zeros((C, K, D))
    dz_arr = np.zeros((N, D))
    cdef double[:, :, ::1] dm = dm_arr
    cdef double[:, :, ::1] dl = dl_arr
    cdef double[:, ::1] dz = dz_arr
    prec_arr = np.exp(-np.asarray(log_var))
    cdef double[:, :, ::1] prec = prec_arr
    for n in range(N):
        for c in range(C):
            for k in range(K):
                u = U[n, c, k]
                if u == 0.0:
                    continue
                for d in range(D):
                    diff = Z[n, d] - means[c, k, d]
                    s = diff * prec[c, k, d]
                    dm[c, k, d] += u * s
                    dl[c, k, d] += 0.5 * u * (diff * s - 1.0)
                    dz[n, d] -= u * s
    return dm_arr, dl_arr, dz_arr


def sinkhorn_scale(double[:, ::1] Q, double col_target, int iterations):
    cdef Py_ssize_t N = Q.shape[0], K = Q.shape[1]
    cdef Py_ssize_t n, k
    cdef int t
    cdef double acc
    a_arr = np.ones(N)
    b_arr = np.ones(K)
    cdef double[::1] a = a_arr
    cdef double[::1] b = b_arr
    for t in range(iterations):
        for k in range(K):
            acc = 0.0
            for n in range(N):
                acc += a[n] * Q[n, k]
            b[k] = col_target / acc
        for n in range(N):
            acc = 0.0
            for k in range(K):
                acc += Q[n, k] * b[k]
            a[n] = 1.0 / acc
    g_arr = np.empty((N, K))
    cdef double[:, ::1] g = g_arr
    for n in range(N):
        for k in range(K):
            g[n, k] = a[n] * Q[n, k] * b[k]
    return g_arr, a_arr, b_arr
