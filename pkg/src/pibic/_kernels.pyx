# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics match ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, INFINITY, NAN

cnp.import_array()

BACKEND = "cython"

cdef double LOG_2PI = 1.8378770664093453


def log_exp_half_rowsum(V):
    cdef double[:, ::1] v = np.ascontiguousarray(V, dtype=np.float64)
    cdef Py_ssize_t R = v.shape[0], K = v.shape[1], r, j
    out_arr = np.empty(R)
    cdef double[::1] out = out_arr
    cdef double m, s
    with nogil:
        for r in range(R):
            m = -INFINITY
            for j in range(K):
                if v[r, j] > m:
                    m = v[r, j]
            m = 0.5 * m
            s = 0.0
            for j in range(K):
                s += exp(0.5 * v[r, j] - m)
            out[r] = m + log(s)
    return out_arr


def nested_log_terms(W, double log_n):
    cdef double[:, ::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t R = w.shape[0], K = w.shape[1], r, j
    out_arr = np.empty(R)
    cdef double[::1] out = out_arr
    cdef double m, s, h
    with nogil:
        for r in range(R):
            m = -INFINITY
            for j in range(K):
                h = 0.5 * w[r, j] - 0.5 * log_n * (j + 1)
                if h > m:
                    m = h
            s = 0.0
            for j in range(K):
                s += exp(0.5 * w[r, j] - 0.5 * log_n * (j + 1) - m)
            out[r] = m + log(s)
    return out_arr


def order_select(W, double penalty, Py_ssize_t min_order):
    cdef double[:, ::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t R = w.shape[0], K = w.shape[1], r, j, best
    idx_arr = np.empty(R, dtype=np.int64)
    val_arr = np.empty(R)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] val = val_arr
    cdef double c, bc, bv
    with nogil:
        for r in range(R):
            if min_order <= 0:
                best = 0
                bc = 0.0
                bv = 0.0
            else:
                best = -1
                bc = -INFINITY
                bv = 0.0
            for j in range(1, K + 1):
                if j < min_order:
                    continue
                c = w[r, j - 1] - penalty * j
                if best < 0 or c > bc:
                    best = j
                    bc = c
                    bv = w[r, j - 1]
            idx[r] = best
            val[r] = bv
    return idx_arr, val_arr


def running_neyman(z):
    cdef double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t R = zz.shape[0], M = zz.shape[1], r, m, bm
    val_arr = np.empty(R)
    arg_arr = np.empty(R, dtype=np.int64)
    cdef double[::1] val = val_arr
    cdef long long[::1] arg = arg_arr
    cdef double s, t, best
    with nogil:
        for r in range(R):
            s = 0.0
            best = -INFINITY
            bm = 0
            for m in range(M):
                s += zz[r, m] * zz[r, m] - 1.0
                t = s / sqrt(2.0 * (m + 1))
                if t > best:
                    best = t
                    bm = m + 1
            val[r] = best
            arg[r] = bm
    return val_arr, arg_arr


cdef double _kf_whiten(double[:, ::1] y, double[:, ::1] e, double[:, ::1] a,
                       double rho, double sz2, double v0, double v1) noexcept nogil:
    # State (I_t, eps_t, eps_{t-1}); observation I_t + eps_t - eps_{t-1}.
    cdef Py_ssize_t n = y.shape[0], q = y.shape[1], t, k
    cdef double p00, p01, p02, p11, p12, p22
    cdef double c0, c1, c2, F, sF, v, logdet = 0.0
    cdef double n00, n02, n22
    for k in range(q):
        a[0, k] = 0.0
        a[1, k] = 0.0
        a[2, k] = 0.0
    p00 = sz2 / (1.0 - rho * rho)
    p11 = exp(v0 + v1)
    p22 = exp(v0)
    p01 = 0.0
    p02 = 0.0
    p12 = 0.0
    for t in range(n):
        c0 = p00 + p01 - p02
        c1 = p01 + p11 - p12
        c2 = p02 + p12 - p22
        F = c0 + c1 - c2
        if F <= 0.0:
            return NAN
        sF = sqrt(F)
        logdet += log(F)
        for k in range(q):
            v = y[t, k] - (a[0, k] + a[1, k] - a[2, k])
            e[t, k] = v / sF
            a[0, k] += c0 * v / F
            a[1, k] += c1 * v / F
            a[2, k] += c2 * v / F
        p00 -= c0 * c0 / F
        p01 -= c0 * c1 / F
        p02 -= c0 * c2 / F
        p11 -= c1 * c1 / F
        p12 -= c1 * c2 / F
        p22 -= c2 * c2 / F
        # predict
        for k in range(q):
            a[2, k] = a[1, k]
            a[1, k] = 0.0
            a[0, k] = rho * a[0, k]
        n00 = rho * rho * p00 + sz2
        n02 = rho * p01
        n22 = p11
        p00 = n00
        p01 = 0.0
        p02 = n02
        p11 = exp(v0 + v1 * (t + 2))
        p12 = 0.0
        p22 = n22
    return logdet


def star_whiten(Y, double rho, double sigma_z2, double v0, double v1):
    arr = np.ascontiguousarray(Y, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    cdef double[:, ::1] y = arr
    out = np.empty_like(arr)
    cdef double[:, ::1] e = out
    cdef double[:, ::1] a = np.empty((3, arr.shape[1]))
    cdef double logdet
    with nogil:
        logdet = _kf_whiten(y, e, a, rho, sigma_z2, v0, v1)
    if logdet != logdet:
        raise np.linalg.LinAlgError("star covariance is not positive definite")
    return (out[:, 0] if squeeze else out), logdet


def star_profile_loglik(y, X, double rho, double sigma_z2, double v0, double v1):
    arr = np.ascontiguousarray(np.column_stack([y, X]), dtype=np.float64)
    cdef double[:, ::1] ya = arr
    cdef Py_ssize_t n = arr.shape[0], q = arr.shape[1], p = q - 1, i, j, k
    e_arr = np.empty_like(arr)
    cdef double[:, ::1] e = e_arr
    cdef double[:, ::1] a = np.empty((3, q))
    G_arr = np.zeros((p, p))
    beta_arr = np.zeros(p)
    cdef double[:, ::1] G = G_arr
    cdef double[::1] beta = beta_arr
    cdef double logdet, s, rss, res
    cdef bint ok = True
    with nogil:
        logdet = _kf_whiten(ya, e, a, rho, sigma_z2, v0, v1)
        if logdet == logdet:
            # normal equations on whitened columns, Cholesky in place
            for j in range(p):
                for k in range(j + 1):
                    s = 0.0
                    for i in range(n):
                        s += e[i, j + 1] * e[i, k + 1]
                    G[j, k] = s
                s = 0.0
                for i in range(n):
                    s += e[i, j + 1] * e[i, 0]
                beta[j] = s
            for j in range(p):
                s = G[j, j]
                for k in range(j):
                    s -= G[j, k] * G[j, k]
                if s <= 0.0:
                    ok = False
                    break
                G[j, j] = sqrt(s)
                for i in range(j + 1, p):
                    s = G[i, j]
                    for k in range(j):
                        s -= G[i, k] * G[j, k]
                    G[i, j] = s / G[j, j]
            if ok:
                for j in range(p):
                    s = beta[j]
                    for k in range(j):
                        s -= G[j, k] * beta[k]
                    beta[j] = s / G[j, j]
                for j in range(p - 1, -1, -1):
                    s = beta[j]
                    for k in range(j + 1, p):
                        s -= G[k, j] * beta[k]
                    beta[j] = s / G[j, j]
                rss = 0.0
                for i in range(n):
                    res = e[i, 0]
                    for j in range(p):
                        res -= e[i, j + 1] * beta[j]
                    rss += res * res
    if logdet != logdet:
        raise np.linalg.LinAlgError("star covariance is not positive definite")
    if not ok:
        raise np.linalg.LinAlgError("whitened regressors are rank deficient")
    return -0.5 * (n * LOG_2PI + logdet + rss), beta_arr
