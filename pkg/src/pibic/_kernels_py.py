"""Pure NumPy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_kernels`` module. Used when
the extension is not built, and as the reference the compiled code is tested
against.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg

BACKEND = "python"

_LOG_2PI = np.log(2.0 * np.pi)


def log_exp_half_rowsum(V):
    """Row-wise ``log(sum_j exp(V[r, j] / 2))`` without overflow."""
    V = np.asarray(V, dtype=float)
    h = 0.5 * V
    m = h.max(axis=1)
    return m + np.log(np.exp(h - m[:, None]).sum(axis=1))


def nested_log_terms(W, log_n):
    """Row-wise ``log(sum_j exp(W[r, j] / 2 - (j + 1) * log_n / 2))``.

    Column ``j`` of ``W`` holds the likelihood ratio of the model with
    ``j + 1`` extra parameters.
    """
    W = np.asarray(W, dtype=float)
    pen = 0.5 * log_n * np.arange(1, W.shape[1] + 1)
    h = 0.5 * W - pen
    m = h.max(axis=1)
    return m + np.log(np.exp(h - m[:, None]).sum(axis=1))


def order_select(W, penalty, min_order):
    """Penalized order selection on cumulative statistics.

    For each row picks ``r`` in ``min_order..K`` maximizing ``W_r - penalty * r``
    with ``W_0 = 0``; ties go to the smaller ``r``. Returns ``(r, W_r)``.
    """
    W = np.asarray(W, dtype=float)
    R, K = W.shape
    full = np.hstack([np.zeros((R, 1)), W])
    crit = full - penalty * np.arange(K + 1)
    if min_order > 0:
        crit[:, :min_order] = -np.inf
    r = np.argmax(crit, axis=1)
    return r.astype(np.int64), full[np.arange(R), r]


def running_neyman(z):
    """Row-wise ``max_m (2m)^{-1/2} sum_{i<=m} (z_i^2 - 1)`` and its argmax ``m``."""
    z = np.asarray(z, dtype=float)
    m = np.arange(1, z.shape[1] + 1)
    s = np.cumsum(z * z - 1.0, axis=1) / np.sqrt(2.0 * m)
    k = np.argmax(s, axis=1)
    return s[np.arange(z.shape[0]), k], (k + 1).astype(np.int64)


def star_covariance(n, rho, sigma_z2, v0, v1):
    j = np.arange(1, n + 1, dtype=float)
    lag = np.abs(np.subtract.outer(j, j))
    cov = (sigma_z2 / (1.0 - rho * rho)) * rho ** lag
    meas = np.exp(v0 + v1 * np.arange(0, n + 1, dtype=float))
    idx = np.arange(n)
    cov[idx, idx] += meas[1:] + meas[:-1]
    cov[idx[:-1], idx[1:]] -= meas[1:-1]
    cov[idx[1:], idx[:-1]] -= meas[1:-1]
    return cov


def star_whiten(Y, rho, sigma_z2, v0, v1):
    """Whiten the columns of ``Y`` under the star-model covariance.

    Returns ``(L^{-1} Y, log det Sigma)`` with ``L`` the lower Cholesky factor.
    """
    Y = np.asarray(Y, dtype=float)
    cov = star_covariance(Y.shape[0], rho, sigma_z2, v0, v1)
    L = linalg.cholesky(cov, lower=True)
    E = linalg.solve_triangular(L, Y, lower=True)
    return E, 2.0 * np.log(np.diag(L)).sum()


def star_profile_loglik(y, X, rho, sigma_z2, v0, v1):
    """Gaussian log-likelihood maximized over the mean coefficients by GLS.

    Returns ``(loglik, beta)`` for the model ``y ~ N(X beta, Sigma)``.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    E, logdet = star_whiten(np.column_stack([y, X]), rho, sigma_z2, v0, v1)
    ey, EX = E[:, 0], E[:, 1:]
    beta, *_ = np.linalg.lstsq(EX, ey, rcond=None)
    resid = ey - EX @ beta
    n = y.shape[0]
    return -0.5 * (n * _LOG_2PI + logdet + resid @ resid), beta
