"""Polynomial trend plus AR(1) intrinsic noise plus differenced measurement error.

Observation ``j = 1..n`` is

    Y_j = beta_0 + beta_1 j + ... + beta_k j^k + I_j + eps_j - eps_{j-1},
    I_j = rho I_{j-1} + Z_j,  Z_j ~ N(0, sigma_z2),  eps_j ~ N(0, exp(v0 + v1 j)).

Likelihoods are evaluated with the innovations (Kalman) factorization of the
covariance in :mod:`pibic.kernels`; the trend is profiled out by generalized
least squares on an orthonormalized index basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import linalg, optimize

from pibic import _kernels_py, kernels, rng
from pibic.bootstrap import BootstrapResult, BootstrapSpec, run_bootstrap
from pibic.exceptions import DomainError, FitError, NumericError
from pibic.statistics import pi_bic_from_lr, pi_singleton_from_lr

RHO_MAX = 0.999
N_COV_PARAMS = 4
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class StarSeriesModel:
    """Trend degree, raw monomial coefficients and covariance parameters."""

    degree: int
    beta: np.ndarray
    rho: float
    sigma_z2: float
    v0: float
    v1: float
    n: int

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if b.size != self.degree + 1:
            raise DomainError(f"degree {self.degree} needs {self.degree + 1} coefficients, got {b.size}")
        if not abs(self.rho) < 1.0:
            raise DomainError("|rho| must be below 1")
        if not self.sigma_z2 >= 0.0:
            raise DomainError("sigma_z2 must be non-negative")
        if self.n < 1:
            raise DomainError("n must be positive")
        if not (np.isfinite(self.v0) and np.isfinite(self.v1)):
            raise DomainError("v0 and v1 must be finite")
        object.__setattr__(self, "beta", b)

    @property
    def index(self) -> np.ndarray:
        return np.arange(1, self.n + 1, dtype=float)

    def mean(self) -> np.ndarray:
        return npoly.polyval(self.index, self.beta)

    def cov_params(self) -> tuple[float, float, float, float]:
        return self.rho, self.sigma_z2, self.v0, self.v1


def build_covariance(model: StarSeriesModel) -> np.ndarray:
    """Exact ``n x n`` covariance of ``Y`` under ``model``."""
    return _kernels_py.star_covariance(model.n, *model.cov_params())


def gaussian_loglik(y, model: StarSeriesModel) -> float:
    """Multivariate normal log-density of ``y`` under ``model``.

    Raises
    ------
    NumericError
        The covariance is not positive definite even after a ``1e-8`` jitter.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size != model.n:
        raise DomainError(f"series has {y.size} values, model expects {model.n}")
    r = y - model.mean()
    try:
        e, logdet = kernels.star_whiten(r, *model.cov_params())
    except np.linalg.LinAlgError:
        cov = build_covariance(model)
        try:
            L = linalg.cholesky(cov + 1e-8 * np.eye(model.n), lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericError("star covariance factorization failed") from exc
        e = linalg.solve_triangular(L, r, lower=True)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return float(-0.5 * (model.n * _LOG_2PI + logdet + e @ e))


# ----------------------------------------------------------------- simulation

def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return rng.stream(int(seed), 0, rng.DATA)


def simulate_null_star(v0: float, v1: float, n: int, seed=0, size: int | None = None,
                       mean: float = 0.0) -> np.ndarray:
    """``Y_j = mean + eps_j - eps_{j-1}`` with ``Var(eps_j) = exp(v0 + v1 j)``, ``j = 0..n``.

    ``seed`` is an int or a ``numpy.random.Generator``. ``size`` draws that
    many independent series as rows.
    """
    if n < 2:
        raise DomainError("n must be at least 2")
    g = _generator(seed)
    sd = np.exp(0.5 * (v0 + v1 * np.arange(n + 1)))
    shape = (n + 1,) if size is None else (size, n + 1)
    eps = g.standard_normal(shape) * sd
    return mean + np.diff(eps, axis=-1)


def simulate_star(model: StarSeriesModel, seed=0, size: int | None = None) -> np.ndarray:
    """Draw series from the full model by running the defining recursions."""
    g = _generator(seed)
    n = model.n
    rows = 1 if size is None else size
    I = np.empty((rows, n))
    s0 = math.sqrt(model.sigma_z2 / (1.0 - model.rho**2))
    z = g.standard_normal((rows, n))
    I[:, 0] = s0 * z[:, 0]
    sz = math.sqrt(model.sigma_z2)
    for t in range(1, n):
        I[:, t] = model.rho * I[:, t - 1] + sz * z[:, t]
    sd = np.exp(0.5 * (model.v0 + model.v1 * np.arange(n + 1)))
    eps = g.standard_normal((rows, n + 1)) * sd
    Y = model.mean() + I + np.diff(eps, axis=1)
    return Y[0] if size is None else Y


# ---------------------------------------------------------------------- fits

@lru_cache(maxsize=64)
def trend_basis(n: int, degree: int) -> np.ndarray:
    """Orthonormal columns spanning polynomials of degree ``<= degree`` in ``j = 1..n``."""
    t = np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1)
    Q, _ = np.linalg.qr(np.polynomial.legendre.legvander(t, degree))
    Q.setflags(write=False)
    return Q


@dataclass(frozen=True)
class StarFit:
    """Maximum likelihood fit of one trend degree.

    ``theta`` holds the optimizer coordinates ``(rho, sigma_z2 / s2,
    v0 - log s2, n v1)`` for warm starts; ``stderr`` maps parameter names to
    numerical-Hessian standard errors (NaN where not identified).
    """

    model: StarSeriesModel
    loglik: float
    boundary: bool
    stderr: dict = field(repr=False)
    theta: np.ndarray = field(repr=False)
    scale: float = field(repr=False)
    starts: int = 0
    failed_starts: int = 0


GRID_RHO = (-0.5, 0.0, 0.5)
GRID_TAU = (0.0, 0.5)
GRID_V1 = (0.0, -0.002)


def _bounds(n):
    return [(-RHO_MAX, RHO_MAX), (0.0, 50.0), (-20.0, 5.0), (-10.0, 10.0)]


def _natural(theta, s2, n):
    rho, tau, u, w1 = theta
    return float(rho), float(tau * s2), float(math.log(s2) + u), float(w1 / n)


def _negll(theta, y, P, s2, n):
    try:
        ll, _ = kernels.star_profile_loglik(y, P, *_natural(theta, s2, n))
    except np.linalg.LinAlgError:
        return 1e12
    return -ll if np.isfinite(ll) else 1e12


_NEUTRAL_START = np.array([0.0, 0.5, math.log(0.5), 0.0])


def default_starts(n: int) -> list[np.ndarray]:
    """Starting grid in optimizer coordinates; ``v0`` starts at ``log(s2 / 2)``."""
    return [np.array([r, t, math.log(0.5), v * n]) for r in GRID_RHO for t in GRID_TAU for v in GRID_V1]


def _hessian(f, x, h):
    k = x.size
    H = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
    return H


def _stderr(theta, y, P, s2, n, boundary):
    names = ("rho", "sigma_z2", "v0", "v1")
    jac = np.array([1.0, s2, 1.0, 1.0 / n])
    free = [2, 3] if boundary else [i for i in range(4) if RHO_MAX - abs(theta[0]) > 1e-4 or i != 0]
    out = {k: math.nan for k in names}
    x = theta[free]
    h = 1e-4 * np.maximum(1.0, np.abs(x))

    def f(z):
        t = theta.copy()
        t[free] = z
        return _negll(t, y, P, s2, n)

    try:
        cov = np.linalg.inv(_hessian(f, x, h))
    except np.linalg.LinAlgError:
        return out
    d = np.diag(cov)
    for i, k in enumerate(free):
        if d[i] > 0:
            out[names[k]] = float(math.sqrt(d[i]) * jac[k])
    return out


def fit_star(y, degree: int, starts=None, warm=None, stderr: bool = True) -> StarFit:
    """Maximum likelihood fit with the trend profiled by GLS.

    Parameters
    ----------
    y : array (n,)
    degree : int
    starts : list of arrays, optional
        Starting points in optimizer coordinates; :func:`default_starts` when omitted.
    warm : StarFit, optional
        A previous fit whose covariance parameters are added as a start.
    stderr : bool
        Compute numerical-Hessian standard errors.

    Raises
    ------
    FitError
        Every start failed.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n <= degree + 5:
        raise DomainError(f"degree {degree} needs n > {degree + 5}, got {n}")
    P = trend_basis(n, degree)
    resid = y - P @ (P.T @ y)
    s2 = float(np.mean(resid * resid))
    if not s2 > 0:
        raise FitError("series is an exact polynomial: residual variance is zero")
    pts = list(default_starts(n) if starts is None else starts)
    if warm is not None:
        t = warm.theta.copy()
        t[1] *= warm.scale / s2
        t[2] += math.log(warm.scale / s2)
        pts.append(np.clip(t, [b[0] for b in _bounds(n)], [b[1] for b in _bounds(n)]))
    best, failed, msgs = None, 0, []
    for x0 in pts:
        try:
            res = optimize.minimize(_negll, x0, args=(y, P, s2, n), method="L-BFGS-B", bounds=_bounds(n))
        except (ValueError, FloatingPointError) as exc:
            failed += 1
            msgs.append(str(exc))
            continue
        if not np.isfinite(res.fun) or res.fun >= 1e12:
            failed += 1
            msgs.append(res.message if isinstance(res.message, str) else str(res.message))
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise FitError(f"all {len(pts)} starts failed for degree {degree}: {msgs[:3]}", index=degree)
    theta = np.array(best.x, dtype=float)
    if theta[1] < 1e-8:
        snapped = theta.copy()
        snapped[1] = 0.0
        if _negll(snapped, y, P, s2, n) <= best.fun + 1e-9:
            theta = snapped
    boundary = theta[1] == 0.0 or abs(theta[0]) >= RHO_MAX - 1e-9
    rho, sz2, v0, v1 = _natural(theta, s2, n)
    ll, gamma = kernels.star_profile_loglik(y, P, rho, sz2, v0, v1)
    j = np.arange(1, n + 1, dtype=float)
    beta = npoly.polyfit(j, P @ gamma, degree)
    model = StarSeriesModel(degree, beta, rho, sz2, v0, v1, n)
    se = _stderr(theta, y, P, s2, n, theta[1] == 0.0) if stderr else {}
    return StarFit(model, float(ll), bool(boundary), se, theta, s2, len(pts), failed)


@dataclass(frozen=True)
class TrendRow:
    degree: int
    loglik: float
    n_params: int
    bic: float
    lr: float


@dataclass(frozen=True)
class TrendSelection:
    """Degree ladder fits with the BIC choice and the two pi statistics."""

    rows: tuple[TrendRow, ...]
    degree: int
    pi_bic: float
    pi_singleton: float
    fits: tuple[StarFit, ...] = field(repr=False)
    n: int = 0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "bic_degree": self.degree,
            "pi_bic": self.pi_bic,
            "pi_singleton": self.pi_singleton,
            "degrees": [r.__dict__ for r in self.rows],
        }


def select_trend(y, max_degree: int = 15, full_grid: bool = False) -> TrendSelection:
    """Fit degrees ``0..max_degree`` and compute BIC choice, pi_BIC and pi_singleton.

    Degree 0 is fitted from the full starting grid; each higher degree starts
    from the previous degree's optimum (which keeps the ladder's
    log-likelihoods non-decreasing) plus the neutral grid point
    ``(rho, sigma_z2, v1) = (0, s2/2, 0)``, or the full grid when ``full_grid`` is set.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n <= max_degree + 6:
        raise DomainError(f"max_degree {max_degree} needs n > {max_degree + 6}, got {n}")
    fits = []
    for k in range(max_degree + 1):
        if k == 0 or full_grid:
            f = fit_star(y, k, warm=fits[-1] if fits else None, stderr=False)
        else:
            f = fit_star(y, k, starts=[_NEUTRAL_START], warm=fits[-1], stderr=False)
        fits.append(f)
    ll = np.array([f.loglik for f in fits])
    m = np.arange(max_degree + 1) + 1 + N_COV_PARAMS
    bic = ll - 0.5 * m * math.log(n)
    lr = 2.0 * (ll - ll[0])
    rows = tuple(TrendRow(k, float(ll[k]), int(m[k]), float(bic[k]), float(lr[k])) for k in range(max_degree + 1))
    if max_degree >= 1:
        pb = pi_bic_from_lr(lr[1:], np.arange(1, max_degree + 1), n)
        ps = pi_singleton_from_lr(lr[1:], n)
    else:
        pb = ps = 1.0
    return TrendSelection(rows, int(np.argmax(bic)), pb, ps, tuple(fits), n)


def star_bootstrap(selection: TrendSelection, B: int = 1000, seed: int = 0, max_degree: int | None = None,
                   v1: float | None = None, workers: int = 1) -> BootstrapResult:
    """Parametric bootstrap of ``(pi_BIC, pi_singleton)`` under the no-trend null.

    Null series are differenced heteroscedastic noise with ``v0 = 0`` and the
    null fit's ``v1`` (the statistics do not depend on ``v0`` or a constant
    mean). Each replicate repeats :func:`select_trend` in full.
    """
    n = selection.n
    K = len(selection.rows) - 1 if max_degree is None else max_degree
    v1 = selection.fits[0].model.v1 if v1 is None else v1

    def gen(g):
        return simulate_null_star(0.0, v1, n, g)

    def stat(y):
        s = select_trend(y, K)
        return s.pi_bic, s.pi_singleton

    spec = BootstrapSpec(gen, stat, B, seed, ("lower", "lower"))
    return run_bootstrap(spec, (selection.pi_bic, selection.pi_singleton), workers=workers)
