"""Exponential-family likelihoods and maximum likelihood by IRLS.

Only canonical links are supported: the linear predictor ``g(x)`` is the
natural parameter, so the log-likelihood is

    sum_i [Y_i g(x_i) - b(g(x_i))] / a(eta) + c(Y_i, eta).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import optimize, special

from pibic.exceptions import ConvergenceError, DesignError, DomainError, NestingError

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ExponentialFamily:
    """A canonical-link exponential family.

    Attributes
    ----------
    name : str
    b, b1, b2, b3 : callable
        Cumulant function and its first three derivatives.
    dispersion : callable
        ``eta -> a(eta)``, must be positive on the admissible range.
    base_measure : callable
        ``(y, eta) -> c(y, eta)``, elementwise.
    link : callable
        Canonical link, the inverse of ``b1``.
    estimates_dispersion : bool
        Whether the family has a free dispersion parameter.
    valid_response : callable
        ``y -> bool`` admissibility check for the whole response vector.
    dispersion_mle : callable or None
        Closed-form ``(y, g) -> eta_hat``; numerical maximization otherwise.
    initial_mean : callable
        Starting fitted means for IRLS.
    """

    name: str
    b: ArrayFn
    b1: ArrayFn
    b2: ArrayFn
    b3: ArrayFn
    dispersion: Callable[[float], float]
    base_measure: Callable[[np.ndarray, float], np.ndarray]
    link: ArrayFn
    estimates_dispersion: bool = False
    valid_response: Callable[[np.ndarray], bool] = lambda y: bool(np.all(np.isfinite(y)))
    dispersion_mle: Callable[[np.ndarray, np.ndarray], float] | None = None
    initial_mean: ArrayFn = lambda y: y + 0.0
    dispersion_bounds: tuple[float, float] = (1e-12, 1e12)

    def variance_weights(self, g: np.ndarray) -> np.ndarray:
        """IRLS weights ``b''(g)``."""
        return np.asarray(self.b2(g), dtype=float)


def _gauss_c(y, eta):
    return -0.5 * y * y / eta - 0.5 * np.log(2.0 * np.pi * eta)


GAUSSIAN = ExponentialFamily(
    name="gaussian",
    b=lambda t: 0.5 * np.asarray(t) ** 2,
    b1=lambda t: np.asarray(t, dtype=float),
    b2=lambda t: np.ones_like(np.asarray(t, dtype=float)),
    b3=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
    dispersion=lambda eta: float(eta),
    base_measure=_gauss_c,
    link=lambda mu: np.asarray(mu, dtype=float),
    estimates_dispersion=True,
    dispersion_mle=lambda y, g: float(np.mean((y - g) ** 2)),
)

POISSON = ExponentialFamily(
    name="poisson",
    b=lambda t: np.exp(t),
    b1=lambda t: np.exp(t),
    b2=lambda t: np.exp(t),
    b3=lambda t: np.exp(t),
    dispersion=lambda eta: 1.0,
    base_measure=lambda y, eta: -special.gammaln(np.asarray(y, dtype=float) + 1.0),
    link=lambda mu: np.log(mu),
    valid_response=lambda y: bool(np.all(y >= 0) and np.all(np.floor(y) == y)),
    initial_mean=lambda y: y + 0.5,
)


def _expit(t):
    return special.expit(t)


BERNOULLI = ExponentialFamily(
    name="bernoulli",
    b=lambda t: np.logaddexp(0.0, t),
    b1=_expit,
    b2=lambda t: _expit(t) * (1.0 - _expit(t)),
    b3=lambda t: _expit(t) * (1.0 - _expit(t)) * (1.0 - 2.0 * _expit(t)),
    dispersion=lambda eta: 1.0,
    base_measure=lambda y, eta: np.zeros_like(np.asarray(y, dtype=float)),
    link=lambda mu: special.logit(mu),
    valid_response=lambda y: bool(np.all((y == 0) | (y == 1))),
    initial_mean=lambda y: (y + 0.5) / 2.0,
)

FAMILIES = {f.name: f for f in (GAUSSIAN, POISSON, BERNOULLI)}


def get_family(name: str) -> ExponentialFamily:
    try:
        return FAMILIES[name.lower()]
    except KeyError:
        raise DomainError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}") from None


@dataclass(frozen=True)
class Dataset:
    """Covariates ``design`` (n x d) and scalar responses."""

    design: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.design, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.response, dtype=float).ravel()
        if x.shape[0] != y.shape[0]:
            raise DomainError(f"design has {x.shape[0]} rows but {y.shape[0]} responses")
        if y.shape[0] < 1:
            raise DomainError("dataset is empty")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DomainError("dataset contains non-finite values")
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "response", y)

    @property
    def n(self) -> int:
        return self.response.shape[0]

    @property
    def x(self) -> np.ndarray:
        """First covariate column."""
        return self.design[:, 0]

    def with_response(self, y) -> "Dataset":
        return Dataset(self.design, y)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        """Read a CSV with columns ``x1..xd`` and ``y``."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            xcols = sorted(
                (c for c in header if c.startswith("x") and c[1:].isdigit()),
                key=lambda c: int(c[1:]),
            )
            if "y" not in header or not xcols:
                raise DomainError(f"{path}: need columns x1..xd and y, got {header}")
            rows = list(reader)
        x = np.array([[float(r[c]) for c in xcols] for r in rows])
        y = np.array([float(r["y"]) for r in rows])
        return cls(x, y)

    def to_csv(self, path) -> None:
        d = self.design.shape[1]
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k + 1}" for k in range(d)] + ["y"])
            for row, yi in zip(self.design, self.response):
                w.writerow([repr(float(v)) for v in row] + [repr(float(yi))])


@dataclass(frozen=True)
class NullSpec:
    """Null mean model: the functions gamma_1..gamma_p evaluated on the design."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        check_full_rank(g, "null basis")
        object.__setattr__(self, "gamma", g)

    @property
    def p(self) -> int:
        return self.gamma.shape[1]

    @classmethod
    def constant(cls, n: int) -> "NullSpec":
        return cls(np.ones((n, 1)))

    @classmethod
    def polynomial(cls, x, degree: int) -> "NullSpec":
        x = np.asarray(x, dtype=float)
        return cls(np.vander(x, degree + 1, increasing=True))


@dataclass(frozen=True)
class FittedModel:
    """Result of :func:`fit_mle`."""

    coefficients: np.ndarray
    eta: float
    dispersion: float
    max_loglik: float
    dimension: int
    converged: bool
    iterations: int
    linear_predictor: np.ndarray = field(repr=False)
    family: str = "gaussian"


def check_full_rank(M: np.ndarray, what: str = "basis", rtol: float = 1e-10) -> None:
    """Raise :class:`DesignError` naming the first dependent column of ``M``."""
    M = np.asarray(M, dtype=float)
    if M.shape[1] > M.shape[0]:
        raise DesignError(f"{what} has more columns ({M.shape[1]}) than rows ({M.shape[0]})",
                          column=M.shape[0])
    norms = np.linalg.norm(M, axis=0)
    scale = max(norms.max(initial=0.0), 1.0)
    Q = np.zeros((M.shape[0], 0))
    for j in range(M.shape[1]):
        v = M[:, j].copy()
        for _ in range(2):
            v -= Q @ (Q.T @ v)
        nv = np.linalg.norm(v)
        if nv <= rtol * max(norms[j], 1e-300) or nv <= rtol * scale * 1e-3:
            raise DesignError(f"{what} is rank deficient at column {j}", column=j)
        Q = np.column_stack([Q, v / nv])


def log_likelihood(family: ExponentialFamily, linear_predictor, dispersion: float, data: Dataset) -> float:
    """Exponential-family log-likelihood at the given linear predictor and ``eta``."""
    g = np.asarray(linear_predictor, dtype=float)
    if g.shape == ():
        g = np.full(data.n, float(g))
    a = family.dispersion(dispersion)
    if not a > 0:
        raise DomainError(f"dispersion a(eta) = {a} is not positive")
    with np.errstate(over="ignore", invalid="ignore"):
        bg = family.b(g)
    bad = ~np.isfinite(bg) | ~np.isfinite(g)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"cumulant undefined at observation {i} (predictor {g[i]!r})")
    y = data.response
    return float(np.sum((y * g - bg) / a + family.base_measure(y, dispersion)))


def _wls(X, z, w):
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
    return beta


def _profile_dispersion(family, data, g):
    if family.dispersion_mle is not None:
        return family.dispersion_mle(data.response, g)
    lo, hi = family.dispersion_bounds
    res = optimize.minimize_scalar(
        lambda le: -log_likelihood(family, g, float(np.exp(le)), data),
        bounds=(np.log(lo), np.log(hi)), method="bounded",
    )
    return float(np.exp(res.x))


def fit_mle(
    family: ExponentialFamily,
    basis,
    data: Dataset,
    estimate_dispersion: bool | None = None,
    dispersion: float = 1.0,
    max_iter: int = 100,
    tol: float = 1e-10,
) -> FittedModel:
    """Maximum likelihood fit of ``g = basis @ coefficients`` by IRLS.

    Parameters
    ----------
    basis : array (n, m)
        All mean-model terms evaluated on the design.
    estimate_dispersion : bool, optional
        Profile the dispersion parameter by maximum likelihood. Defaults to
        ``family.estimates_dispersion``. When false, ``dispersion`` is used as
        the known ``eta``.

    Raises
    ------
    DesignError
        The basis is rank deficient.
    ConvergenceError
        Relative deviance change did not fall below ``tol`` in ``max_iter`` steps.
    """
    X = np.asarray(basis, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != data.n:
        raise DesignError(f"basis has {X.shape[0]} rows, dataset has {data.n}")
    check_full_rank(X)
    if not family.valid_response(data.response):
        raise DomainError(f"responses are not admissible for the {family.name} family")
    if estimate_dispersion is None:
        estimate_dispersion = family.estimates_dispersion
    y = data.response

    def dev(g):
        with np.errstate(over="ignore"):
            return -2.0 * float(np.sum(y * g - family.b(g)))

    g = family.link(family.initial_mean(y))
    w = family.b2(g)
    beta = _wls(X, g + (y - family.b1(g)) / w, w)
    g = X @ beta
    d_old = dev(g)
    converged = False
    it = 1
    for it in range(2, max_iter + 1):
        w = family.b2(g)
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            break
        new_beta = _wls(X, g + (y - family.b1(g)) / w, w)
        new_g = X @ new_beta
        d = dev(new_g)
        halvings = 0
        while (not np.isfinite(d) or d > d_old + 1e-12 * abs(d_old)) and halvings < 30:
            new_beta = 0.5 * (new_beta + beta)
            new_g = X @ new_beta
            d = dev(new_g)
            halvings += 1
        beta, g = new_beta, new_g
        if abs(d - d_old) / (abs(d) + 0.1) < tol:
            converged = True
            d_old = d
            break
        d_old = d
    if not converged:
        raise ConvergenceError(
            f"IRLS did not converge in {max_iter} iterations (deviance {d_old!r})",
            deviance=d_old,
        )
    eta = _profile_dispersion(family, data, g) if estimate_dispersion else float(dispersion)
    if estimate_dispersion and not eta > 0:
        raise DomainError("dispersion MLE is zero: the mean model interpolates the data")
    ll = log_likelihood(family, g, eta, data)
    return FittedModel(
        coefficients=beta,
        eta=float(eta),
        dispersion=float(family.dispersion(eta)),
        max_loglik=ll,
        dimension=X.shape[1] + int(bool(estimate_dispersion)),
        converged=True,
        iterations=it,
        linear_predictor=g,
        family=family.name,
    )


def likelihood_ratio(null_fit: FittedModel, alt_fit: FittedModel, tol: float = 1e-6) -> float:
    """``2 (max_loglik_alt - max_loglik_null)`` for nested models."""
    lr = 2.0 * (alt_fit.max_loglik - null_fit.max_loglik)
    if lr < -tol:
        raise NestingError(f"likelihood ratio {lr:.3g} < 0: alternative does not nest the null")
    return lr


def explicit_lr(family: ExponentialFamily, data: Dataset, null_fit: FittedModel, alt_fit: FittedModel) -> float:
    """Likelihood ratio written through the scaled predictors ``g / a(eta_hat)``.

    Agrees with :func:`likelihood_ratio` for families with unit dispersion.
    """
    d0 = null_fit.linear_predictor / null_fit.dispersion
    d1 = alt_fit.linear_predictor / alt_fit.dispersion
    y = data.response
    return float(2.0 * np.sum(y * (d1 - d0) - (family.b(d1) - family.b(d0))))
