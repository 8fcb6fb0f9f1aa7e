"""Test statistics and decision rules.

pi-type statistics (``pi_bic``, ``pi_singleton_steps``) lie in ``(0, 1]`` and
reject when small; everything else rejects when large.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from pibic import kernels
from pibic.alternatives import NESTED, FamilyFit
from pibic.exceptions import DomainError, SaturationWarning, UsageError
from pibic.glm import Dataset, ExponentialFamily, FittedModel, get_family

EXP_CAP = 700.0

# tests whose statistic is a pi value (reject when small)
PI_TESTS = frozenset({"B_S", "B_N", "pi_bic", "pi_singleton", "lindley"})


@dataclass(frozen=True)
class ScoreVector:
    """Score coefficients ``alpha_hat_j`` with the null dispersion ``a(eta_hat_0)``."""

    alpha_hat: np.ndarray
    dispersion: float
    n: int

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.alpha_hat, dtype=float))
        if a.ndim != 1 or a.size < 1:
            raise DomainError("score vector needs at least one coefficient")
        if not np.all(np.isfinite(a)):
            raise DomainError("score vector has non-finite entries")
        if not self.dispersion > 0:
            raise DomainError("dispersion must be positive")
        object.__setattr__(self, "alpha_hat", a)

    @property
    def K(self) -> int:
        return self.alpha_hat.size

    @property
    def standardized(self) -> np.ndarray:
        """``n alpha_hat_j^2 / a(eta_hat_0)``."""
        return self.n * self.alpha_hat**2 / self.dispersion


@dataclass(frozen=True)
class TestResult:
    """Outcome of one test, JSON-serializable."""

    __test__ = False  # not a pytest class

    statistic: str
    value: float
    reference_kind: str
    reference_value: float
    alpha: float
    reject: bool
    lindley_safe: bool = False
    seed_provenance: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _pi_from_log_terms(log_terms) -> float:
    log_terms = np.asarray(log_terms, dtype=float)
    if np.any(log_terms > EXP_CAP):
        warnings.warn("pi statistic saturated: exponent above cap, returning 0", SaturationWarning,
                      stacklevel=3)
        return 0.0
    lt = float(logsumexp(log_terms))
    # 1 / (1 + e^lt) without overflow
    return float(np.exp(-np.logaddexp(0.0, lt)))


def pi_bic_from_lr(lr, extra_dims, n: int) -> float:
    """``{1 + sum_j n^{-(m_j - m_0)/2} exp(L_j / 2)}^{-1}``."""
    if n < 2:
        raise DomainError("pi_bic needs n >= 2")
    lr = np.asarray(lr, dtype=float)
    d = np.asarray(extra_dims, dtype=float)
    if not np.all(np.isfinite(lr)):
        raise DomainError("likelihood ratios must be finite")
    return _pi_from_log_terms(0.5 * lr - 0.5 * d * math.log(n))


def pi_bic(fit: FamilyFit) -> float:
    """BIC approximation to the posterior probability of the null model."""
    return pi_bic_from_lr(fit.lr, fit.extra_dims, fit.n)


def pi_singleton_from_lr(lr, n: int) -> float:
    """``{1 + sum_j exp[(L_j - L_{j-1})/2 - log(n)/2]}^{-1}`` with ``L_0 = 0``."""
    if n < 2:
        raise DomainError("pi statistic needs n >= 2")
    lr = np.asarray(lr, dtype=float)
    if not np.all(np.isfinite(lr)):
        raise DomainError("likelihood ratios must be finite")
    steps = np.diff(np.concatenate([[0.0], lr]))
    return _pi_from_log_terms(0.5 * steps - 0.5 * math.log(n))


def pi_singleton_steps(fit: FamilyFit) -> float:
    """pi statistic built from the stepwise ratios of a nested ladder."""
    if fit.family.kind != NESTED:
        raise UsageError("pi_singleton_steps needs a nested family")
    return pi_singleton_from_lr(fit.lr, fit.n)


def score_vector(data: Dataset, null_fit: FittedModel, system, family: ExponentialFamily | None = None) -> ScoreVector:
    """``alpha_hat_j = (1/n) sum_i [Y_i - b'(g(x_i; theta_hat_0))] v_j(x_i)``."""
    family = family or get_family(null_fit.family)
    V = np.asarray(system.values, dtype=float)
    if V.shape[0] != data.n or null_fit.linear_predictor.shape[0] != data.n:
        raise UsageError("score vector inputs have mismatched lengths")
    resid = data.response - family.b1(null_fit.linear_predictor)
    return ScoreVector(resid @ V / data.n, null_fit.dispersion, data.n)


def s_n(score: ScoreVector) -> float:
    """``sum_j exp(n alpha_hat_j^2 / (2 a))``; per-term exponents capped at 700."""
    e = 0.5 * score.standardized
    if np.any(e > EXP_CAP):
        warnings.warn("S_n saturated: exponent capped at 700", SaturationWarning, stacklevel=2)
        e = np.minimum(e, EXP_CAP)
    return float(np.sum(np.exp(e)))


def r_n(score: ScoreVector) -> float:
    """``max_j n alpha_hat_j^2 / a``."""
    return float(np.max(score.standardized))


def max_test_offset(K: int) -> float:
    """``2 log K - log log K - log pi``: subtracted from a max of chi-square(1) statistics."""
    if K < 2:
        raise DomainError("max test needs K >= 2")
    return 2.0 * math.log(K) - math.log(math.log(K)) - math.log(math.pi)


def max_test_ms(fit, K: int | None = None) -> float:
    """``max_j L_j - 2 log K + log log K + log pi`` over singleton ratios.

    ``fit`` is a :class:`FamilyFit` or a sequence of likelihood ratios.
    """
    lr = np.asarray(fit.lr if isinstance(fit, FamilyFit) else fit, dtype=float)
    K = lr.size if K is None else K
    return float(np.max(lr)) - max_test_offset(K)


@lru_cache(maxsize=32)
def fourier_matrix(n: int) -> np.ndarray:
    """Orthonormal DFT columns ordered cos 1, sin 1, cos 2, sin 2, ...

    ``n - 1`` columns; the Nyquist sine (even ``n``) is identically zero and
    dropped, the Nyquist cosine is rescaled to unit norm.
    """
    i = np.arange(1, n + 1)
    cols = []
    for k in range(1, n // 2 + 1):
        c = np.sqrt(2.0 / n) * np.cos(2.0 * np.pi * k * i / n)
        if 2 * k == n:
            cols.append(c / np.sqrt(2.0))
        else:
            cols.append(c)
            cols.append(np.sqrt(2.0 / n) * np.sin(2.0 * np.pi * k * i / n))
    F = np.stack(cols, axis=1)
    F.setflags(write=False)
    return F


def rice_variance(residuals) -> np.ndarray | float:
    """Difference-based variance ``sum (r_{i+1} - r_i)^2 / (2(n - 1))`` along the last axis."""
    r = np.asarray(residuals, dtype=float)
    d = np.diff(r, axis=-1)
    return np.sum(d * d, axis=-1) / (2.0 * (r.shape[-1] - 1))


def neyman_normalize(tstar, n: int):
    """Double-log normalization of the running maximum, limit law ``exp(-exp(-x))``."""
    ll = math.log(math.log(n))
    return math.sqrt(2.0 * ll) * np.asarray(tstar) - (2.0 * ll + 0.5 * math.log(ll) - 0.5 * math.log(4.0 * math.pi))


def adaptive_neyman(residuals, variance="rice", return_order: bool = False):
    """Adaptive Neyman statistic of residuals in design order.

    Parameters
    ----------
    residuals : array (n,) or (R, n)
        Null-fit residuals; a 2-D array is processed row by row.
    variance : {"rice", "mle"} or float
        How the Fourier coefficients are standardized: the difference-based
        estimate, the residual mean square, or a known value.
    return_order : bool
        Also return the maximizing number of terms.
    """
    r = np.asarray(residuals, dtype=float)
    one = r.ndim == 1
    r2 = r[None, :] if one else r
    n = r2.shape[1]
    if n < 8:
        raise DomainError("adaptive Neyman test needs n >= 8")
    if isinstance(variance, str):
        if variance == "rice":
            s2 = rice_variance(r2)
        elif variance == "mle":
            s2 = np.mean(r2 * r2, axis=1)
        else:
            raise UsageError(f"unknown variance estimate {variance!r}")
    else:
        s2 = np.full(r2.shape[0], float(variance))
    s2 = np.asarray(s2, dtype=float)
    if np.any(~(s2 > 0)):
        raise DomainError("residual variance estimate is zero")
    z = (r2 @ fourier_matrix(n)) / np.sqrt(s2)[:, None]
    tstar, order = kernels.running_neyman(z)
    stat = neyman_normalize(tstar, n)
    if one:
        stat, order = float(stat[0]), int(order[0])
    return (stat, order) if return_order else stat


def decide(statistic: str, value: float, reference, alpha: float | None = None,
           lindley_safe: bool = False, K: int | None = None, n: int | None = None) -> TestResult:
    """Compare a statistic with a critical-value entry or a bootstrap result.

    Parameters
    ----------
    statistic : str
        Test name, e.g. ``"B_S"``, ``"L_a"``, ``"M_S"``.
    reference : CriticalValueTable or BootstrapResult
        A table entry provides ``threshold`` on the statistic's own scale;
        a bootstrap result provides ``p_value``.
    lindley_safe : bool
        Cap the pi threshold at 1/2.

    Raises
    ------
    UsageError
        The reference was built for a different test, level, K or n.
    """
    pi_type = statistic in PI_TESTS
    if hasattr(reference, "p_value"):
        if alpha is None:
            raise UsageError("bootstrap decisions need alpha")
        p = float(reference.p_value)
        return TestResult(statistic, float(value), "bootstrap", p, float(alpha), p <= alpha,
                          False, getattr(reference, "provenance", None))
    if reference.test != statistic:
        raise UsageError(f"reference is for {reference.test!r}, not {statistic!r}")
    if alpha is not None and not math.isclose(alpha, reference.alpha):
        raise UsageError(f"reference level {reference.alpha} differs from alpha {alpha}")
    for name, want in (("K", K), ("n", n)):
        have = getattr(reference, name)
        if want is not None and have is not None and have != want:
            raise UsageError(f"reference {name}={have} differs from {want}")
    thr = float(reference.threshold)
    if pi_type:
        if lindley_safe:
            thr = min(0.5, thr)
        reject = value <= thr
    else:
        reject = value >= thr
    return TestResult(statistic, float(value), reference.kind, thr, float(reference.alpha),
                      bool(reject), bool(lindley_safe and pi_type), reference.provenance)
