"""Limiting null laws: simulation, quantiles, stable constants, critical values.

Every law is a functional of i.i.d. chi-square(1) draws ``V_j`` (squared
standard normals). Replicates are generated in fixed-size blocks, block ``b``
drawing from its own counter-based stream, so a sample depends only on
``(law, reps, seed)`` and never on the number of workers.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate, stats

from pibic import kernels, rng
from pibic.exceptions import DomainError, NumericError, UsageError
from pibic.statistics import PI_TESTS, max_test_offset, neyman_normalize

BLOCK = 8192
DEFAULT_SEED = 20040601
CACHE_ENV = "PIBIC_CACHE_DIR"


class LawKind(str, enum.Enum):
    SINGLETON_POSTERIOR = "SINGLETON_POSTERIOR"  # sqrt(n)(1 - pi) over K singletons
    NESTED_POSTERIOR = "NESTED_POSTERIOR"        # sqrt(n)(1 - pi) over the nested ladder
    EXP_CHI2_SUM = "EXP_CHI2_SUM"                # sum of exp(V_j / 2), V_j ~ chi2(extra_dim)
    ORDER_SEL_AIC = "ORDER_SEL_AIC"              # W at the AIC-selected order
    ORDER_SEL_BIC = "ORDER_SEL_BIC"              # W at the BIC-selected order
    GUMBEL_HALF = "GUMBEL_HALF"                  # exp(-exp(-x/2))
    STABLE_S1 = "STABLE_S1"                      # totally skewed 1-stable
    LINDLEY_POSTERIOR = "LINDLEY_POSTERIOR"      # 1 / (1 + n^{-1/2} sum exp(V_j / 2))
    MAX_CHI2 = "MAX_CHI2"                        # max V_j - 2 log K + log log K + log pi
    NORMALIZED_SUM = "NORMALIZED_SUM"            # (sum exp(V_j / 2) - b_K) / a_K
    ADAPTIVE_NEYMAN = "ADAPTIVE_NEYMAN"          # normalized running maximum on n - 1 N(0,1) coefficients


_NEEDS_K = {LawKind.SINGLETON_POSTERIOR, LawKind.NESTED_POSTERIOR, LawKind.ORDER_SEL_AIC, LawKind.ORDER_SEL_BIC,
            LawKind.LINDLEY_POSTERIOR, LawKind.MAX_CHI2, LawKind.NORMALIZED_SUM}
_NEEDS_N = {LawKind.SINGLETON_POSTERIOR, LawKind.NESTED_POSTERIOR, LawKind.ORDER_SEL_BIC, LawKind.LINDLEY_POSTERIOR,
            LawKind.ADAPTIVE_NEYMAN}
_VARIANTS = {
    LawKind.NESTED_POSTERIOR: ("independent", "cumulative"),
    LawKind.ORDER_SEL_AIC: ("positive", "with-zero"),
}


@dataclass(frozen=True)
class LimitLaw:
    """A limiting law and its parameters.

    Attributes
    ----------
    kind : LawKind
    K : int, optional
        Number of alternative models.
    n : int, optional
        Sample size for the finite-sample corrected forms.
    extra_dim : int
        ``m - m_0`` for :attr:`LawKind.EXP_CHI2_SUM`.
    m_tilde : int, optional
        Number of smallest models for :attr:`LawKind.EXP_CHI2_SUM`.
    variant : str, optional
        ``NESTED_POSTERIOR``: ``"independent"`` (default) draws each level's
        chi-square(j) afresh, ``"cumulative"`` uses partial sums of one
        sequence. ``ORDER_SEL_AIC``: ``"positive"`` (default) searches orders
        ``1..K``, ``"with-zero"`` includes order 0.
    """

    kind: LawKind
    K: int | None = None
    n: int | None = None
    extra_dim: int = 1
    m_tilde: int | None = None
    variant: str | None = None

    def __post_init__(self):
        kind = LawKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in _NEEDS_K and (self.K is None or self.K < 1):
            raise DomainError(f"{kind.value} needs K >= 1")
        if kind in (LawKind.MAX_CHI2, LawKind.NORMALIZED_SUM) and self.K < 2:
            raise DomainError(f"{kind.value} needs K >= 2")
        if kind in _NEEDS_N and (self.n is None or self.n < 2):
            raise DomainError(f"{kind.value} needs n >= 2")
        if kind == LawKind.ADAPTIVE_NEYMAN and self.n < 8:
            raise DomainError("ADAPTIVE_NEYMAN needs n >= 8")
        if kind == LawKind.EXP_CHI2_SUM:
            if self.m_tilde is None:
                object.__setattr__(self, "m_tilde", self.K if self.K is not None else 1)
            if self.m_tilde < 1 or self.extra_dim < 1:
                raise DomainError("EXP_CHI2_SUM needs m_tilde >= 1 and extra_dim >= 1")
        allowed = _VARIANTS.get(kind, ())
        if self.variant is None:
            object.__setattr__(self, "variant", allowed[0] if allowed else None)
        elif self.variant not in allowed:
            raise DomainError(f"{kind.value} has no variant {self.variant!r}")

    @property
    def label(self) -> str:
        return self.kind.value + (f"-{self.variant}" if self.variant and self.variant != _VARIANTS[self.kind][0] else "")


# ---------------------------------------------------------------- functionals

def cms_stable(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Chambers-Mallows-Stuck transform for the index-1, skewness-1 stable law.

    ``u`` uniform on ``(-pi/2, pi/2)``, ``w`` standard exponential.
    """
    h = 0.5 * np.pi + u
    return (2.0 / np.pi) * (h * np.tan(u) - np.log((0.5 * np.pi * w * np.cos(u)) / h))


def _chi2_rows(g: np.random.Generator, size: int, k: int, df: int = 1) -> np.ndarray:
    z = g.standard_normal((size, k * df))
    v = z * z
    if df > 1:
        v = v.reshape(size, k, df).sum(axis=2)
    return v


def _independent_levels(g, size, K):
    # W_j ~ chi2(j) independently across j
    sizes = np.arange(1, K + 1)
    ends = np.cumsum(sizes)
    z = g.standard_normal((size, int(ends[-1])))
    c = np.cumsum(z * z, axis=1)
    starts = ends - sizes
    prev = np.where(starts > 0, c[:, np.maximum(starts - 1, 0)], 0.0)
    return c[:, ends - 1] - prev


def _block(law: LimitLaw, g: np.random.Generator, size: int) -> np.ndarray:
    k = law.kind
    if k == LawKind.GUMBEL_HALF:
        return -2.0 * np.log(-np.log(g.uniform(size=size)))
    if k == LawKind.STABLE_S1:
        return cms_stable(g.uniform(-0.5 * np.pi, 0.5 * np.pi, size), g.standard_exponential(size))
    if k == LawKind.ADAPTIVE_NEYMAN:
        tstar, _ = kernels.running_neyman(g.standard_normal((size, law.n - 1)))
        return neyman_normalize(tstar, law.n)
    if k == LawKind.EXP_CHI2_SUM:
        V = _chi2_rows(g, size, law.m_tilde, law.extra_dim)
        return np.exp(kernels.log_exp_half_rowsum(V))
    if k == LawKind.NESTED_POSTERIOR:
        W = _independent_levels(g, size, law.K) if law.variant == "independent" \
            else np.cumsum(_chi2_rows(g, size, law.K), axis=1)
        logT = kernels.nested_log_terms(W, math.log(law.n))
        return math.sqrt(law.n) * np.exp(-np.logaddexp(0.0, -logT))
    V = _chi2_rows(g, size, law.K)
    if k in (LawKind.SINGLETON_POSTERIOR, LawKind.LINDLEY_POSTERIOR):
        logE = kernels.log_exp_half_rowsum(V)
        # E / (1 + E / sqrt n) and 1 / (1 + E / sqrt n) in log-safe form
        t = np.logaddexp(0.0, logE - 0.5 * math.log(law.n))
        return np.exp(logE - t) if k == LawKind.SINGLETON_POSTERIOR else np.exp(-t)
    if k == LawKind.ORDER_SEL_AIC:
        W = np.cumsum(V, axis=1)
        return kernels.order_select(W, 2.0, 1 if law.variant == "positive" else 0)[1]
    if k == LawKind.ORDER_SEL_BIC:
        W = np.cumsum(V, axis=1)
        return kernels.order_select(W, math.log(law.n), 1)[1]
    if k == LawKind.MAX_CHI2:
        return V.max(axis=1) - max_test_offset(law.K)
    if k == LawKind.NORMALIZED_SUM:
        p = stable_constants(law.K)
        return (np.exp(kernels.log_exp_half_rowsum(V)) - p.b_K) / p.a_K
    raise DomainError(f"no functional for {k}")  # pragma: no cover


# ------------------------------------------------------------------ sampling

def upper_quantile(sorted_x: np.ndarray, alpha: float) -> float:
    """``(1 - alpha)`` quantile: order statistic ``ceil(R (1 - alpha))``."""
    R = sorted_x.shape[0]
    k = math.ceil(R * (1.0 - alpha) - 1e-9)
    if k < 1:
        return -math.inf
    if k > R:
        return math.inf
    return float(sorted_x[k - 1])


def lower_quantile(sorted_x: np.ndarray, alpha: float) -> float:
    """``alpha`` quantile: order statistic ``ceil(R alpha)``."""
    R = sorted_x.shape[0]
    k = math.ceil(R * alpha - 1e-9)
    if k < 1:
        return -math.inf
    if k > R:
        return math.inf
    return float(sorted_x[k - 1])


def quantile_stderr(sorted_x: np.ndarray, prob: float) -> float:
    """Standard error of the ``prob`` quantile from a binomial order-statistic band."""
    R = sorted_x.shape[0]
    sd = math.sqrt(R * prob * (1.0 - prob))
    lo = min(max(int(math.floor(R * prob - sd)) - 1, 0), R - 1)
    hi = min(max(int(math.ceil(R * prob + sd)) - 1, 0), R - 1)
    se = 0.5 * (sorted_x[hi] - sorted_x[lo])
    if not np.isfinite(se):
        return math.inf
    return max(float(se), np.finfo(float).eps * max(1.0, abs(float(sorted_x[(lo + hi) // 2]))))


@dataclass(frozen=True)
class LawSample:
    """Simulated replicates of a law (in replicate order) with quantile helpers."""

    law: LimitLaw
    values: np.ndarray = field(repr=False)
    seed: int
    sorted: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sorted", np.sort(self.values))

    @property
    def reps(self) -> int:
        return self.values.shape[0]

    def quantile(self, alpha: float, tail: str = "upper") -> float:
        s = self.sorted
        return upper_quantile(s, alpha) if tail == "upper" else lower_quantile(s, alpha)

    def stderr(self, alpha: float, tail: str = "upper") -> float:
        return quantile_stderr(self.sorted, 1.0 - alpha if tail == "upper" else alpha)

    def cdf(self, x) -> np.ndarray:
        return np.searchsorted(self.sorted, np.asarray(x, dtype=float), side="right") / self.reps


def simulate_law(law: LimitLaw, reps: int, seed: int = DEFAULT_SEED, workers: int = 1,
                 min_reps: int = 1000) -> LawSample:
    """Draw ``reps`` replicates of ``law``.

    The result is bit-identical for any ``workers``.
    """
    if reps < min_reps:
        raise DomainError(f"reps must be at least {min_reps}")
    out = np.empty(reps)
    slices = list(rng.block_slices(reps, BLOCK))

    def run(sl):
        b, lo, hi = sl
        out[lo:hi] = _block(law, rng.stream(seed, b, rng.LAW), hi - lo)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(run, slices))
    else:
        for sl in slices:
            run(sl)
    return LawSample(law, out, seed)


@lru_cache(maxsize=64)
def _cached_sample(law: LimitLaw, reps: int, seed: int) -> LawSample:
    return simulate_law(law, reps, seed)


# ------------------------------------------------------- closed-form pieces

def gumbel_half_quantile(alpha: float) -> float:
    """``x_alpha = -2 log log(1/(1 - alpha))``, the upper quantile of ``exp(-exp(-x/2))``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    return -2.0 * math.log(-math.log1p(-alpha))


def gumbel_half_cdf(x):
    return np.exp(-np.exp(-0.5 * np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class StableLawParams:
    """Scale ``a_K`` and centering ``b_K`` for the normalized score sum."""

    K: int
    a_K: float
    b_K: float
    quad_error: float


def _sin_integral(a: float) -> tuple[float, float]:
    # int_1^inf sin(x/a) / (x^2 sqrt(log x)) dx, split at 2; x = 1 + s^2 removes the
    # 1/sqrt(log x) singularity, the tail uses QUADPACK's Fourier routine.
    def head(s):
        x = 1.0 + s * s
        return 2.0 * s * np.sin(x / a) / (x * x * np.sqrt(np.log1p(s * s))) if s > 0 else 2.0 * np.sin(1.0 / a)

    v1, e1 = integrate.quad(head, 0.0, 1.0, limit=200, epsabs=1e-13, epsrel=1e-12)
    v2, e2 = integrate.quad(lambda x: 1.0 / (x * x * np.sqrt(np.log(x))), 2.0, np.inf,
                            weight="sin", wvar=1.0 / a, limlst=100, epsabs=1e-13)
    return v1 + v2, e1 + e2


@lru_cache(maxsize=256)
def stable_constants(K: int, tol: float = 1e-8) -> StableLawParams:
    """``a_K = (sqrt(pi)/2) K / sqrt(log K)`` and
    ``b_K = (K a_K / sqrt(pi)) int_1^inf sin(x/a_K) / (x^2 sqrt(log x)) dx``.

    Raises
    ------
    NumericError
        Quadrature error estimate above ``tol`` (relative to the integral).
    """
    if K < 2:
        raise DomainError("stable constants need K >= 2")
    a = 0.5 * math.sqrt(math.pi) * K / math.sqrt(math.log(K))
    val, err = _sin_integral(a)
    if not err <= tol * max(abs(val), 1e-300):
        raise NumericError(f"b_K quadrature error {err:.3g} above tolerance", achieved=err)
    scale = K * a / math.sqrt(math.pi)
    return StableLawParams(K, a, scale * val, scale * err)


STABLE_DRAWS = 10**7
STABLE_SEED = 1


@lru_cache(maxsize=8)
def _stable_sorted(draws: int, seed: int) -> np.ndarray:
    return simulate_law(LimitLaw(LawKind.STABLE_S1), draws, seed).sorted


def stable_quantile(alpha: float, draws: int = STABLE_DRAWS, seed: int = STABLE_SEED) -> float:
    """``s_alpha``, the ``(1 - alpha)`` quantile of the index-1 totally skewed stable law."""
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    return upper_quantile(_stable_sorted(draws, seed), alpha)


def theoretical_local_power(gamma1: float, gamma2: float, zeta: float, alpha: float) -> float:
    """Limiting power of the score-sum test under the local alternatives."""
    if gamma2 < 0 or zeta <= 0:
        raise DomainError("need gamma2 >= 0 and zeta > 0")
    edge = gamma2 * zeta
    if math.isclose(edge, 1.0, rel_tol=1e-12, abs_tol=1e-12):
        return alpha + (1.0 - alpha) * float(stats.norm.cdf(gamma1 * zeta))
    return alpha if edge < 1.0 else 1.0


# ----------------------------------------------------------------- Lindley

LINDLEY_REPS = 10**6


@lru_cache(maxsize=32)
def _sum_sample_sorted(K: int, reps: int, seed: int) -> np.ndarray:
    return simulate_law(LimitLaw(LawKind.EXP_CHI2_SUM, K=K, m_tilde=K), reps, seed).sorted


def lindley_percentile(n: int, K: int, alpha: float = 0.05, reps: int = LINDLEY_REPS,
                       seed: int = DEFAULT_SEED) -> float:
    """Lower ``alpha`` quantile of ``1 / (1 + n^{-1/2} sum_{k<=K} exp(V_k / 2))``.

    Closed form for ``K = 1``. For ``K > 1`` the simulated sum is shared across
    ``n`` (same seed), so the result is strictly increasing in ``n``.
    """
    if n < 2 or K < 1:
        raise DomainError("need n >= 2 and K >= 1")
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    if K == 1:
        q = math.exp(0.5 * stats.chi2.isf(alpha, 1))
    else:
        E = _sum_sample_sorted(K, reps, seed)
        R = E.shape[0]
        k = math.ceil(R * alpha - 1e-9)
        q = float(E[R - k])
    return 1.0 / (1.0 + q / math.sqrt(n))


# ------------------------------------------------------- critical values

TEST_LAWS = {
    "B_S": LawKind.SINGLETON_POSTERIOR,
    "B_N": LawKind.NESTED_POSTERIOR,
    "L_a": LawKind.ORDER_SEL_AIC,
    "L_b": LawKind.ORDER_SEL_BIC,
    "M_S": LawKind.GUMBEL_HALF,
    "R_n": LawKind.GUMBEL_HALF,
    "S_n": LawKind.STABLE_S1,
    "N_A": LawKind.ADAPTIVE_NEYMAN,
    "lindley": LawKind.LINDLEY_POSTERIOR,
}


@dataclass(frozen=True)
class CriticalValueTable:
    """One critical value.

    ``quantile`` is on the law's scale (for pi-type tests the large-value form
    ``sqrt(n)(1 - pi)``); ``threshold`` is on the statistic's own scale.
    """

    test: str
    law: str
    K: int | None
    n: int | None
    alpha: float
    quantile: float
    threshold: float
    reps: int
    seed: int | None
    mc_stderr: float
    kind: str = "simulated"

    @property
    def provenance(self) -> str:
        if self.kind == "simulated":
            return f"{self.law} reps={self.reps} seed={self.seed}"
        return self.law


def _cache_path(cache_dir, label: str) -> Path | None:
    d = cache_dir if cache_dir is not None else os.environ.get(CACHE_ENV)
    if not d:
        return None
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p / f"{label}.csv"


_CACHE_COLS = ["K", "n", "alpha", "reps", "seed", "quantile", "mc_stderr"]


def _cache_lookup(path: Path, key: tuple):
    if path is None or not path.exists():
        return None
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rk = (row["K"], row["n"], repr(float(row["alpha"])), row["reps"], row["seed"])
            if rk == key:
                return float(row["quantile"]), float(row["mc_stderr"])
    return None


def _cache_store(path: Path, key: tuple, q: float, se: float) -> None:
    if path is None:
        return
    new = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(_CACHE_COLS)
        w.writerow([*key, repr(q), repr(se)])


def critical_value(test: str, K: int | None = None, n: int | None = None, alpha: float = 0.05,
                   reps: int = 30000, seed: int = DEFAULT_SEED, variant: str | None = None,
                   s_method: str = "stable", cache_dir=None) -> CriticalValueTable:
    """Critical value for a named test.

    Parameters
    ----------
    test : {"B_S", "B_N", "L_a", "L_b", "M_S", "R_n", "S_n", "N_A", "lindley"}
    variant : str, optional
        Law variant for ``B_N`` and ``L_a`` (see :class:`LimitLaw`).
    s_method : {"stable", "simulated"}
        ``S_n`` threshold from the stable limit ``b_K + a_K s_alpha`` or from
        the simulated finite-K law of ``sum exp(V_j / 2)``.
    cache_dir : path, optional
        CSV cache directory; defaults to ``$PIBIC_CACHE_DIR`` (no cache if unset).
    """
    if test not in TEST_LAWS:
        raise UsageError(f"unknown test {test!r}; choose from {sorted(TEST_LAWS)}")
    if not 0.0 <= alpha <= 1.0:
        raise DomainError("alpha must lie in [0, 1]")
    kind = TEST_LAWS[test]
    if test in ("M_S", "R_n"):
        if test == "R_n" and (K is None or K < 2):
            raise DomainError("R_n needs K >= 2")
        x = _edge_or(alpha, "upper", lambda: gumbel_half_quantile(alpha))
        thr = x + (max_test_offset(K) if test == "R_n" else 0.0)
        return CriticalValueTable(test, kind.value, K, n, alpha, x, thr, 0, None, 0.0, "asymptotic")
    if test == "S_n" and s_method == "stable":
        p = stable_constants(K)
        s = _edge_or(alpha, "upper", lambda: stable_quantile(alpha))
        return CriticalValueTable(test, kind.value, K, n, alpha, s, p.b_K + p.a_K * s, STABLE_DRAWS,
                                  STABLE_SEED, 0.0, "asymptotic")
    if test == "S_n":
        law = LimitLaw(LawKind.EXP_CHI2_SUM, K=K, m_tilde=K)
    elif kind == LawKind.ORDER_SEL_AIC:
        law = LimitLaw(kind, K=K, variant=variant)
    elif kind == LawKind.ADAPTIVE_NEYMAN:
        law = LimitLaw(kind, n=n)
    else:
        law = LimitLaw(kind, K=K, n=n, variant=variant)
    tail = "lower" if kind == LawKind.LINDLEY_POSTERIOR else "upper"
    path = _cache_path(cache_dir, law.label)
    key = (str(law.K), str(law.n), repr(float(alpha)), str(reps), str(seed))
    hit = _cache_lookup(path, key)
    if hit is None:
        sample = _cached_sample(law, reps, seed)
        q, se = sample.quantile(alpha, tail), sample.stderr(alpha, tail)
        if 0.0 < alpha < 1.0:
            _cache_store(path, key, q, se)
    else:
        q, se = hit
    if test in ("B_S", "B_N"):
        thr = 1.0 - q / math.sqrt(n)
    else:
        thr = q
    return CriticalValueTable(test, law.label, K, n, alpha, q, thr, reps, seed, se)


def _edge_or(alpha, tail, f):
    if alpha <= 0.0:
        return math.inf if tail == "upper" else -math.inf
    if alpha >= 1.0:
        return -math.inf if tail == "upper" else math.inf
    return f()


def is_pi_test(test: str) -> bool:
    return test in PI_TESTS
