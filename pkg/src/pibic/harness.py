"""Config-driven simulation studies on normal-response data with a constant null mean.

Data: ``x_i = (i - 1/2)/n``, ``Y_i = theta + mean_i + sqrt(eta) e_i``. Replicate
``i`` draws its noise from its own counter-based stream, so studies are
reproducible and independent of ``workers``.

The studies use a vectorized path for the Gaussian constant-null case:
with orthonormal directions ``V`` (orthogonal to the constant), the
dispersion-profiled likelihood ratios are ``n log(RSS_0 / RSS_j)`` with
``RSS_j = RSS_0 - n sum_{k in K_j} alpha_hat_k^2``.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from pibic import kernels, rng
from pibic.basis import cosine_design, equispaced_design, legendre_design, orthonormalize
from pibic.exceptions import ConfigError
from pibic.glm import Dataset, NullSpec
from pibic.null_dist import (
    DEFAULT_SEED,
    critical_value,
    lindley_percentile,
    stable_constants,
    upper_quantile,
)
from pibic.statistics import EXP_CAP, adaptive_neyman, max_test_offset

STUDY_TESTS = ("L_a", "L_b", "B_N", "B_S", "M_S", "N_A")
KNOWN_TESTS = STUDY_TESTS + ("S_n", "R_n")
COMPARATORS = ("oracle", "FM")
BLOCK = 500


# ------------------------------------------------------------ configuration

@dataclass(frozen=True)
class AlternativeSpec:
    """``null``, ``single`` (u_m), ``nested`` ((1/sqrt m) sum u_k) or ``local``.

    For ``local`` the mean shift is
    ``n^{-1/2} (gamma1 + gamma2 sqrt(2 log a_K)) sum_j phi_j v_j(x)``; when
    ``gamma2_per_zeta`` is set, ``gamma2 = gamma2_per_zeta / zeta`` with
    ``zeta = max |phi_j| / sqrt(eta)``.
    """

    kind: str = "null"
    m: int = 0
    gamma1: float = 0.0
    gamma2: float = 0.0
    gamma2_per_zeta: float | None = None
    phi: tuple[float, ...] = (1.0,)

    def __str__(self) -> str:
        if self.kind == "null":
            return "null"
        if self.kind in ("single", "nested"):
            return f"{self.kind}:{self.m}"
        g2 = f"{self.gamma2_per_zeta}/zeta" if self.gamma2_per_zeta is not None else f"{self.gamma2}"
        return f"local:{self.gamma1}:{g2}:" + ",".join(str(p) for p in self.phi)

    def zeta(self, eta: float) -> float:
        return max(abs(p) for p in self.phi) / math.sqrt(eta)

    def gamma2_value(self, eta: float) -> float:
        if self.gamma2_per_zeta is None:
            return self.gamma2
        return self.gamma2_per_zeta / self.zeta(eta)


def parse_alternative(text: str) -> AlternativeSpec:
    """Parse ``null``, ``single:M``, ``nested:M`` or ``local:G1:G2[:PHI1,PHI2,...]``.

    ``G2`` may be written ``C/zeta``.
    """
    parts = text.strip().split(":")
    kind = parts[0]
    try:
        if kind == "null" and len(parts) == 1:
            return AlternativeSpec()
        if kind in ("single", "nested") and len(parts) == 2:
            return AlternativeSpec(kind, int(parts[1]))
        if kind == "local" and len(parts) in (3, 4):
            g1 = float(parts[1])
            g2_text = parts[2].replace(" ", "")
            phi = tuple(float(p) for p in parts[3].split(",")) if len(parts) == 4 else (1.0,)
            if g2_text.endswith("/zeta"):
                return AlternativeSpec("local", len(phi), g1, 0.0, float(g2_text[:-5]), phi)
            return AlternativeSpec("local", len(phi), g1, float(g2_text), None, phi)
    except ValueError as exc:
        raise ConfigError(f"cannot parse alternative {text!r}: {exc}") from None
    raise ConfigError(f"cannot parse alternative {text!r}")


def _tuple_of(conv):
    def f(v):
        if isinstance(v, str):
            return tuple(conv(s) for s in v.replace(" ", "").split(",") if s)
        return tuple(conv(s) for s in v)
    return f


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for the simulation studies.

    Attributes
    ----------
    alt : str
        Alternative spec, see :func:`parse_alternative`.
    calibration : {"simulated", "asymptotic"}
        Power studies: critical points from a simulated null run, or from
        the limit laws (stable law for ``S_n``, half-Gumbel for ``R_n``/``M_S``,
        simulated limit laws for the rest).
    effect_size : float
        Amplitude multiplying the ``single``/``nested`` mean functions.
    an_variance : str
        Adaptive Neyman standardization (``rice`` or ``mle``).
    """

    n: int = 100
    K: int = 10
    reps: int = 5000
    alphas: tuple[float, ...] = (0.10, 0.05, 0.01)
    tests: tuple[str, ...] = STUDY_TESTS
    family: str = "gaussian"
    alt: str = "null"
    eta: float = 0.1
    theta: float = 0.0
    seed: int = 1
    out: str | None = None
    basis: str = "legendre"
    effect_size: float = 0.1
    null_reps: int = 5000
    crit_reps: int = 30000
    crit_seed: int = DEFAULT_SEED
    max_m: int | None = None
    calibration: str = "simulated"
    an_variance: str = "rice"
    workers: int = 1

    def __post_init__(self):
        if self.n < 10:
            raise ConfigError("n must be at least 10")
        if self.K < 1 or self.K >= self.n:
            raise ConfigError("need 1 <= K < n")
        if self.reps < 100:
            raise ConfigError("reps must be at least 100")
        if self.family != "gaussian":
            raise ConfigError("the simulation studies generate normal responses; family must be 'gaussian'")
        if self.eta < 0:
            raise ConfigError("eta must be non-negative")
        if self.basis not in ("legendre", "cosine"):
            raise ConfigError(f"unknown basis {self.basis!r}")
        if self.calibration not in ("simulated", "asymptotic"):
            raise ConfigError(f"unknown calibration {self.calibration!r}")
        bad = [t for t in self.tests if t not in KNOWN_TESTS]
        if bad:
            raise ConfigError(f"unknown tests {bad}; choose from {KNOWN_TESTS}")
        if any(not 0.0 <= a <= 1.0 for a in self.alphas):
            raise ConfigError("alpha levels must lie in [0, 1]")
        if ("M_S" in self.tests or "R_n" in self.tests) and self.K < 2:
            raise ConfigError("M_S and R_n need K >= 2")
        spec = self.alternative
        if spec.kind in ("single", "nested") and not 1 <= spec.m <= self.K:
            raise ConfigError(f"alternative order m={spec.m} must lie in 1..K={self.K}")
        if spec.kind == "local" and len(spec.phi) > self.K:
            raise ConfigError(f"local alternative uses {len(spec.phi)} directions but K={self.K}")
        if self.max_m is None:
            object.__setattr__(self, "max_m", min(10, self.K))
        if not 1 <= self.max_m <= self.K:
            raise ConfigError(f"max_m={self.max_m} must lie in 1..K={self.K}")

    @property
    def alternative(self) -> AlternativeSpec:
        return parse_alternative(self.alt)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        """Build from string-valued settings; unknown keys are errors."""
        conv = {
            "n": int, "K": int, "reps": int, "seed": int, "null_reps": int, "crit_reps": int,
            "crit_seed": int, "max_m": int, "workers": int,
            "eta": float, "theta": float, "effect_size": float,
            "alphas": _tuple_of(float), "tests": _tuple_of(str),
            "family": str, "alt": str, "out": str, "basis": str, "calibration": str, "an_variance": str,
        }
        unknown = sorted(set(mapping) - set(conv))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        kw = {}
        for k, v in mapping.items():
            if v is None:
                continue
            try:
                kw[k] = conv[k](v) if isinstance(v, str) or k in ("alphas", "tests") else v
            except ValueError as exc:
                raise ConfigError(f"bad value for {k}: {v!r}") from exc
        return cls(**kw)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        """Read ``key = value`` lines (``#`` starts a comment); ``overrides`` win."""
        mapping = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                k, v = (s.strip() for s in line.split("=", 1))
                mapping[k] = v
        mapping.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(mapping)


# ------------------------------------------------------------------- design

@dataclass(frozen=True)
class Design:
    x: np.ndarray
    raw: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)


@lru_cache(maxsize=16)
def design(n: int, K: int, basis: str = "legendre") -> Design:
    """Covariates, raw basis ``u_1..u_K`` and directions ``v_1..v_K`` orthonormal to the constant."""
    x = equispaced_design(n)
    raw = legendre_design(K, n) if basis == "legendre" else cosine_design(K, x)
    system = orthonormalize(raw, NullSpec.constant(n))
    return Design(x, raw.values, system.values)


def mean_function(config: ExperimentConfig, spec: AlternativeSpec | None = None) -> np.ndarray:
    spec = spec or config.alternative
    d = design(config.n, config.K, config.basis)
    mu = np.full(config.n, float(config.theta))
    if spec.kind == "single":
        mu += config.effect_size * d.raw[:, spec.m - 1]
    elif spec.kind == "nested":
        mu += config.effect_size * d.raw[:, : spec.m].sum(axis=1) / math.sqrt(spec.m)
    elif spec.kind == "local":
        a_K = stable_constants(config.K).a_K if config.K >= 2 else 1.0
        amp = (spec.gamma1 + spec.gamma2_value(config.eta) * math.sqrt(2.0 * math.log(a_K))) / math.sqrt(config.n)
        mu += amp * (d.V[:, : len(spec.phi)] @ np.asarray(spec.phi))
    return mu


def _noise(config, indices, tag):
    out = np.empty((len(indices), config.n))
    for r, i in enumerate(indices):
        out[r] = rng.stream(config.seed, int(i), tag).standard_normal(config.n)
    return out


def generate_data(config: ExperimentConfig, replicate_index: int, spec: AlternativeSpec | None = None,
                  tag: int = rng.DATA) -> Dataset:
    """Dataset for one replicate; deterministic in ``(seed, replicate_index)``."""
    y = mean_function(config, spec) + math.sqrt(config.eta) * _noise(config, [replicate_index], tag)[0]
    return Dataset(design(config.n, config.K, config.basis).x, y)


# ---------------------------------------------------------- vectorized path

def fast_statistics(Y: np.ndarray, V: np.ndarray, tests, an_variance="rice", oracle=None) -> dict:
    """Large-value forms of the statistics for each row of ``Y``.

    ``B_S``/``B_N`` are returned as ``sqrt(n)(1 - pi)``. ``oracle`` is
    ``("single"|"nested", m)`` to add the oracle likelihood ratio.
    """
    R, n = Y.shape
    K = V.shape[1]
    r = Y - Y.mean(axis=1, keepdims=True)
    rss0 = np.einsum("ij,ij->i", r, r)
    a = r @ V / n
    na2 = n * a * a
    out = {}
    with np.errstate(divide="ignore"):
        LN = n * np.log(rss0[:, None] / (rss0[:, None] - np.cumsum(na2, axis=1)))
        LS = n * np.log(rss0[:, None] / (rss0[:, None] - na2))
    logn = math.log(n)
    for t in tests:
        if t == "L_a":
            out[t] = kernels.order_select(LN, 2.0, 0)[1]
        elif t == "L_b":
            out[t] = kernels.order_select(LN, logn, 1)[1]
        elif t == "B_N":
            lt = kernels.nested_log_terms(LN, logn)
            out[t] = math.sqrt(n) * np.exp(-np.logaddexp(0.0, -lt))
        elif t == "B_S":
            lt = kernels.log_exp_half_rowsum(LS) - 0.5 * logn
            out[t] = math.sqrt(n) * np.exp(-np.logaddexp(0.0, -lt))
        elif t == "M_S":
            out[t] = LS.max(axis=1) - max_test_offset(K)
        elif t == "N_A":
            out[t] = adaptive_neyman(r, an_variance)
        elif t in ("S_n", "R_n"):
            std = na2 / (rss0 / n)[:, None]
            if t == "R_n":
                out[t] = std.max(axis=1)
            else:
                out[t] = np.exp(np.minimum(kernels.log_exp_half_rowsum(std), EXP_CAP))
        elif t == "FM":
            out[t] = LN[:, -1]
        elif t == "oracle":
            kind, m = oracle
            out[t] = (LS if kind == "single" else LN)[:, m - 1]
    return out


def _simulate_stats(config, spec, tests, reps, tag, oracle=None) -> dict:
    d = design(config.n, config.K, config.basis)
    mu = mean_function(config, spec)
    blocks = [range(lo, min(lo + BLOCK, reps)) for lo in range(0, reps, BLOCK)]

    def run(idx):
        Y = mu + math.sqrt(config.eta) * _noise(config, idx, tag)
        return fast_statistics(Y, d.V, tests, config.an_variance, oracle)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as ex:
            parts = list(ex.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    return {t: np.concatenate([p[t] for p in parts]) for t in tests}


def asymptotic_threshold(test: str, config: ExperimentConfig, alpha: float) -> float:
    """Critical point on the large-value scale from the limit laws."""
    if test == "S_n":
        return critical_value("S_n", config.K, config.n, alpha).threshold
    if test in ("M_S", "R_n"):
        return critical_value(test, config.K, config.n, alpha).threshold
    return critical_value(test, config.K, config.n, alpha, reps=config.crit_reps,
                          seed=config.crit_seed).quantile


# ------------------------------------------------------------------ studies

@dataclass(frozen=True)
class Type1Result:
    """Rejection rates ``rates[test][alpha]`` and the critical points used."""

    rates: dict
    critical: dict
    reps: int

    def rows(self):
        for t, by in self.rates.items():
            yield {"test": t, **{f"alpha={a}": by[a] for a in by}}


def run_type1_study(config: ExperimentConfig) -> Type1Result:
    """Null rejection rates of each configured test against its limit-law critical points."""
    if config.alternative.kind != "null":
        raise ConfigError("type I study needs alt = null")
    stats_ = _simulate_stats(config, config.alternative, config.tests, config.reps, rng.DATA)
    rates, crit = {}, {}
    for t in config.tests:
        rates[t], crit[t] = {}, {}
        for a in config.alphas:
            c = asymptotic_threshold(t, config, a)
            crit[t][a] = c
            rates[t][a] = float(np.mean(stats_[t] >= c))
    res = Type1Result(rates, crit, config.reps)
    if config.out:
        write_type1_csv(res, config.out, config.alphas)
    return res


def write_type1_csv(res: Type1Result, path, alphas) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["test"] + [f"alpha={a}" for a in alphas])
        for t, by in res.rates.items():
            w.writerow([t] + [repr(by[a]) for a in alphas])


@dataclass(frozen=True)
class PowerRow:
    alternative: str
    m: int
    test: str
    alpha: float
    critical: float
    power: float


def power_sweep(config: ExperimentConfig, kinds=("single", "nested")) -> list[AlternativeSpec]:
    return [AlternativeSpec(k, m) for k in kinds for m in range(1, config.max_m + 1)]


def run_power_study(config: ExperimentConfig, alternatives=None, alpha: float | None = None) -> list[PowerRow]:
    """Rejection rates under each alternative at level ``alpha`` (first configured level by default).

    With ``calibration="simulated"`` every test, including the oracle and
    full-model comparators, is calibrated on ``null_reps`` null datasets drawn
    from a separate stream; otherwise the limit laws are used (no comparators).
    """
    alternatives = power_sweep(config) if alternatives is None else list(alternatives)
    alpha = config.alphas[0] if alpha is None else alpha
    tests = tuple(config.tests)
    simulated = config.calibration == "simulated"
    null_stats = {}
    if simulated:
        keys = {("single", s.m) if s.kind == "single" else ("nested", s.m) for s in alternatives
                if s.kind in ("single", "nested")}
        null_stats = _simulate_stats(config, AlternativeSpec(), tests + ("FM",), config.null_reps, rng.SECONDARY)
        null_LS_LN = {}
        for key in sorted(keys):
            null_LS_LN[key] = _simulate_stats(config, AlternativeSpec(), ("oracle",), config.null_reps,
                                              rng.SECONDARY, oracle=key)["oracle"]

    def crit(t, sample=None):
        if simulated:
            return upper_quantile(np.sort(sample if sample is not None else null_stats[t]), alpha)
        return asymptotic_threshold(t, config, alpha)

    base = {t: crit(t) for t in tests}
    if simulated:
        base["FM"] = crit("FM")
    rows = []
    for spec in alternatives:
        has_oracle = simulated and spec.kind in ("single", "nested")
        names = tests + (("oracle", "FM") if has_oracle else ())
        oracle = (spec.kind, spec.m) if has_oracle else None
        st = _simulate_stats(config, spec, names, config.reps, rng.DATA, oracle=oracle)
        for t in names:
            c = crit(t, null_LS_LN[oracle]) if t == "oracle" else base[t]
            rows.append(PowerRow(str(spec), spec.m, t, alpha, c, float(np.mean(st[t] >= c))))
    if config.out:
        write_rows_csv(rows, config.out)
    return rows


def write_rows_csv(rows, path) -> None:
    rows = list(rows)
    if not rows:
        return
    fields = [f.name for f in dataclasses.fields(rows[0])]
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in dataclasses.astuple(r)])


@dataclass(frozen=True)
class LindleyRow:
    sqrt_n: float
    K: int
    percentile: float


def run_lindley_study(K_list=(1, 5, 10, 20), sqrt_n=tuple(range(2, 101)), alpha: float = 0.05,
                      reps: int | None = None, seed: int = DEFAULT_SEED, out=None) -> list[LindleyRow]:
    """Rejection thresholds ``p_{n,K,alpha}`` over a grid of ``sqrt(n)``."""
    kw = {} if reps is None else {"reps": reps}
    rows = [LindleyRow(float(s), int(K), lindley_percentile(int(round(s * s)), int(K), alpha, seed=seed, **kw))
            for K in K_list for s in sqrt_n]
    if out:
        write_rows_csv(rows, out)
    return rows
