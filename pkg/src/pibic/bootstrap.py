"""Seeded parametric bootstrap for the null distribution of any statistic."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from pibic import rng
from pibic.exceptions import BootstrapError, DomainError
from pibic.statistics import PI_TESTS

MAX_FAILURE_RATE = 0.05


def tail_of(statistic_name: str) -> str:
    """Registered rejection tail: ``"lower"`` for pi-type statistics."""
    return "lower" if statistic_name in PI_TESTS else "upper"


@dataclass(frozen=True)
class BootstrapSpec:
    """A null-data generator, a statistic, and the replicate budget.

    Attributes
    ----------
    generator : callable
        ``generator(rng) -> data`` draws one dataset under the fitted null.
    statistic : callable
        ``statistic(data) -> float`` or a sequence of floats (several
        statistics sharing the same replicates).
    B : int
    seed : int
    tail : str or tuple of str
        ``"upper"`` or ``"lower"`` per statistic.
    """

    generator: Callable[[np.random.Generator], Any]
    statistic: Callable[[Any], Any]
    B: int = 1000
    seed: int = 0
    tail: str | tuple[str, ...] = "upper"

    def __post_init__(self):
        if self.B < 100:
            raise DomainError("bootstrap needs B >= 100")


@dataclass(frozen=True)
class BootstrapResult:
    """Null replicates (NaN where a replicate failed) and add-one p-values."""

    null_sample: np.ndarray = field(repr=False)
    observed: np.ndarray
    p_values: np.ndarray
    failures: tuple[tuple[int, str], ...]
    B: int
    seed: int

    @property
    def p_value(self) -> float:
        return float(self.p_values[0])

    @property
    def provenance(self) -> str:
        return f"bootstrap B={self.B} seed={self.seed}"


def _as_row(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=float)).ravel()


def run_bootstrap(spec: BootstrapSpec, observed, workers: int = 1,
                  catch: tuple[type[BaseException], ...] = (Exception,)) -> BootstrapResult:
    """Simulate ``B`` null datasets and compare the statistic with ``observed``.

    Replicate ``b`` uses its own counter-based stream, so the result does not
    depend on ``workers``. Failed replicates are recorded and excluded.

    Raises
    ------
    BootstrapError
        More than 5% of replicates failed.
    """
    obs = _as_row(observed)
    k = obs.size
    tails = (spec.tail,) * k if isinstance(spec.tail, str) else tuple(spec.tail)
    if len(tails) != k or any(t not in ("upper", "lower") for t in tails):
        raise DomainError(f"need one tail in {{'upper','lower'}} per statistic, got {tails}")

    def one(b):
        try:
            row = _as_row(spec.statistic(spec.generator(rng.stream(spec.seed, b, rng.BOOTSTRAP))))
        except catch as exc:
            return None, f"{type(exc).__name__}: {exc}"
        if row.size != k or not np.all(np.isfinite(row)):
            return None, f"statistic returned {row!r}"
        return row, None

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(one, range(spec.B)))
    else:
        results = [one(b) for b in range(spec.B)]
    sample = np.full((spec.B, k), np.nan)
    failures = []
    for b, (row, err) in enumerate(results):
        if err is None:
            sample[b] = row
        else:
            failures.append((b, err))
    if len(failures) > MAX_FAILURE_RATE * spec.B:
        raise BootstrapError(f"{len(failures)} of {spec.B} bootstrap replicates failed; first: {failures[0][1]}")
    ok = sample[~np.isnan(sample[:, 0])]
    p = np.empty(k)
    for j in range(k):
        extreme = ok[:, j] >= obs[j] if tails[j] == "upper" else ok[:, j] <= obs[j]
        p[j] = (1.0 + np.count_nonzero(extreme)) / (ok.shape[0] + 1.0)
    return BootstrapResult(sample if k > 1 else sample[:, 0], obs, p, tuple(failures), spec.B, spec.seed)


def glm_null_generator(family, null_fit, data) -> Callable[[np.random.Generator], Any]:
    """Draw datasets from the fitted null GLM, keeping the design fixed.

    Supports the shipped families; the Gaussian variance is ``a(eta_hat)``.
    """
    mean = np.asarray(family.b1(null_fit.linear_predictor), dtype=float)
    name = family.name
    if name == "gaussian":
        sd = float(np.sqrt(null_fit.dispersion))
        draw = lambda g: mean + sd * g.standard_normal(mean.shape[0])  # noqa: E731
    elif name == "poisson":
        draw = lambda g: g.poisson(mean).astype(float)  # noqa: E731
    elif name == "bernoulli":
        draw = lambda g: (g.random(mean.shape[0]) < mean).astype(float)  # noqa: E731
    else:
        raise DomainError(f"no null generator for family {name!r}")
    return lambda g: data.with_response(draw(g))
