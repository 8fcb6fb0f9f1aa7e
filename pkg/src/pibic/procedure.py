"""All test statistics for one dataset, computed through the generic GLM path."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from pibic.alternatives import FamilyFit, build_family, fit_family, select_order
from pibic.basis import BasisSet, OrthonormalSystem, cosine_design, legendre_basis, orthonormalize
from pibic.exceptions import UsageError
from pibic.glm import GAUSSIAN, Dataset, ExponentialFamily, FittedModel, NullSpec, fit_mle
from pibic.statistics import (
    ScoreVector,
    adaptive_neyman,
    max_test_ms,
    pi_bic,
    r_n,
    s_n,
    score_vector,
)

ALL_STATISTICS = ("L_a", "L_b", "B_N", "B_S", "M_S", "N_A", "S_n", "R_n")


@dataclass(frozen=True)
class ProcedureResult:
    """Statistic values keyed by test name (``B_S``/``B_N`` are pi values)."""

    values: dict
    null_fit: FittedModel = field(repr=False)
    nested: FamilyFit = field(repr=False)
    singleton: FamilyFit = field(repr=False)
    score: ScoreVector = field(repr=False)
    system: OrthonormalSystem = field(repr=False)
    orders: dict = field(default_factory=dict)

    def large_form(self, name: str) -> float:
        """Value oriented so large means reject (``sqrt(n)(1 - pi)`` for pi tests)."""
        v = self.values[name]
        if name in ("B_S", "B_N"):
            return math.sqrt(self.nested.n) * (1.0 - v)
        return v


def raw_basis(kind: str, K: int, x) -> BasisSet:
    if kind == "legendre":
        return legendre_basis(K, x)
    if kind == "cosine":
        return cosine_design(K, x)
    raise UsageError(f"unknown basis {kind!r}")


def compute_statistics(
    data: Dataset,
    K: int = 10,
    family: ExponentialFamily = GAUSSIAN,
    null_spec: NullSpec | None = None,
    basis: str | BasisSet = "legendre",
    an_variance="rice",
) -> ProcedureResult:
    """Fit the null, orthonormalize the basis, fit both families, compute every statistic.

    Parameters
    ----------
    data : Dataset
        Scalar covariate in the first design column.
    basis : {"legendre", "cosine"} or BasisSet
    an_variance : {"rice", "mle"} or float
        Standardization for the adaptive Neyman statistic.
    """
    null_spec = null_spec or NullSpec.constant(data.n)
    null_fit = fit_mle(family, null_spec.gamma, data)
    raw = basis if isinstance(basis, BasisSet) else raw_basis(basis, K, data.x)
    if raw.K < K:
        raise UsageError(f"basis has {raw.K} columns, need K={K}")
    w = family.variance_weights(null_fit.linear_predictor)
    system = orthonormalize(raw, null_spec, w)
    nested = fit_family(build_family("nested", K), null_fit, system, data, family, null_spec)
    single = fit_family(build_family("singleton", K), null_fit, system, data, family, null_spec)
    score = score_vector(data, null_fit, system, family)
    la = select_order(nested, "aic")
    lb = select_order(nested, "bic", min_order=1)
    order = np.argsort(data.x, kind="stable")
    resid = (data.response - family.b1(null_fit.linear_predictor))[order]
    values = {
        "L_a": la.statistic,
        "L_b": lb.statistic,
        "B_N": pi_bic(nested),
        "B_S": pi_bic(single),
        "M_S": max_test_ms(single) if K >= 2 else float("nan"),
        "N_A": adaptive_neyman(resid, an_variance) if data.n >= 8 else float("nan"),
        "S_n": s_n(score),
        "R_n": r_n(score),
    }
    return ProcedureResult(values, null_fit, nested, single, score, system,
                           {"aic": la.order, "bic": lb.order})
