"""Families of alternative models and their fits.

Model ``M_j`` extends the null mean model by the basis columns in the index
set ``K_j`` (1-based). ``nested`` uses ``{1..j}``, ``singleton`` uses ``{j}``.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from pibic.exceptions import ConvergenceError, DesignError, FitError, UsageError
from pibic.glm import Dataset, ExponentialFamily, FittedModel, NullSpec, fit_mle, get_family

NESTED = "nested"
SINGLETON = "singleton"
CUSTOM = "custom"

DEFAULT_MODEL_BUDGET = 4096


@dataclass(frozen=True)
class AlternativeFamily:
    """Index sets ``K_1..K_M`` over basis columns ``1..K``."""

    kind: str
    index_sets: tuple[tuple[int, ...], ...]
    K: int

    @property
    def extra_dims(self) -> np.ndarray:
        """``m_j - m_0`` for each model."""
        return np.array([len(s) for s in self.index_sets], dtype=int)

    def dims(self, m0: int) -> np.ndarray:
        return m0 + self.extra_dims

    def __len__(self) -> int:
        return len(self.index_sets)


def build_family(kind: str, K: int | None = None, sets=None,
                 max_models: int = DEFAULT_MODEL_BUDGET) -> AlternativeFamily:
    """Construct a nested, singleton, custom or all-subsets family.

    Parameters
    ----------
    kind : {"nested", "singleton", "custom", "all"}
        ``"all"`` enumerates every non-empty subset of ``{1..K}`` and is
        returned as a custom family.
    K : int
        Number of basis columns. Inferred from ``sets`` for custom families.
    sets : iterable of iterables of int, optional
        Explicit 1-based index sets for ``kind="custom"``.
    max_models : int
        Budget guarding custom and all-subsets families.
    """
    if kind in (NESTED, SINGLETON, "all"):
        if K is None or K < 1:
            raise UsageError("K must be at least 1")
    if kind == NESTED:
        return AlternativeFamily(NESTED, tuple(tuple(range(1, j + 1)) for j in range(1, K + 1)), K)
    if kind == SINGLETON:
        return AlternativeFamily(SINGLETON, tuple((j,) for j in range(1, K + 1)), K)
    if kind == "all":
        if 2**K - 1 > max_models:
            raise UsageError(f"all subsets of {K} columns is {2**K - 1} models, over budget {max_models}")
        sets = [c for r in range(1, K + 1) for c in itertools.combinations(range(1, K + 1), r)]
        return AlternativeFamily(CUSTOM, tuple(sets), K)
    if kind == CUSTOM:
        if sets is None:
            raise UsageError("custom family needs explicit index sets")
        out = []
        for j, s in enumerate(sets):
            s = tuple(int(i) for i in s)
            if not s:
                raise UsageError(f"index set {j} is empty")
            if len(set(s)) != len(s) or min(s) < 1:
                raise UsageError(f"index set {j} = {s} must hold distinct positive indices")
            out.append(s)
        if not out:
            raise UsageError("custom family has no models")
        if len(out) > max_models:
            raise UsageError(f"{len(out)} models exceeds budget {max_models}")
        top = max(max(s) for s in out)
        if K is not None and top > K:
            raise UsageError(f"index {top} exceeds K={K}")
        return AlternativeFamily(CUSTOM, tuple(out), K if K is not None else top)
    raise UsageError(f"unknown family kind {kind!r}")


@dataclass(frozen=True)
class FamilyFit:
    """Fits of every model in a family plus the null fit.

    ``lr[j-1]`` is the likelihood ratio of model ``j``; ``aic`` and ``bic``
    have the null model at position 0.
    """

    family: AlternativeFamily
    null_fit: FittedModel
    fits: tuple[FittedModel, ...] = field(repr=False)
    lr: np.ndarray
    aic: np.ndarray
    bic: np.ndarray
    n: int

    @property
    def extra_dims(self) -> np.ndarray:
        return self.family.extra_dims


def criteria(loglik, dims, n):
    """``AIC_j = loglik_j - m_j`` and ``BIC_j = loglik_j - m_j log(n) / 2``."""
    loglik = np.asarray(loglik, dtype=float)
    dims = np.asarray(dims, dtype=float)
    return loglik - dims, loglik - 0.5 * dims * np.log(n)


def family_fit_from_lr(family: AlternativeFamily, lr, n: int, m0: int = 1,
                       null_fit: FittedModel | None = None) -> FamilyFit:
    """Assemble a :class:`FamilyFit` from likelihood ratios alone.

    The null log-likelihood is taken as 0, which leaves every statistic and
    order selection unchanged.
    """
    lr = np.asarray(lr, dtype=float)
    if lr.shape != (len(family),):
        raise UsageError(f"expected {len(family)} likelihood ratios, got {lr.shape}")
    ll = np.concatenate([[0.0], lr / 2.0])
    dims = np.concatenate([[m0], family.dims(m0)])
    aic, bic = criteria(ll, dims, n)
    return FamilyFit(family, null_fit, (), lr, aic, bic, n)


def fit_family(
    family: AlternativeFamily,
    null_fit: FittedModel,
    basis,
    data: Dataset,
    glm: ExponentialFamily | None = None,
    null_spec: NullSpec | None = None,
    workers: int = 1,
    lr_tol: float = 1e-6,
) -> FamilyFit:
    """Fit every model ``M_j`` by appending its basis columns to the null basis.

    Parameters
    ----------
    basis : BasisSet or OrthonormalSystem
        Anything with a ``values`` (n, K) array.
    glm : ExponentialFamily, optional
        Looked up from ``null_fit.family`` when omitted.
    null_spec : NullSpec, optional
        Null-model columns; a constant column when omitted.

    Raises
    ------
    DesignError
        Some model's design is rank deficient (message names the model).
    FitError
        A model failed to converge; ``index`` is the 1-based model number.
    """
    glm = glm or get_family(null_fit.family)
    null_spec = null_spec or NullSpec.constant(data.n)
    U = np.asarray(basis.values, dtype=float)
    if U.shape[0] != data.n:
        raise UsageError(f"basis has {U.shape[0]} rows, dataset has {data.n}")
    top = max(max(s) for s in family.index_sets)
    if top > U.shape[1]:
        raise UsageError(f"family uses column {top} but basis has {U.shape[1]}")
    est = null_fit.dimension > len(null_fit.coefficients)

    def one(j):
        idx = np.asarray(family.index_sets[j], dtype=int) - 1
        X = np.hstack([null_spec.gamma, U[:, idx]])
        try:
            return fit_mle(glm, X, data, estimate_dispersion=est, dispersion=null_fit.eta)
        except DesignError as exc:
            raise DesignError(f"model {j + 1}: {exc}", column=exc.column) from exc
        except ConvergenceError as exc:
            raise FitError(f"model {j + 1}: {exc}", index=j + 1) from exc

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            fits = tuple(ex.map(one, range(len(family))))
    else:
        fits = tuple(one(j) for j in range(len(family)))
    lr = np.array([2.0 * (f.max_loglik - null_fit.max_loglik) for f in fits])
    bad = np.flatnonzero(lr < -lr_tol)
    if bad.size:
        j = int(bad[0])
        raise FitError(f"model {j + 1} has likelihood ratio {lr[j]:.3g} < 0", index=j + 1)
    ll = np.concatenate([[null_fit.max_loglik], [f.max_loglik for f in fits]])
    dims = np.concatenate([[null_fit.dimension], [f.dimension for f in fits]])
    aic, bic = criteria(ll, dims, data.n)
    return FamilyFit(family, null_fit, fits, lr, aic, bic, data.n)


@dataclass(frozen=True)
class SelectedOrder:
    order: int
    statistic: float
    criterion: str


def select_order(fit: FamilyFit, criterion: str = "aic", min_order: int = 0) -> SelectedOrder:
    """Order maximizing AIC or BIC on the nested ladder, and its likelihood ratio.

    Ties go to the smaller order. ``min_order=1`` excludes the null model
    from the search.
    """
    if fit.family.kind != NESTED:
        raise UsageError("order selection needs a nested family")
    if criterion not in ("aic", "bic"):
        raise UsageError(f"criterion must be 'aic' or 'bic', got {criterion!r}")
    crit = np.array(fit.aic if criterion == "aic" else fit.bic, dtype=float)
    if not 0 <= min_order <= len(fit.lr):
        raise UsageError(f"min_order {min_order} outside 0..{len(fit.lr)}")
    crit[:min_order] = -np.inf
    r = int(np.argmax(crit))
    lr0 = np.concatenate([[0.0], fit.lr])
    return SelectedOrder(r, float(lr0[r]), criterion)
