"""Raw alternative-direction bases and their weighted orthonormalization.

A raw basis holds ``u_1..u_K`` evaluated on the design, each column scaled so
that ``(1/n) sum_i u_k(x_i)^2 = 1``. :func:`orthonormalize` turns it into
directions ``v_1..v_K`` that are orthogonal to the null-model columns and
orthonormal under the weights ``w_i = b''(g(x_i; theta_hat_0))``:

    sum_i v_j(x_i) gamma_k(x_i) w_i = 0,
    (1/n) sum_i w_i v_j(x_i) v_k(x_i) = delta_jk.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre

from pibic.exceptions import DesignError, DomainError
from pibic.glm import NullSpec

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class BasisSet:
    """Raw basis values ``u_k(x_i)`` with unit mean square per column.

    Attributes
    ----------
    kind : {"cosine", "legendre", "custom"}
    values : ndarray (n, K)
    design : ndarray (n,) or (n, d), optional
        Covariates the basis was evaluated on.
    """

    kind: str
    values: np.ndarray
    design: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[1] < 1:
            raise DomainError("basis needs at least one column")
        if not np.all(np.isfinite(v)):
            raise DomainError("basis contains non-finite values")
        msq = np.mean(v * v, axis=0)
        bad = np.flatnonzero(np.abs(msq - 1.0) > 1e-8)
        if bad.size:
            raise DomainError(f"column {int(bad[0])} has mean square {msq[bad[0]]!r}, expected 1")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1]

    @property
    def sup_bound(self) -> float:
        """``B_K``: the largest absolute basis value on the design."""
        return float(np.max(np.abs(self.values)))

    def gram(self) -> np.ndarray:
        """``(1/n) A^T A``."""
        return self.values.T @ self.values / self.n

    def columns(self, idx) -> np.ndarray:
        """Columns for 1-based indices ``idx``."""
        return self.values[:, np.asarray(idx, dtype=int) - 1]


def custom_basis(values, design=None, kind: str = "custom") -> BasisSet:
    """Wrap arbitrary basis evaluations, rescaling each column to unit mean square."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    scale = np.sqrt(np.mean(v * v, axis=0))
    zero = np.flatnonzero(scale == 0)
    if zero.size:
        raise DesignError(f"basis column {int(zero[0])} is identically zero", column=int(zero[0]))
    return BasisSet(kind, v / scale, design)


def cosine_design(K: int, design, include_constant: bool = False) -> BasisSet:
    """Columns ``cos(pi k x)`` for ``k = 1..K`` (``k = 0`` first if requested)."""
    if K < 1:
        raise DomainError("K must be at least 1")
    x = np.asarray(design, dtype=float)
    if x.ndim != 1:
        raise DomainError("cosine basis needs a scalar covariate")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError("cosine basis needs covariates in [0, 1]")
    k = np.arange(0 if include_constant else 1, K + 1)
    return custom_basis(np.cos(np.pi * np.outer(x, k)), x, kind="cosine")


def equispaced_design(n: int) -> np.ndarray:
    """``x_i = (i - 1/2) / n``."""
    return (np.arange(1, n + 1) - 0.5) / n


def legendre_design(K: int, n: int, include_constant: bool = False) -> BasisSet:
    """Normalized Legendre polynomials of degree ``1..K`` on ``x_i = (i - 1/2)/n``.

    The polynomials are mapped from ``[-1, 1]`` to ``[1/(2n), 1 - 1/(2n)]`` and
    then orthogonalized against lower degrees on the design, so the columns
    are exactly orthonormal in the discrete mean-square inner product.
    """
    if K < 1:
        raise DomainError("K must be at least 1")
    if K >= n:
        raise DesignError(f"K={K} needs at least K+1={K + 1} design points, got n={n}", column=n)
    x = equispaced_design(n)
    t = np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1)
    raw = legendre.legvander(t, K)
    Q = _mgs(raw, np.ones(n), first_checked=0)
    vals = Q if include_constant else Q[:, 1:]
    return BasisSet("legendre", vals, x)


def legendre_basis(K: int, design) -> BasisSet:
    """Legendre polynomials of degree ``1..K`` on the covariate range, unit mean square.

    For an equispaced design the span equals that of :func:`legendre_design`.
    """
    if K < 1:
        raise DomainError("K must be at least 1")
    x = np.asarray(design, dtype=float)
    if x.ndim != 1:
        raise DomainError("Legendre basis needs a scalar covariate")
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        raise DesignError("covariate is constant", column=0)
    t = 2.0 * (x - lo) / (hi - lo) - 1.0
    return custom_basis(legendre.legvander(t, K)[:, 1:], x, kind="legendre")


def _mgs(M: np.ndarray, w: np.ndarray, first_checked: int, offset: int = 0) -> np.ndarray:
    """Weighted modified Gram-Schmidt with one reorthogonalization pass.

    Returns columns scaled to ``(1/n) sum w q^2 = 1``. Each column keeps the
    sign of its own raw column (positive coefficient on it).
    """
    n, m = M.shape
    Q = np.empty((n, m))
    for j in range(m):
        v = M[:, j].copy()
        norm0 = np.sqrt(np.mean(w * v * v))
        for _ in range(2):
            for k in range(j):
                v -= (np.mean(w * Q[:, k] * v)) * Q[:, k]
        nv = np.sqrt(np.mean(w * v * v))
        if not nv > _RANK_TOL * max(norm0, 1e-300):
            col = j - offset
            if j < first_checked:
                raise DesignError(f"null basis is rank deficient at column {j}", column=j)
            raise DesignError(f"basis is rank deficient at column {col}", column=col)
        Q[:, j] = v / nv
    return Q


@dataclass(frozen=True)
class OrthonormalSystem:
    """Directions ``v_1..v_K`` satisfying the weighted orthonormality conditions."""

    values: np.ndarray
    weights: np.ndarray
    raw: BasisSet = field(repr=False)
    null: NullSpec = field(repr=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1]

    def columns(self, idx) -> np.ndarray:
        return self.values[:, np.asarray(idx, dtype=int) - 1]

    def residuals(self) -> tuple[float, float]:
        """Largest deviations from the null-orthogonality and orthonormality conditions."""
        wv = self.values * self.weights[:, None]
        orth = float(np.max(np.abs(wv.T @ self.null.gamma)))
        gram = wv.T @ self.values / self.n
        norm = float(np.max(np.abs(gram - np.eye(self.K))))
        return orth, norm


def orthonormalize(raw: BasisSet, null_spec: NullSpec, weights=None) -> OrthonormalSystem:
    """Weighted Gram-Schmidt of ``[gamma | u]``; returns the ``u``-part.

    Parameters
    ----------
    raw : BasisSet
    null_spec : NullSpec
    weights : array (n,), optional
        Positive weights ``b''(g(x_i; theta_hat_0))``; ones by default.

    Raises
    ------
    DomainError
        A weight is not positive, or sizes disagree.
    DesignError
        ``[gamma | u]`` is rank deficient; ``column`` is the 0-based raw column.
    """
    n = raw.n
    if null_spec.gamma.shape[0] != n:
        raise DomainError(f"null basis has {null_spec.gamma.shape[0]} rows, raw basis {n}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape[0] != n:
        raise DomainError(f"{w.shape[0]} weights for {n} observations")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        i = int(np.flatnonzero(~(w > 0))[0]) if np.any(~(w > 0)) else -1
        raise DomainError(f"weights must be positive and finite (observation {i})")
    p = null_spec.p
    stacked = np.hstack([null_spec.gamma, raw.values])
    Q = _mgs(stacked, w, first_checked=p, offset=p)
    return OrthonormalSystem(Q[:, p:], w, raw, null_spec)
