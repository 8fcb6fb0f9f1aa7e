from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pibic.alternatives import (
    build_family,
    family_fit_from_lr,
    fit_family,
    select_order,
)
from pibic.basis import equispaced_design, legendre_design, orthonormalize
from pibic.exceptions import DesignError, UsageError
from pibic.glm import GAUSSIAN, POISSON, Dataset, NullSpec, fit_mle


def _gaussian_setup(n=10, K=3, seed=0, known=None):
    rng = np.random.default_rng(seed)
    x = equispaced_design(n)
    y = 1 + 0.5 * np.sin(4 * x) + 0.3 * rng.normal(size=n)
    data = Dataset(x, y)
    null = NullSpec.constant(n)
    kw = {} if known is None else {"estimate_dispersion": False, "dispersion": known}
    f0 = fit_mle(GAUSSIAN, null.gamma, data, **kw)
    sys = orthonormalize(legendre_design(K, n), null)
    return data, null, f0, sys


class TestBuildFamily:
    def test_nested(self):
        assert build_family("nested", 3).index_sets == ((1,), (1, 2), (1, 2, 3))

    def test_singleton(self):
        assert build_family("singleton", 3).index_sets == ((1,), (2,), (3,))

    def test_custom_preserved(self):
        fam = build_family("custom", sets=[(2, 5), (1,)])
        assert fam.index_sets == ((2, 5), (1,))
        np.testing.assert_array_equal(fam.dims(1), [3, 2])

    def test_empty_custom_set(self):
        with pytest.raises(UsageError):
            build_family("custom", sets=[(1,), ()])

    def test_all_subsets_budget(self):
        assert len(build_family("all", 4)) == 15
        with pytest.raises(UsageError):
            build_family("all", 13, max_models=4096)

    def test_every_model_contains_null(self):
        for kind in ("nested", "singleton"):
            assert np.all(build_family(kind, 5).extra_dims > 0)


class TestFitFamily:
    def test_zero_column_rejected(self):
        data, null, f0, _ = _gaussian_setup()
        basis = SimpleNamespace(values=np.zeros((10, 1)))
        with pytest.raises(DesignError, match="model 1"):
            fit_family(build_family("singleton", 1), f0, basis, data)

    def test_nested_monotone(self):
        data, null, f0, sys = _gaussian_setup(K=2)
        fit = fit_family(build_family("nested", 2), f0, sys, data)
        assert fit.lr[1] >= fit.lr[0] - 1e-6

    def test_matches_generic_least_squares_refit(self):
        data, null, f0, sys = _gaussian_setup(n=10, K=3, seed=4)
        fam = build_family("custom", sets=[(1,), (2, 3), (1, 3)])
        fit = fit_family(fam, f0, sys, data)
        y, n = data.response, data.n

        def profiled_ll(X):
            rss = np.sum((y - X @ np.linalg.lstsq(X, y, rcond=None)[0]) ** 2)
            return -0.5 * n * (math.log(2 * math.pi * rss / n) + 1)

        ll0 = profiled_ll(np.ones((n, 1)))
        for j, s in enumerate(fam.index_sets):
            X = np.column_stack([np.ones(n), sys.values[:, np.array(s) - 1]])
            assert fit.lr[j] == pytest.approx(2 * (profiled_ll(X) - ll0), abs=1e-8)

    def test_criteria_definitions(self):
        data, null, f0, sys = _gaussian_setup(K=3)
        fit = fit_family(build_family("nested", 3), f0, sys, data)
        ll = np.array([f0.max_loglik] + [f.max_loglik for f in fit.fits])
        m = np.array([f0.dimension] + [f.dimension for f in fit.fits])
        np.testing.assert_allclose(fit.aic, ll - m)
        np.testing.assert_allclose(fit.bic, ll - 0.5 * m * math.log(10))

    def test_known_variance_steps_equal_scaled_scores(self):
        eta = 0.09
        data, null, f0, sys = _gaussian_setup(n=40, K=4, seed=2, known=eta)
        fit = fit_family(build_family("nested", 4), f0, sys, data)
        alpha = (data.response - f0.linear_predictor) @ sys.values / data.n
        steps = np.diff(np.concatenate([[0.0], fit.lr]))
        np.testing.assert_allclose(steps, data.n * alpha ** 2 / eta, atol=1e-6)

    def test_parallel_matches_serial(self):
        data, null, f0, sys = _gaussian_setup(n=30, K=5)
        fam = build_family("singleton", 5)
        a = fit_family(fam, f0, sys, data, workers=1)
        b = fit_family(fam, f0, sys, data, workers=3)
        np.testing.assert_array_equal(a.lr, b.lr)

    def test_poisson_family(self):
        x = equispaced_design(30)
        y = np.random.default_rng(1).poisson(np.exp(1 + x)).astype(float)
        data = Dataset(x, y)
        null = NullSpec.constant(30)
        f0 = fit_mle(POISSON, null.gamma, data)
        sys = orthonormalize(legendre_design(3, 30), null, POISSON.variance_weights(f0.linear_predictor))
        fit = fit_family(build_family("nested", 3), f0, sys, data)
        assert np.all(np.diff(fit.lr) >= -1e-6)


class TestSelectOrder:
    fam = build_family("nested", 2)

    def test_aic_hand_example(self):
        sel = select_order(family_fit_from_lr(self.fam, [5.0, 5.5], 100), "aic")
        assert (sel.order, sel.statistic) == (1, 5.0)
        np.testing.assert_allclose(np.diff(family_fit_from_lr(self.fam, [5.0, 5.5], 100).aic)[:1], [1.5])

    def test_bic_hand_example(self):
        fit = family_fit_from_lr(self.fam, [5.0, 5.5], 100)
        np.testing.assert_allclose(fit.bic - fit.bic[0], [0.0, 0.1974, -1.8552], atol=1e-4)
        sel = select_order(fit, "bic")
        assert (sel.order, sel.statistic) == (1, 5.0)

    def test_all_zero(self):
        sel = select_order(family_fit_from_lr(build_family("nested", 4), np.zeros(4), 50), "aic")
        assert (sel.order, sel.statistic) == (0, 0.0)

    def test_min_order(self):
        sel = select_order(family_fit_from_lr(build_family("nested", 4), np.zeros(4), 50), "bic", min_order=1)
        assert sel.order == 1

    def test_non_nested(self):
        with pytest.raises(UsageError):
            select_order(family_fit_from_lr(build_family("singleton", 2), [1.0, 2.0], 50))


@settings(max_examples=100, deadline=None)
@given(
    steps=st.lists(st.integers(0, 120), min_size=1, max_size=12),
    n=st.integers(8, 10_000),
    shift=st.integers(-1000, 1000),
)
def test_order_selection_properties(steps, n, shift):
    # quarter-integer steps and integer shifts keep AIC arithmetic exact, ties included
    lr = np.cumsum(steps) / 4.0
    fam = build_family("nested", len(lr))
    fit = family_fit_from_lr(fam, lr, n)
    ra = select_order(fit, "aic").order
    rb = select_order(fit, "bic").order
    assert rb <= ra
    shifted = type(fit)(fit.family, None, (), fit.lr, fit.aic + shift, fit.bic + shift, n)
    assert select_order(shifted, "aic").order == ra
    assert select_order(shifted, "bic").order == rb
