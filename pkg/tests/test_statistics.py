from __future__ import annotations

import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pibic.alternatives import build_family, family_fit_from_lr, fit_family
from pibic.basis import equispaced_design, legendre_design, orthonormalize
from pibic.exceptions import DomainError, SaturationWarning, UsageError
from pibic.glm import GAUSSIAN, Dataset, NullSpec, fit_mle
from pibic.null_dist import CriticalValueTable, LawKind, LimitLaw, critical_value, simulate_law
from pibic.procedure import ALL_STATISTICS, compute_statistics
from pibic.statistics import (
    ScoreVector,
    adaptive_neyman,
    decide,
    fourier_matrix,
    max_test_ms,
    pi_bic,
    pi_bic_from_lr,
    pi_singleton_from_lr,
    pi_singleton_steps,
    r_n,
    s_n,
    score_vector,
)

V1_N4 = np.array([-1.34164, -0.44721, 0.44721, 1.34164])


def _gaussian(n, K, seed, signal=0.0):
    rng = np.random.default_rng(seed)
    x = equispaced_design(n)
    y = 1 + signal * np.cos(3 * np.pi * x) + 0.3 * rng.normal(size=n)
    data = Dataset(x, y)
    null = NullSpec.constant(n)
    f0 = fit_mle(GAUSSIAN, null.gamma, data)
    sys = orthonormalize(legendre_design(K, n), null)
    return data, f0, sys


class TestPiBic:
    def test_unit_term(self):
        assert pi_bic_from_lr([0.0], [1], 100) == pytest.approx(1 / 1.1, abs=1e-12)

    def test_decreasing_in_lr(self):
        assert pi_bic_from_lr([2.0], [1], 50) > pi_bic_from_lr([4.0], [1], 50)

    def test_nested_matches_extended_precision(self):
        data, f0, sys = _gaussian(20, 3, seed=7, signal=0.3)
        fit = fit_family(build_family("nested", 3), f0, sys, data)
        mpmath.mp.dps = 50
        total = mpmath.mpf(1)
        for lr, d in zip(fit.lr, fit.extra_dims):
            total += mpmath.power(20, -mpmath.mpf(int(d)) / 2) * mpmath.exp(mpmath.mpf(float(lr)) / 2)
        assert pi_bic(fit) == pytest.approx(float(1 / total), abs=1e-12)

    def test_saturation_returns_zero(self):
        with pytest.warns(SaturationWarning):
            assert pi_bic_from_lr([1500.0], [1], 100) == 0.0

    def test_large_but_finite_stays_positive(self):
        assert 0.0 < pi_bic_from_lr([1300.0], [1], 100) < 1e-200

    def test_needs_n_two(self):
        with pytest.raises(DomainError):
            pi_bic_from_lr([1.0], [1], 1)


class TestPiSingleton:
    def test_all_steps_zero(self):
        assert pi_singleton_from_lr(np.zeros(15), 76) == pytest.approx(1 / (1 + 15 / math.sqrt(76)), abs=1e-15)
        assert pi_singleton_from_lr(np.zeros(15), 76) == pytest.approx(0.367564, abs=1e-6)

    def test_K1_equals_pi_bic(self):
        assert pi_singleton_from_lr([3.3], 40) == pytest.approx(pi_bic_from_lr([3.3], [1], 40), abs=1e-15)

    def test_term_by_term(self):
        data, f0, sys = _gaussian(60, 6, seed=3, signal=0.2)
        fit = fit_family(build_family("nested", 6), f0, sys, data)
        lr0 = np.concatenate([[0.0], fit.lr])
        oracle = 1 / (1 + sum(math.exp((lr0[j] - lr0[j - 1]) / 2 - math.log(60) / 2) for j in range(1, 7)))
        assert pi_singleton_steps(fit) == pytest.approx(oracle, abs=1e-12)

    def test_needs_nested(self):
        fit = family_fit_from_lr(build_family("singleton", 2), [1.0, 1.0], 30)
        with pytest.raises(UsageError):
            pi_singleton_steps(fit)


class TestScores:
    def test_zero_residuals(self):
        x = equispaced_design(6)
        data = Dataset(x, np.full(6, 2.0))
        f0 = fit_mle(GAUSSIAN, np.ones((6, 1)), data, estimate_dispersion=False)
        sys = orthonormalize(legendre_design(2, 6), NullSpec.constant(6))
        np.testing.assert_allclose(score_vector(data, f0, sys).alpha_hat, 0.0, atol=1e-15)

    def test_hand_dot_product(self):
        x = equispaced_design(4)
        data = Dataset(x, np.array([1.0, -1.0, 1.0, -1.0]))
        f0 = fit_mle(GAUSSIAN, np.ones((4, 1)), data)
        sys = orthonormalize(legendre_design(1, 4), NullSpec.constant(4))
        assert score_vector(data, f0, sys).alpha_hat[0] == pytest.approx(-0.447215, abs=1e-5)

    def test_score_close_to_singleton_lr(self):
        data, f0, sys = _gaussian(400, 5, seed=11)
        fit = fit_family(build_family("singleton", 5), f0, sys, data)
        std = score_vector(data, f0, sys).standardized
        assert np.max(np.abs(std - fit.lr)) < 0.2

    def test_length_mismatch(self):
        data, f0, sys = _gaussian(20, 2, seed=0)
        short = orthonormalize(legendre_design(2, 19), NullSpec.constant(19))
        with pytest.raises(UsageError):
            score_vector(data, f0, short)

    def test_s_n_zero_scores(self):
        assert s_n(ScoreVector(np.zeros(10), 0.5, 100)) == 10.0

    def test_s_n_single_term_identity(self):
        sv = ScoreVector(np.array([0.13]), 0.2, 50)
        assert s_n(sv) == pytest.approx(math.exp(r_n(sv) / 2), rel=1e-15)

    def test_s_n_extended_precision(self):
        rng = np.random.default_rng(5)
        sv = ScoreVector(rng.normal(scale=0.1, size=12), 0.1, 200)
        mpmath.mp.dps = 40
        oracle = sum(mpmath.exp(200 * mpmath.mpf(float(a)) ** 2 / (2 * mpmath.mpf(0.1))) for a in sv.alpha_hat)
        assert s_n(sv) == pytest.approx(float(oracle), rel=1e-10)

    def test_s_n_saturation_flag(self):
        with pytest.warns(SaturationWarning):
            s_n(ScoreVector(np.array([10.0]), 0.01, 100))

    def test_r_n_examples(self):
        assert r_n(ScoreVector(np.zeros(3), 1.0, 10)) == 0.0
        assert r_n(ScoreVector(np.array([0.0, 0.1, 0.0]), 0.1, 100)) == pytest.approx(10.0)
        a = np.array([0.3, -0.1, 0.2])
        assert r_n(ScoreVector(a, 0.4, 30)) == r_n(ScoreVector(a[::-1], 0.4, 30))


class TestMaxTest:
    def test_zero_lr(self):
        assert max_test_ms(np.zeros(10)) == pytest.approx(-2.626408, abs=1e-6)

    def test_K20(self):
        # 12 - 2 log 20 + log log 20 + log pi, with log log 20 = 1.097189
        assert max_test_ms(np.array([12.0] + [0.0] * 19)) == pytest.approx(8.250454, abs=1e-6)

    def test_translation(self):
        lr = np.array([1.0, 4.0, 2.5])
        assert max_test_ms(lr + 3.0) == pytest.approx(max_test_ms(lr) + 3.0)

    def test_K_below_two(self):
        with pytest.raises(DomainError):
            max_test_ms(np.array([1.0]))


class TestAdaptiveNeyman:
    def test_first_cosine_maximizes_at_one(self):
        n = 64
        r = 3.0 * fourier_matrix(n)[:, 0]
        stat, m = adaptive_neyman(r, variance=1.0, return_order=True)
        ll = math.log(math.log(n))
        direct = math.sqrt(2 * ll) * (9.0 - 1.0) / math.sqrt(2) - (2 * ll + 0.5 * math.log(ll) - 0.5 * math.log(4 * math.pi))
        assert m == 1
        assert stat == pytest.approx(direct, abs=1e-10)

    def test_sign_flip(self):
        r = np.random.default_rng(2).normal(size=50)
        assert adaptive_neyman(r) == adaptive_neyman(-r)

    def test_fourier_columns_orthonormal(self):
        for n in (16, 17):
            F = fourier_matrix(n)
            assert F.shape == (n, n - 1)
            np.testing.assert_allclose(F.T @ F, np.eye(n - 1), atol=1e-12)
            np.testing.assert_allclose(F.sum(axis=0), 0.0, atol=1e-12)

    def test_degenerate(self):
        with pytest.raises(DomainError):
            adaptive_neyman(np.zeros(20))
        with pytest.raises(DomainError):
            adaptive_neyman(np.ones(5))

    @pytest.mark.slow
    def test_self_consistent_calibration(self):
        law = simulate_law(LimitLaw(LawKind.ADAPTIVE_NEYMAN, n=100), 20000, seed=4)
        crit = law.quantile(0.05)
        R = np.random.default_rng(9).normal(size=(5000, 100))
        rate = np.mean(adaptive_neyman(R, variance=1.0) >= crit)
        assert abs(rate - 0.05) <= 0.01


class TestDecide:
    def _table(self, test, thr, alpha=0.05, K=10, n=100):
        return CriticalValueTable(test, "x", K, n, alpha, 0.0, thr, 1000, 1, 0.01)

    def test_pi_rejects_when_small(self):
        assert decide("pi_bic", 0.3, self._table("pi_bic", 0.6)).reject

    def test_lindley_cap(self):
        res = decide("pi_bic", 0.6, self._table("pi_bic", 0.7), lindley_safe=True)
        assert not res.reject and res.reference_value == 0.5 and res.lindley_safe

    def test_max_test(self):
        assert decide("M_S", 6.0, critical_value("M_S", 10, 100, 0.05)).reject

    def test_mismatch(self):
        with pytest.raises(UsageError):
            decide("B_S", 0.1, self._table("B_N", 0.5))
        with pytest.raises(UsageError):
            decide("B_S", 0.1, self._table("B_S", 0.5), alpha=0.01)
        with pytest.raises(UsageError):
            decide("B_S", 0.1, self._table("B_S", 0.5), K=20)

    def test_json_record(self):
        rec = json.loads(decide("R_n", 3.0, self._table("R_n", 8.5)).to_json())
        assert {"statistic", "value", "reference_kind", "reference_value", "alpha", "reject",
                "seed_provenance"} <= set(rec)
        assert rec["reject"] is False


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), c=st.floats(0.01, 100.0), signal=st.floats(0.0, 0.3))
def test_gaussian_scale_invariance(seed, c, signal):
    data, _, _ = _gaussian(60, 5, seed, signal)
    a = compute_statistics(data, K=5)
    b = compute_statistics(data.with_response(c * data.response), K=5)
    for name in ALL_STATISTICS:
        assert b.values[name] == pytest.approx(a.values[name], rel=1e-8, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), K=st.integers(2, 8), signal=st.floats(0.0, 0.5))
def test_statistic_ranges_and_identity(seed, K, signal):
    data, f0, sys = _gaussian(50, K, seed, signal)
    res = compute_statistics(data, K=K)
    assert res.values["S_n"] >= K
    assert res.values["R_n"] >= 0
    for name in ("B_S", "B_N"):
        assert 0.0 < res.values[name] <= 1.0
    s_tilde = float(np.sum(np.exp(res.singleton.lr / 2)))
    n = data.n
    assert res.large_form("B_S") == pytest.approx(s_tilde / (1 + s_tilde / math.sqrt(n)), rel=1e-10)
