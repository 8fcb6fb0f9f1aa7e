from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pibic import rng
from pibic.exceptions import DomainError, UsageError
from pibic.harness import ExperimentConfig, run_type1_study
from pibic.null_dist import (
    CACHE_ENV,
    LawKind,
    LimitLaw,
    critical_value,
    gumbel_half_cdf,
    gumbel_half_quantile,
    lindley_percentile,
    lower_quantile,
    quantile_stderr,
    simulate_law,
    stable_constants,
    stable_quantile,
    theoretical_local_power,
    upper_quantile,
)


def _combined_se(*ses):
    return math.sqrt(sum(s * s for s in ses))


class TestSimulateLaw:
    def test_singleton_posterior_law(self):
        cv = critical_value("B_S", 10, 100, 0.05)
        assert abs(cv.quantile - 8.724) <= 0.15

    def test_nested_posterior_law(self):
        cv = critical_value("B_N", 10, 100, 0.05)
        assert abs(cv.quantile - 5.105) <= 0.15

    def test_exp_chi2_single_term(self):
        s = simulate_law(LimitLaw(LawKind.EXP_CHI2_SUM, K=1, m_tilde=1), 30000, seed=5)
        exact = math.exp(stats.chi2.isf(0.05, 1) / 2)
        assert exact == pytest.approx(6.825936, abs=1e-6)
        assert abs(s.quantile(0.05) - exact) <= 3 * s.stderr(0.05)

    def test_order_selection_aic(self):
        cv = critical_value("L_a", 10, 100, 0.05)
        assert abs(cv.quantile - 13.521) <= 0.25

    def test_singleton_large_n_matches_exp_chi2(self):
        s = simulate_law(LimitLaw(LawKind.SINGLETON_POSTERIOR, K=1, n=10**8), 30000, seed=6)
        assert abs(s.quantile(0.05) - 6.825936) <= 3 * s.stderr(0.05)

    def test_reproducible_and_worker_invariant(self):
        law = LimitLaw(LawKind.ORDER_SEL_BIC, K=10, n=100)
        a = simulate_law(law, 20000, seed=9)
        b = simulate_law(law, 20000, seed=9, workers=3)
        np.testing.assert_array_equal(a.values, b.values)
        assert not np.array_equal(a.values, simulate_law(law, 20000, seed=10).values)

    def test_min_reps(self):
        with pytest.raises(DomainError):
            simulate_law(LimitLaw(LawKind.GUMBEL_HALF), 999)

    def test_incomplete_parameters(self):
        with pytest.raises(DomainError):
            LimitLaw(LawKind.SINGLETON_POSTERIOR, K=10)
        with pytest.raises(DomainError):
            LimitLaw(LawKind.NESTED_POSTERIOR, K=10, n=100, variant="bogus")

    def test_gumbel_sampler_matches_closed_form(self):
        s = simulate_law(LimitLaw(LawKind.GUMBEL_HALF), 50000, seed=2)
        xs = np.linspace(-2, 8, 21)
        assert np.max(np.abs(s.cdf(xs) - gumbel_half_cdf(xs))) < 0.01

    def test_stable_sampler_matches_scipy(self):
        s = simulate_law(LimitLaw(LawKind.STABLE_S1), 200000, seed=3)
        d = stats.levy_stable(1.0, 1.0)
        for x in (-1.0, 0.5, 3.0, 14.0):
            assert abs(s.cdf(x) - d.cdf(x)) < 0.004


class TestQuantiles:
    def test_order_statistic(self):
        x = np.arange(1.0, 101.0)
        assert upper_quantile(x, 0.05) == 95.0
        assert lower_quantile(x, 0.05) == 5.0
        assert upper_quantile(x, 1.0) == -math.inf

    def test_stderr_positive(self):
        x = np.sort(np.random.default_rng(0).normal(size=5000))
        assert quantile_stderr(x, 0.95) > 0

    @pytest.mark.parametrize("test", ["B_S", "B_N", "L_a", "L_b"])
    def test_monotone_in_alpha(self, test):
        qs = [critical_value(test, 10, 100, a).quantile for a in (0.10, 0.05, 0.01)]
        assert qs[0] < qs[1] < qs[2]
        assert all(critical_value(test, 10, 100, a).mc_stderr > 0 for a in (0.10, 0.05, 0.01))


class TestStableConstants:
    def test_a_K(self):
        assert stable_constants(10).a_K == pytest.approx(5.840326, abs=1e-6)
        assert stable_constants(2).a_K == pytest.approx(2.128934, abs=1e-6)

    def test_b_K_against_mc_integration(self):
        # X = exp(V/2) with V ~ chi2(1) has density 1/(sqrt(pi) x^2 sqrt(log x)) on (1, inf)
        p = stable_constants(10)
        g = rng.stream(77, 0, rng.SECONDARY)
        v = g.standard_normal(10**7) ** 2
        s = np.sin(np.exp(0.5 * v) / p.a_K)
        scale = 10 * p.a_K
        oracle, se = scale * s.mean(), scale * s.std() / math.sqrt(s.size)
        assert abs(p.b_K - oracle) <= 3 * se

    def test_ratio_grows_like_log_K(self):
        ratios = [stable_constants(K).b_K / stable_constants(K).a_K / math.log(K) for K in (2, 5, 10, 50, 200, 1000, 5000)]
        assert max(ratios) < 2.0
        assert all(stable_constants(K).a_K > 0 for K in (2, 10, 100))

    def test_K_below_two(self):
        with pytest.raises(DomainError):
            stable_constants(1)

    def test_quantiles_monotone(self):
        assert stable_quantile(0.10) < stable_quantile(0.05) < stable_quantile(0.01)

    @pytest.mark.slow
    def test_independent_seed_replication(self):
        assert abs(stable_quantile(0.05, seed=2) - stable_quantile(0.05)) <= 0.05


class TestGumbelHalf:
    def test_zero_point(self):
        assert gumbel_half_quantile(1 - math.exp(-1)) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("alpha,x", [(0.05, 5.940390), (0.10, 4.500734)])
    def test_values(self, alpha, x):
        assert gumbel_half_quantile(alpha) == pytest.approx(x, abs=1e-6)

    def test_domain(self):
        with pytest.raises(DomainError):
            gumbel_half_quantile(0.0)


class TestLindley:
    def test_closed_form_K1(self):
        assert lindley_percentile(64, 1, 0.05) == pytest.approx(0.53960, abs=5e-5)

    def test_increasing_in_n(self):
        for K in (1, 10):
            p = [lindley_percentile(n, K, reps=50000) for n in (4, 100, 400, 2500)]
            assert all(a < b for a, b in zip(p, p[1:]))

    def test_K10_crossing_matches_numpy_oracle(self):
        # the curve reaches 1/2 where sqrt(n) equals the upper alpha quantile of the sum
        g = np.random.default_rng(123)
        s = np.exp(0.5 * g.standard_normal((10**6, 10)) ** 2).sum(axis=1)
        q = np.quantile(s, 0.95)
        assert 70.0 < q < 73.0
        grid = [s * s for s in range(2, 101)]
        first = next(n for n in grid if lindley_percentile(n, 10) >= 0.5)
        assert (q - 1.0) ** 2 < first < (q + 2.0) ** 2


class TestCriticalValue:
    def test_B_S_K20(self):
        assert abs(critical_value("B_S", 20, 100, 0.05).quantile - 9.339) <= 0.15

    def test_L_b(self):
        assert abs(critical_value("L_b", 10, 100, 0.05).quantile - 5.620) <= 0.2

    def test_M_S_closed_form(self):
        cv = critical_value("M_S", 37, 100, 0.05)
        assert cv.threshold == gumbel_half_quantile(0.05)
        assert cv.kind == "asymptotic"

    def test_pi_threshold_mapping(self):
        cv = critical_value("B_N", 10, 100, 0.05)
        assert cv.threshold == pytest.approx(1 - cv.quantile / 10)

    def test_unknown_test(self):
        with pytest.raises(UsageError):
            critical_value("Z", 10, 100)

    @pytest.mark.parametrize("test", ["B_N", "L_b"])
    def test_K_invariance(self, test):
        a = critical_value(test, 10, 100, 0.05)
        b = critical_value(test, 20, 100, 0.05)
        assert abs(a.quantile - b.quantile) < 3 * _combined_se(a.mc_stderr, b.mc_stderr)

    def test_disk_cache(self, tmp_path, monkeypatch):
        monkeypatch.setenv(CACHE_ENV, str(tmp_path))
        first = critical_value("L_b", 10, 100, 0.05, reps=5000, seed=3)
        path = tmp_path / "ORDER_SEL_BIC.csv"
        rows = list(csv.DictReader(open(path)))
        assert list(rows[0]) == ["K", "n", "alpha", "reps", "seed", "quantile", "mc_stderr"]
        rows[0]["quantile"] = "123.0"
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        assert critical_value("L_b", 10, 100, 0.05, reps=5000, seed=3).quantile == 123.0
        assert first.quantile != 123.0


class TestLocalPower:
    def test_below_edge(self):
        assert theoretical_local_power(0.0, 0.5, 1.0, 0.05) == 0.05

    def test_at_edge(self):
        assert theoretical_local_power(0.0, 1.0, 1.0, 0.05) == pytest.approx(0.525)

    def test_above_edge(self):
        assert theoretical_local_power(0.0, 3.0, 1.0, 0.05) == 1.0


@pytest.mark.slow
def test_max_statistic_conservative():
    res = run_type1_study(ExperimentConfig(tests=("R_n",), reps=5000, alphas=(0.10, 0.05)))
    assert res.rates["R_n"][0.05] < 0.05
    assert res.rates["R_n"][0.10] < 0.10


@settings(max_examples=50, deadline=None)
@given(u=st.floats(-1.5707, 1.5707), w=st.floats(1e-6, 50.0))
def test_cms_transform_is_finite(u, w):
    from pibic.null_dist import cms_stable

    assert np.isfinite(cms_stable(np.array([u]), np.array([w]))[0])
