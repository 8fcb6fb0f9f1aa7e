from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from pibic.bootstrap import BootstrapSpec, glm_null_generator, run_bootstrap, tail_of
from pibic.exceptions import BootstrapError, DomainError
from pibic.glm import BERNOULLI, GAUSSIAN, POISSON, Dataset, fit_mle


def _uniform_first(g):
    return g.random(3)


class TestRunBootstrap:
    def test_constant_statistic(self):
        spec = BootstrapSpec(_uniform_first, lambda d: 1.5, B=100, seed=1)
        assert run_bootstrap(spec, 1.5).p_value == 1.0

    def test_uniform_quantile_oracle(self):
        spec = BootstrapSpec(_uniform_first, lambda d: d[0], B=9999, seed=2)
        assert abs(run_bootstrap(spec, 0.5).p_value - 0.5) <= 0.02

    def test_deterministic_and_worker_invariant(self):
        spec = BootstrapSpec(_uniform_first, lambda d: d.sum(), B=300, seed=3)
        a = run_bootstrap(spec, 1.7)
        b = run_bootstrap(spec, 1.7, workers=4)
        assert a.p_value == b.p_value
        np.testing.assert_array_equal(a.null_sample, b.null_sample)

    def test_lower_tail(self):
        spec = BootstrapSpec(_uniform_first, lambda d: d[0], B=999, seed=4, tail="lower")
        assert run_bootstrap(spec, 0.1).p_value == pytest.approx(0.1, abs=0.03)

    def test_never_zero(self):
        spec = BootstrapSpec(_uniform_first, lambda d: d[0], B=100, seed=5)
        assert run_bootstrap(spec, 10.0).p_value == pytest.approx(1 / 101)

    def test_several_statistics(self):
        spec = BootstrapSpec(_uniform_first, lambda d: (d[0], d[1]), B=200, seed=6, tail=("upper", "lower"))
        res = run_bootstrap(spec, (0.9, 0.9))
        assert res.p_values[0] < 0.2 < 0.8 < res.p_values[1]

    def test_failures_recorded(self):
        def stat(d):
            if d[0] < 0.03:
                raise RuntimeError("boundary")
            return d[0]

        res = run_bootstrap(BootstrapSpec(_uniform_first, stat, B=400, seed=7), 0.5)
        assert 0 < len(res.failures) <= 20
        assert all("boundary" in msg for _, msg in res.failures)
        assert np.isnan(res.null_sample[res.failures[0][0]])

    def test_too_many_failures(self):
        def stat(d):
            if d[0] < 0.2:
                raise RuntimeError("boom")
            return d[0]

        with pytest.raises(BootstrapError):
            run_bootstrap(BootstrapSpec(_uniform_first, stat, B=200, seed=8), 0.5)

    def test_B_minimum(self):
        with pytest.raises(DomainError):
            BootstrapSpec(_uniform_first, lambda d: 0.0, B=99)

    def test_tails_registered(self):
        assert tail_of("pi_bic") == "lower" and tail_of("B_S") == "lower"
        assert tail_of("L_a") == "upper" and tail_of("S_n") == "upper"


@pytest.mark.slow
def test_p_values_uniform_under_own_law():
    ps = []
    for i in range(500):
        obs = np.random.default_rng(10_000 + i).standard_normal(5).max()
        spec = BootstrapSpec(lambda g: g.standard_normal(5), lambda d: d.max(), B=100, seed=i)
        ps.append(run_bootstrap(spec, obs).p_value)
    assert stats.kstest(ps, "uniform").statistic < 0.1


@pytest.mark.parametrize("family,y", [
    (GAUSSIAN, np.linspace(0.0, 2.0, 30)),
    (POISSON, np.arange(30.0) % 5),
    (BERNOULLI, (np.arange(30) % 3 == 0).astype(float)),
])
def test_glm_null_generator(family, y):
    x = np.linspace(0, 1, 30)
    data = Dataset(x, y)
    fit = fit_mle(family, np.ones((30, 1)), data)
    gen = glm_null_generator(family, fit, data)
    draws = np.array([gen(np.random.default_rng(s)).response for s in range(400)])
    assert draws.shape == (400, 30)
    assert abs(draws.mean() - y.mean()) < 0.05 * max(1.0, y.mean())
    if family is not GAUSSIAN:
        assert np.all(draws == np.round(draws))
