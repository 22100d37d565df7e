import math

import numpy as np
import pytest
from scipy import integrate, stats

from app.errors import DomainError, EmptySample
from app.special_fn import (
    f_cdf,
    f_p_two_sided,
    ks_asymptotic_p,
    ks_exact_permutation_p,
    ks_statistic,
    ks_two_sample,
    log_gamma,
    reg_inc_beta,
    sample_quantile,
    t_p_two_sided,
)


class TestLogGamma:
    @pytest.mark.parametrize("z, expected", [
        (0.5, 0.5723649429247001),
        (1.0, 0.0),
        (2.0, 0.0),
        (10.0, 12.801827480081469),
        (100.5, math.lgamma(100.5)),
    ])
    def test_reference_values(self, z, expected):
        assert log_gamma(z) == pytest.approx(expected, abs=1e-10)

    @pytest.mark.parametrize("z", [0.0, -1.0, float("inf"), float("nan")])
    def test_rejects_outside_domain(self, z):
        with pytest.raises(DomainError):
            log_gamma(z)


class TestRegIncBeta:
    def test_boundaries(self):
        assert reg_inc_beta(2.0, 3.0, 0.0) == 0.0
        assert reg_inc_beta(2.0, 3.0, 1.0) == 1.0

    def test_matches_beta_cdf(self):
        for a, b, x in [(0.5, 0.5, 0.3), (2.0, 5.0, 0.7), (30.0, 0.5, 0.99)]:
            assert reg_inc_beta(a, b, x) == pytest.approx(stats.beta.cdf(x, a, b), abs=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            reg_inc_beta(0.0, 1.0, 0.5)
        with pytest.raises(DomainError):
            reg_inc_beta(1.0, 1.0, 1.5)


class TestTailProbabilities:
    @pytest.mark.parametrize("df", [1.0, 2.0, 5.0, 10.0, 30.0])
    @pytest.mark.parametrize("t", np.linspace(0.1, 4.0, 10))
    def test_t_p_matches_integrated_density(self, t, df):
        tail, _ = integrate.quad(lambda u: stats.t.pdf(u, df), abs(t), np.inf, epsabs=1e-12)
        assert t_p_two_sided(t, df) == pytest.approx(2.0 * tail, abs=1e-6)
        assert t_p_two_sided(-t, df) == t_p_two_sided(t, df)

    def test_t_zero_has_p_one(self):
        assert t_p_two_sided(0.0, 7.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("d1, d2", [(2, 3), (3, 5), (5, 10), (10, 20), (20, 40)])
    @pytest.mark.parametrize("f", [0.2, 0.5, 0.9, 1.0, 1.5, 2.5, 4.0, 6.0, 9.0, 15.0])
    def test_f_p_matches_integrated_density(self, f, d1, d2):
        cdf, _ = integrate.quad(lambda u: stats.f.pdf(u, d1, d2), 0.0, f, epsabs=1e-12)
        assert f_cdf(f, d1, d2) == pytest.approx(cdf, abs=1e-6)
        assert f_p_two_sided(f, d1, d2) == pytest.approx(min(1.0, 2.0 * min(cdf, 1.0 - cdf)), abs=1e-6)

    def test_f_p_is_reciprocal_symmetric(self):
        assert f_p_two_sided(2.0, 4, 9) == pytest.approx(f_p_two_sided(0.5, 9, 4), abs=1e-14)

    def test_f_domain(self):
        with pytest.raises(DomainError):
            f_cdf(-1.0, 2, 3)


class TestKolmogorovSmirnov:
    def test_separated_samples(self):
        assert ks_statistic([10.0, 11.0], [0.0, 1.0]) == 1.0

    def test_identical_samples(self):
        d, p = ks_two_sample([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert d == 0.0
        assert p == 1.0

    def test_matches_scipy_statistic(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = rng.normal(size=rng.integers(2, 30))
            b = rng.normal(0.3, 1.2, size=rng.integers(2, 30))
            assert ks_statistic(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-12)

    def test_asymptotic_p_in_unit_interval(self):
        for d in np.linspace(0.0, 1.0, 11):
            assert 0.0 <= ks_asymptotic_p(d, 12, 7) <= 1.0

    def test_exact_permutation_p(self):
        # Of the 6 ways to label 2 of 4 values, 2 reach D = 1
        assert ks_exact_permutation_p([10.0, 11.0], [0.0, 1.0]) == pytest.approx(1.0 / 3.0)
        assert ks_exact_permutation_p([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0

    def test_empty_sample(self):
        with pytest.raises(EmptySample):
            ks_statistic([], [1.0])


class TestSampleQuantile:
    def test_linear_rule(self):
        values = np.arange(1, 1001) / 1000.0
        assert sample_quantile(values, 0.025) == pytest.approx(0.025975, abs=1e-12)
        assert sample_quantile(values, 0.975) == pytest.approx(0.975025, abs=1e-12)

    def test_exact_at_endpoints(self):
        values = [1.0, 4.0, 9.0]
        assert sample_quantile(values, 0.0) == 1.0
        assert sample_quantile(values, 1.0) == 9.0
        assert sample_quantile(values, 0.5) == 4.0

    def test_errors(self):
        with pytest.raises(EmptySample):
            sample_quantile([], 0.5)
        with pytest.raises(DomainError):
            sample_quantile([1.0], 1.5)
