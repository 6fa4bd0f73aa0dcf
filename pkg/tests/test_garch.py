import math

import numpy as np
import pytest
from statsmodels.tsa.stattools import adfuller

from rnntrader.garch import (
    AdfVariant,
    CRITICAL_VALUES,
    ConstraintInfeasibleError,
    GarchFit,
    SeriesTooShortError,
    adf_test,
    fit_garch11,
    garch_attributes,
    garch_loglik,
    simulate_garch,
    variance_recursion,
)

TRUE_PARAMS = (0.0, 0.1, 0.2, 0.7)


def _ar1(n, coeff, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    eps = rng.normal(0, scale, n)
    y = np.empty(n)
    y[0] = eps[0]
    for t in range(1, n):
        y[t] = coeff * y[t - 1] + eps[t]
    return y


def _random_walk(n, seed):
    rng = np.random.default_rng(seed)
    return np.cumsum(rng.normal(0, 1, n))


class TestVarianceRecursion:
    def test_one_step_hand_value(self):
        # alpha0 + alpha1 * mu^2 + beta1 * sigma2 = 0.1 + 0.2*0.25 + 0.7*1.0
        sigma2 = variance_recursion(np.array([0.5, 0.0]), 0.1, 0.2, 0.7, init=1.0)
        assert sigma2[1] == pytest.approx(0.85, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_recursion_holds_term_by_term(self, seed):
        rng = np.random.default_rng(seed)
        mu = rng.normal(0, 1, 500)
        a0, a1, b1 = 0.05, 0.15, 0.8
        sigma2 = variance_recursion(mu, a0, a1, b1)
        assert sigma2[0] == np.var(mu)
        # independent plain-loop recomputation
        worst = 0.0
        prev = sigma2[0]
        for t in range(1, len(mu)):
            expected = a0 + a1 * mu[t - 1] ** 2 + b1 * prev
            worst = max(worst, abs(sigma2[t] - expected))
            prev = sigma2[t]
        assert worst < 1e-10

    def test_positive_throughout(self):
        mu = np.zeros(100)
        sigma2 = variance_recursion(mu, 0.1, 0.2, 0.7, init=5.0)
        assert (sigma2 > 0).all()


class TestSimulate:
    def test_deterministic_by_seed(self):
        a = simulate_garch(TRUE_PARAMS, 200, seed=42)
        b = simulate_garch(TRUE_PARAMS, 200, seed=42)
        c = simulate_garch(TRUE_PARAMS, 200, seed=43)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_unconditional_variance(self):
        # alpha0 / (1 - alpha1 - beta1) = 0.1 / 0.1 = 1.0
        y = simulate_garch(TRUE_PARAMS, 10_000, seed=7)
        assert np.var(y) == pytest.approx(1.0, rel=0.2)

    def test_infeasible_params(self):
        with pytest.raises(ConstraintInfeasibleError):
            simulate_garch((0.0, 0.1, 0.5, 0.6), 100, seed=0)
        with pytest.raises(ConstraintInfeasibleError):
            simulate_garch((0.0, -0.1, 0.2, 0.7), 100, seed=0)


class TestFit:
    def test_recovers_simulated_parameters(self):
        y = simulate_garch(TRUE_PARAMS, 5_000, seed=11)
        fit = fit_garch11(y)
        assert fit.alpha0 == pytest.approx(0.1, abs=0.1)
        assert fit.alpha1 == pytest.approx(0.2, abs=0.1)
        assert fit.beta1 == pytest.approx(0.7, abs=0.1)
        assert abs(fit.phi) < 0.1

    def test_constraints_hold(self):
        y = simulate_garch(TRUE_PARAMS, 2_000, seed=3)
        fit = fit_garch11(y)
        assert fit.alpha0 > 0
        assert fit.alpha1 >= 0 and fit.beta1 >= 0
        assert fit.alpha1 + fit.beta1 < 1

    def test_white_noise_has_no_arch_effect(self):
        rng = np.random.default_rng(5)
        fit = fit_garch11(rng.normal(0, 1, 3_000))
        assert abs(fit.alpha1) < 0.1

    def test_constant_series_infeasible(self):
        with pytest.raises(ConstraintInfeasibleError):
            fit_garch11(np.full(100, 7.0))

    def test_too_short(self):
        with pytest.raises(SeriesTooShortError):
            fit_garch11(np.arange(10.0))

    def test_loglik_beats_grid(self):
        y = simulate_garch(TRUE_PARAMS, 1_500, seed=19)
        fit = fit_garch11(y)
        for alpha0 in np.linspace(0.02, 0.5, 5):
            for alpha1 in np.linspace(0.02, 0.45, 5):
                for beta1 in np.linspace(0.02, 0.9, 5):
                    if alpha1 + beta1 >= 0.999:
                        continue
                    ll = garch_loglik(y, fit.phi, alpha0, alpha1, beta1)
                    assert fit.loglik >= ll - 1e-9

    def test_attribute_series_alignment(self):
        y = simulate_garch(TRUE_PARAMS, 500, seed=23)
        fit = fit_garch11(y)
        assert np.isnan(fit.mu[0]) and np.isnan(fit.sigma2[0])
        assert np.isfinite(fit.mu[1:]).all()
        assert (fit.sigma2[1:] > 0).all()
        np.testing.assert_allclose(fit.mu[1:], y[1:] - fit.phi * y[:-1])

    def test_garch_attributes_recomputes_consistently(self):
        y = simulate_garch(TRUE_PARAMS, 400, seed=29)
        fit = fit_garch11(y)
        mu, sigma2 = garch_attributes(fit)
        np.testing.assert_array_equal(mu[1:], fit.mu[1:])
        np.testing.assert_allclose(sigma2[1:], fit.sigma2[1:], rtol=1e-12)


class TestAdf:
    def test_matches_reference_implementation_no_terms(self):
        y = _ar1(500, 0.5, seed=1)
        ours = adf_test(y, AdfVariant.NONE, lags=1)
        ref_stat = adfuller(y, maxlag=1, regression="n", autolag=None)[0]
        assert ours.statistic == pytest.approx(ref_stat, rel=1e-8)

    def test_matches_reference_implementation_trend(self):
        y = _ar1(500, 0.5, seed=2) + 0.01 * np.arange(500)
        ours = adf_test(y, AdfVariant.TREND, lags=1)
        ref_stat = adfuller(y, maxlag=1, regression="ct", autolag=None)[0]
        assert ours.statistic == pytest.approx(ref_stat, rel=1e-8)

    def test_stationary_series_rejects(self):
        y = _ar1(2_000, 0.5, seed=3)
        res = adf_test(y, AdfVariant.NONE)
        assert res.reject_at_1pct
        assert res.statistic < -2.58

    def test_random_walk_does_not_reject(self):
        y = _random_walk(2_000, seed=4)
        res = adf_test(y, AdfVariant.NONE)
        assert not res.reject_at_1pct

    def test_reject_flag_is_consistent_with_table(self):
        for seed in range(4):
            for series in (_ar1(300, 0.6, seed), _random_walk(300, seed)):
                for variant in AdfVariant:
                    res = adf_test(series, variant)
                    assert res.reject_at_1pct == (
                        res.statistic < res.critical_values[0.01]
                    )

    def test_trend_variant_reports_joint_stats(self):
        y = _ar1(400, 0.5, seed=6)
        res = adf_test(y, AdfVariant.TREND)
        assert res.joint_stats is not None
        phi2, phi3 = res.joint_stats
        assert phi2 > 0 and phi3 > 0
        assert adf_test(y, AdfVariant.NONE).joint_stats is None

    def test_critical_value_table(self):
        assert CRITICAL_VALUES["tau1"][0.01] == -2.58
        assert CRITICAL_VALUES["tau3"][0.01] == -3.96
        assert CRITICAL_VALUES["phi2"][0.01] == 6.09
        assert CRITICAL_VALUES["phi3"][0.01] == 8.27

    def test_too_short(self):
        with pytest.raises(SeriesTooShortError):
            adf_test(np.arange(8.0), AdfVariant.NONE)

    def test_zero_lag_regression(self):
        y = _ar1(300, 0.4, seed=8)
        res = adf_test(y, AdfVariant.NONE, lags=0)
        ref_stat = adfuller(y, maxlag=0, regression="n", autolag=None)[0]
        assert res.statistic == pytest.approx(ref_stat, rel=1e-8)
