import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiercombine.classical import linear_fit, weighted_mean
from hiercombine.data import from_arrays
from hiercombine.errors import InvalidScale, RankDeficientDesign
from hiercombine.mcmc import FitConfig
from hiercombine.ubm import (
    UbmParams,
    fit_ubm,
    ubm_beta_closed,
    ubm_layout,
    ubm_log_posterior,
    ubm_mu_closed,
    ubm_theta_closed,
    ubm_weights,
)

pos = st.floats(0.05, 10)
rows = st.lists(st.tuples(st.floats(-50, 50), pos), min_size=2, max_size=15)


def split(rows):
    y, s = (np.array(v) for v in zip(*rows))
    return from_arrays(y, s), s


class TestClosedForms:
    def test_tau_zero_is_weighted_mean(self, pooled_dataset):
        mean, sd = ubm_mu_closed(pooled_dataset, 0.0, pooled_dataset.s)
        est, _ = weighted_mean(pooled_dataset)
        assert mean == pytest.approx(est.point, abs=1e-13) and sd == pytest.approx(est.se)

    def test_hand_value(self):
        assert ubm_mu_closed(from_arrays([0, 4], [1, 1]), 1.0, [1, 1]) == pytest.approx((2.0, 1.0))

    def test_large_tau_gives_raw_mean(self, pooled_dataset):
        mean, _ = ubm_mu_closed(pooled_dataset, 1e6, pooled_dataset.s)
        assert mean == pytest.approx(pooled_dataset.y.mean(), abs=1e-6)

    def test_invalid_scales(self, pooled_dataset):
        with pytest.raises(InvalidScale):
            ubm_mu_closed(pooled_dataset, -1.0, pooled_dataset.s)
        with pytest.raises(InvalidScale):
            ubm_weights(1.0, [1.0, 0.0])

    @given(rows, st.floats(0, 20))
    def test_mu_convexity(self, r, tau):
        ds, s = split(r)
        mean, _ = ubm_mu_closed(ds, tau, s)
        assert ds.y.min() - 1e-9 <= mean <= ds.y.max() + 1e-9

    def test_beta_intercept_only(self, pooled_dataset):
        X = np.ones((pooled_dataset.n, 1))
        ds = from_arrays(pooled_dataset.y, pooled_dataset.s, X)
        mean, cov = ubm_beta_closed(ds, 1.3, ds.s)
        mu, sd = ubm_mu_closed(pooled_dataset, 1.3, ds.s)
        assert mean[0] == pytest.approx(mu, abs=1e-12) and math.sqrt(cov[0, 0]) == pytest.approx(sd)

    def test_beta_equal_weights_is_ols(self, regression_dataset):
        s = np.ones(regression_dataset.n)
        mean, _ = ubm_beta_closed(regression_dataset, 0.7, s)
        ols, _ = linear_fit(from_arrays(regression_dataset.y, s, regression_dataset.X))
        np.testing.assert_allclose(mean, [e.point for e in ols], atol=1e-10)

    def test_beta_gls_oracle(self, rng):
        X = np.column_stack([np.ones(10), rng.standard_normal((10, 2))])
        y, s = rng.standard_normal(10), rng.uniform(0.5, 2, 10)
        tau = 0.8
        mean, cov = ubm_beta_closed(from_arrays(y, s, X), tau, s)
        W = np.diag(1 / (s**2 + tau**2))
        A = np.linalg.inv(X.T @ W @ X)
        np.testing.assert_allclose(mean, A @ X.T @ W @ y, atol=1e-8)
        np.testing.assert_allclose(cov, A, atol=1e-10)

    def test_beta_rank_deficient(self):
        X = np.column_stack([np.ones(4), np.ones(4)])
        with pytest.raises(RankDeficientDesign):
            ubm_beta_closed(from_arrays([1, 2, 3, 4], [1] * 4, X), 1.0, np.ones(4))

    def test_theta_limits(self):
        ds = from_arrays([4.0], [1.0])
        o = ds.observations[0]
        assert ubm_theta_closed(o, [1.5], 0.0, 1.0) == (1.5, 0.0)
        mean, _ = ubm_theta_closed(o, [1.5], 1.0, 1e-9)
        assert mean == pytest.approx(4.0)
        mean, sd = ubm_theta_closed(o, [0.0], 1.0, 1.0)
        assert mean == 2.0 and sd == pytest.approx(math.sqrt(0.5))

    @given(st.floats(-10, 10), st.floats(-10, 10), pos)
    def test_theta_monotone_shrinkage(self, y, xb, sigma):
        o = from_arrays([y], [1.0]).observations[0]
        means = [ubm_theta_closed(o, [xb], t, sigma)[0] for t in (0.0, 0.5, 1.0, 2.0, 8.0)]
        steps = np.diff(means) * np.sign(y - xb)
        assert np.all(steps >= -1e-12)

    def test_params_validation(self):
        with pytest.raises(InvalidScale):
            UbmParams(np.array([0.0]), -1.0, np.ones(2))


class TestLogPosterior:
    def test_gradient(self, regression_dataset, rng):
        n, p = regression_dataset.n, regression_dataset.p
        L = ubm_layout(p, n, False)
        for _ in range(10):
            q = rng.normal(size=L["dim"])
            _, g = ubm_log_posterior(regression_dataset, q)
            fd = np.empty_like(q)
            for k in range(q.size):
                e = np.zeros_like(q)
                e[k] = 1e-5
                fd[k] = (ubm_log_posterior(regression_dataset, q + e)[0]
                         - ubm_log_posterior(regression_dataset, q - e)[0]) / 2e-5
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)

    def test_fixed_tau_conjugate_density(self, pooled_dataset):
        # with tau fixed the mu-marginal of the log density is the closed-form normal
        tau = 1.2
        n = pooled_dataset.n
        mean, sd = ubm_mu_closed(pooled_dataset, tau, pooled_dataset.s)
        L = ubm_layout(1, n, True)
        s = pooled_dataset.s

        def mu_profile(mu):
            # optimal z given mu is the conditional mean of theta; log density there
            g = tau**2 / (tau**2 + s**2)
            theta = g * pooled_dataset.y + (1 - g) * mu
            q = np.concatenate([[mu], (theta - mu) / tau])
            return ubm_log_posterior(pooled_dataset, q, tau=tau)[0]

        a, b = mean, mean + sd
        # the profile over z is proportional to the marginal for a Gaussian model
        assert mu_profile(a) - mu_profile(b) == pytest.approx(0.5, rel=1e-8)
        assert L["dim"] == n + 1


class TestFit:
    def test_simulated_mean_recovered(self, small_config):
        rng = np.random.default_rng(21)
        n = 50
        s = np.exp(rng.normal(0.5, 0.5, n))
        theta = rng.normal(10, 3, n)
        ds = from_arrays(theta + s * rng.standard_normal(n), s)
        draws = fit_ubm(ds, small_config)
        mu = draws.flat("mu")
        assert abs(mu.mean() - 10) < 3 * mu.std()
        assert draws.parameter_names[:2] == ["mu", "tau"]
        assert draws.fixed["sigma"] == pytest.approx(list(s))

    def test_two_sources(self, small_config):
        draws = fit_ubm(from_arrays([1.0, 3.0], [1.0, 1.0]), small_config)
        assert 1.0 < draws.mean("mu") < 3.0

    def test_deterministic(self, pooled_dataset, small_config):
        a = fit_ubm(pooled_dataset, small_config)
        b = fit_ubm(pooled_dataset, small_config)
        np.testing.assert_array_equal(a.draws, b.draws)

    def test_default_retains_900(self):
        assert FitConfig().retained == 900

    def test_regression_columns(self, regression_dataset, small_config):
        d = fit_ubm(regression_dataset, small_config, tau=1.0)
        assert d.parameter_names[:3] == ["beta[1]", "beta[2]", "beta[3]"]
        assert "tau" not in d and d.fixed["tau"] == 1.0
