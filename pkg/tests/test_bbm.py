import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from hiercombine.bbm import (
    BbmParams,
    _bbm_args,
    _bbm_logp_grad,
    _collapsed_logp_grad,
    bbm_beta_theta_closed,
    bbm_conditional_y,
    bbm_layout,
    bbm_log_joint,
    bbm_log_posterior,
    bbm_mu_theta_closed,
    bbm_params_from_unconstrained,
    bbm_shrinkage,
    bbm_theta_closed,
    bbm_unconstrained_from_params,
    collapsed_layout,
    fit_bbm,
    set_sigma_s_empirical,
)
from hiercombine.data import from_arrays
from hiercombine.densities import normal_logpdf
from hiercombine.errors import (
    DegenerateUncertainty,
    InvalidCorrelation,
    InvalidScale,
    NonFiniteDensity,
    TooFewSources,
    ValidationError,
)
from hiercombine.mcmc import FitConfig
from hiercombine.simulation import ScenarioSpec, generate_dataset
from hiercombine.ubm import fit_ubm, ubm_beta_closed, ubm_mu_closed, ubm_theta_closed

corr = st.floats(-0.95, 0.95)
scale = st.floats(0.1, 5)


def params(n, rng, p=1, rho1=None, rho2=None):
    return BbmParams(
        beta_theta=rng.normal(size=p) * 3,
        beta_sigma=rng.normal(size=p) * 0.5,
        r_theta=rng.uniform(0.3, 3),
        r_sigma=rng.uniform(0.3, 2),
        rho1=rng.uniform(-0.9, 0.9) if rho1 is None else rho1,
        rho2=rng.uniform(-0.9, 0.9) if rho2 is None else rho2,
        sigma_s=rng.uniform(0.3, 2, n),
        theta=rng.normal(size=n) * 3,
        sigma=np.exp(rng.normal(size=n) * 0.5),
    )


def dataset(n, rng, p=1):
    s = np.exp(rng.normal(0.3, 0.5, n))
    y = rng.normal(5, 3, n)
    if p == 1:
        return from_arrays(y, s)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    return from_arrays(y, s, X)


class TestParams:
    def test_invariants(self, rng):
        p = params(3, rng)
        with pytest.raises(InvalidCorrelation):
            BbmParams(p.beta_theta, p.beta_sigma, 1.0, 1.0, 1.0, 0.0, p.sigma_s, p.theta, p.sigma)
        with pytest.raises(InvalidScale):
            BbmParams(p.beta_theta, p.beta_sigma, -1.0, 1.0, 0.0, 0.0, p.sigma_s, p.theta, p.sigma)


class TestConditionalY:
    def test_independence(self, rng):
        p = params(3, rng, rho1=0.0)
        ds = dataset(3, rng)
        mean, sd = bbm_conditional_y(ds, p)
        np.testing.assert_allclose(mean, p.theta)
        np.testing.assert_allclose(sd, p.sigma)

    def test_zero_residual(self, rng):
        p = params(3, rng, rho1=0.8)
        ds = from_arrays([0.0] * 3, p.sigma)
        np.testing.assert_allclose(bbm_conditional_y(ds, p)[0], p.theta)

    def test_hand_value(self):
        sig = 2.0
        ds = from_arrays([0.0], [sig * math.e])
        p = BbmParams(np.zeros(1), np.zeros(1), 1.0, 1.0, 0.5, 0.0, np.ones(1), np.zeros(1),
                      np.array([sig]))
        mean, sd = bbm_conditional_y(ds.observations[0], p)
        assert mean == pytest.approx(1.0) and sd == pytest.approx(math.sqrt(3))


class TestClosedForms:
    def test_reductions_to_ubm(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 12))
            ds = dataset(n, rng)
            p = params(n, rng, rho1=0.0, rho2=0.0)
            assert bbm_mu_theta_closed(ds, p) == pytest.approx(
                ubm_mu_closed(ds, p.r_theta, p.sigma), rel=1e-12)
            m1, s1 = bbm_theta_closed(ds, p)
            m2, s2 = ubm_theta_closed(ds, p.beta_theta, p.r_theta, p.sigma)
            np.testing.assert_allclose(m1, m2, rtol=1e-12)
            np.testing.assert_allclose(s1, s2, rtol=1e-12)

    def test_beta_reduction(self, rng):
        ds = dataset(10, rng, p=3)
        p = params(10, rng, p=3, rho1=0.0, rho2=0.0)
        b1, c1 = bbm_beta_theta_closed(ds, p)
        b2, c2 = ubm_beta_closed(ds, p.r_theta, p.sigma)
        np.testing.assert_allclose(b1, b2, rtol=1e-12)
        np.testing.assert_allclose(c1, c2, rtol=1e-12)

    def test_residual_terms_vanish(self, rng):
        n = 6
        p = params(n, rng)
        p = BbmParams(p.beta_theta, p.beta_sigma, p.r_theta, p.r_sigma, p.rho1, p.rho2,
                      p.sigma_s, p.theta, np.full(n, math.exp(p.beta_sigma[0])))
        ds = from_arrays(rng.normal(size=n), p.sigma)
        tau = p.r_theta * math.sqrt(1 - p.rho2**2)
        want = ubm_mu_closed(ds, tau, p.sigma * math.sqrt(1 - p.rho1**2))
        assert bbm_mu_theta_closed(ds, p) == pytest.approx(want, rel=1e-12)

    def test_hand_instance(self):
        p = BbmParams(np.zeros(1), np.zeros(1), 1.0, 1.0, 0.5, 0.5, np.ones(2), np.zeros(2),
                      np.ones(2))
        ds = from_arrays([0.0, 4.0], [1.0, 1.0])
        assert bbm_mu_theta_closed(ds, p)[0] == pytest.approx(2.0)

    def test_beta_intercept_only(self, rng):
        n = 8
        p = params(n, rng)
        ds = dataset(n, rng)
        dsx = from_arrays(ds.y, ds.s, np.ones((n, 1)))
        b, cov = bbm_beta_theta_closed(dsx, p)
        mean, sd = bbm_mu_theta_closed(ds, p)
        assert b[0] == pytest.approx(mean, rel=1e-12) and math.sqrt(cov[0, 0]) == pytest.approx(sd)

    def test_beta_oracle(self, rng):
        ds = dataset(10, rng, p=2)
        p = params(10, rng, p=2)
        b, cov = bbm_beta_theta_closed(ds, p)
        xi = 1 / (p.sigma**2 * (1 - p.rho1**2) + p.r_theta**2 * (1 - p.rho2**2))
        lsig = np.log(p.sigma)
        yb = (ds.y - p.rho2 * p.r_theta / p.r_sigma * (lsig - ds.X @ p.beta_sigma)
              - p.rho1 * p.sigma / p.sigma_s * (ds.log_s - lsig))
        X, W = ds.X, np.diag(xi)
        A = np.linalg.inv(X.T @ W @ X)
        np.testing.assert_allclose(b, A @ X.T @ W @ yb, atol=1e-8)

    def test_theta_hand_and_limit(self, rng):
        p = BbmParams(np.zeros(1), np.zeros(1), 1.0, 1.0, 0.0, 0.0, np.ones(1), np.zeros(1),
                      np.ones(1))
        o = from_arrays([4.0], [1.0]).observations[0]
        mean, sd = bbm_theta_closed(o, p)
        assert mean == pytest.approx(2.0) and sd == pytest.approx(math.sqrt(0.5))
        p = BbmParams(np.zeros(1), np.zeros(1), 1.0, 1.0, 0.6, 0.4, np.ones(1), np.zeros(1),
                      np.array([1e-8]))
        assert bbm_theta_closed(o, p)[0] == pytest.approx(4.0, abs=1e-6)

    @given(corr, corr, scale, st.lists(scale, min_size=1, max_size=8))
    def test_precision_bounds(self, r1, r2, rt, sig):
        sig = np.array(sig)
        n = sig.size
        p = BbmParams(np.zeros(1), np.zeros(1), rt, 1.0, r1, r2, np.ones(n), np.zeros(n), sig)
        w = bbm_shrinkage(from_arrays(np.zeros(n), np.ones(n)), p)
        assert np.all(w.xi <= 1 / (rt**2 * (1 - r2**2)) * (1 + 1e-12))
        assert np.all(w.xi <= 1 / (sig**2 * (1 - r1**2)) * (1 + 1e-12))
        assert np.all((w.zeta > 0) & (w.zeta < 1))


def fd_grad(f, q, h=1e-5):
    out = np.empty_like(q)
    for k in range(q.size):
        e = np.zeros_like(q)
        e[k] = h
        out[k] = (f(q + e) - f(q - e)) / (2 * h)
    return out


class TestLogPosterior:
    def test_gradient_full_layout(self, rng):
        ds = dataset(6, rng, p=2)
        L = bbm_layout(2, 6)
        for _ in range(10):
            q = rng.uniform(-1.5, 1.5, L["dim"])
            _, g = bbm_log_posterior(ds, q)
            fd = fd_grad(lambda x: bbm_log_posterior(ds, x)[0], q)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5)

    @pytest.mark.parametrize("fixed", [False, True])
    def test_gradient_collapsed(self, rng, fixed):
        ds = dataset(6, rng)
        args = _bbm_args(ds, FitConfig(), np.full(6, 0.7) if fixed else None)
        L = collapsed_layout(1, 6, fixed)
        for _ in range(10):
            q = rng.uniform(-1.5, 1.5, L["dim"])
            _, g = _collapsed_logp_grad(q, args)
            fd = fd_grad(lambda x: _collapsed_logp_grad(x, args)[0], q)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5)

    def test_kernel_matches_independent_joint(self, rng):
        # the kernel minus the centred joint is constant in the latents
        ds = dataset(5, rng)
        base = params(5, rng)
        diffs = []
        for _ in range(5):
            p = BbmParams(base.beta_theta, base.beta_sigma, base.r_theta, base.r_sigma, base.rho1,
                          base.rho2, base.sigma_s, rng.normal(size=5) * 3,
                          np.exp(rng.normal(size=5)))
            q = bbm_unconstrained_from_params(ds, p)
            diffs.append(bbm_log_posterior(ds, q)[0] - bbm_log_joint(ds, p))
        assert np.ptp(diffs) < 1e-10

    def test_zero_correlation_factorises(self, rng):
        n = 5
        ds = dataset(n, rng)
        p = params(n, rng, rho1=0.0, rho2=0.0)
        lsig = np.log(p.sigma)
        y_branch = np.sum(normal_logpdf(ds.y, p.theta, p.sigma)
                          + normal_logpdf(p.theta, p.beta_theta[0], p.r_theta))
        s_branch = np.sum(normal_logpdf(ds.log_s, lsig, p.sigma_s)
                          + normal_logpdf(lsig, p.beta_sigma[0], p.r_sigma))
        assert bbm_log_joint(ds, p) == pytest.approx(y_branch + s_branch, abs=1e-10)

    def test_permutation_invariance(self, rng):
        ds = dataset(7, rng)
        p = params(7, rng)
        q = bbm_unconstrained_from_params(ds, p)
        order = rng.permutation(7)
        L = bbm_layout(1, 7)
        qp = q.copy()
        for key in ("log_sigma_s", "z_theta", "z_sigma"):
            qp[L[key]] = q[L[key]][order]
        a = bbm_log_posterior(ds, q)[0]
        b = bbm_log_posterior(ds.permuted(order), qp)[0]
        assert a == pytest.approx(b, abs=1e-10)

    def test_round_trip(self, rng):
        ds = dataset(4, rng)
        p = params(4, rng)
        back = bbm_params_from_unconstrained(ds, bbm_unconstrained_from_params(ds, p))
        np.testing.assert_allclose(back.theta, p.theta, atol=1e-12)
        np.testing.assert_allclose(back.sigma, p.sigma, rtol=1e-12)

    def test_scale_coordinates_are_integrable(self, rng):
        ds = dataset(5, rng)
        L = bbm_layout(1, 5)
        q = rng.uniform(-0.5, 0.5, L["dim"])
        lp0 = bbm_log_posterior(ds, q)[0]
        idx = [L["log_r_theta"], L["log_r_sigma"], *range(L["log_sigma_s"].start, L["log_sigma_s"].stop)]
        for k in idx:
            for v in (-30.0, 30.0):
                qq = q.copy()
                qq[k] = v
                assert bbm_log_posterior(ds, qq)[0] < lp0 - 20

    def test_non_finite_reported(self, rng):
        ds = dataset(4, rng)
        q = np.zeros(bbm_layout(1, 4)["dim"])
        q[3] = np.nan
        with pytest.raises(NonFiniteDensity) as exc:
            bbm_log_posterior(ds, q, check=True)
        assert exc.value.index == 3

    def test_collapsed_is_full_with_theta_integrated(self, rng):
        """Collapsed density = log of the full density integrated over theta (plus Jacobians)."""
        n = 3
        ds = dataset(n, rng)
        args = _bbm_args(ds, FitConfig(), None)
        Lc = collapsed_layout(1, n)
        for _ in range(3):
            qc = rng.uniform(-1.5, 1.5, Lc["dim"])
            lc, _ = _collapsed_logp_grad(qc, args)
            bt, bs = qc[0], qc[1]
            rt, rs = math.exp(qc[Lc["log_r_theta"]]), math.exp(qc[Lc["log_r_sigma"]])
            r1, r2 = math.tanh(qc[Lc["u_rho1"]]), math.tanh(qc[Lc["u_rho2"]])
            ss = np.exp(qc[Lc["log_sigma_s"]])
            R, S = rs**2, ss**2
            spost = np.sqrt(R * S / (R + S))
            lsig = (bs * S + ds.log_s * R) / (R + S) + spost * qc[Lc["v"]]
            sig = np.exp(lsig)
            between, within = rt**2 * (1 - r2**2), sig**2 * (1 - r1**2)
            z = between / (between + within)
            theta0 = (z * (ds.y - r1 * sig / ss * (ds.log_s - lsig))
                      + (1 - z) * (bt + r2 * rt / rs * (lsig - bs)))

            def full(theta):
                p = BbmParams(np.array([bt]), np.array([bs]), rt, rs, r1, r2, ss, theta, sig)
                return _bbm_logp_grad(bbm_unconstrained_from_params(ds, p), args)[0]

            F0 = full(theta0)
            total = F0
            for i in range(n):
                def f(t, i=i):
                    th = theta0.copy()
                    th[i] = t
                    return math.exp(full(th) - F0)

                val, _ = integrate.quad(f, -200, 200, points=[theta0[i]], limit=400,
                                        epsabs=0, epsrel=1e-11)
                total += math.log(val)
            # full coordinates are z; d(theta, log sigma)/dz = r_theta r_sigma sqrt(1 - rho2^2)
            total -= n * math.log(rt * rs * math.sqrt(1 - r2**2))
            total += np.sum(np.log(spost))
            assert lc == pytest.approx(total, abs=1e-9)


class TestEmpiricalSigmaS:
    def test_values(self):
        np.testing.assert_allclose(set_sigma_s_empirical(from_arrays([0, 0], [1, math.e**2])),
                                   math.sqrt(2))
        with pytest.raises(DegenerateUncertainty):
            set_sigma_s_empirical(from_arrays([0, 1, 2], [1, 1, 1]))
        with pytest.raises(TooFewSources):
            set_sigma_s_empirical(from_arrays([0], [1]))


class TestFit:
    def test_recovers_mu_theta(self, small_config):
        spec = ScenarioSpec("t", rho1=0.7, rho2=0.7, seed=5)
        sim = generate_dataset(spec, 0)
        draws = fit_bbm(sim.dataset, small_config)
        mu = draws.flat("mu_theta")
        assert abs(mu.mean() - 10) < 3 * mu.std()
        assert np.all(np.abs(draws.flat("rho1")) < 1) and np.all(np.abs(draws.flat("rho2")) < 1)
        for name in ("r_theta", "r_sigma", "sigma_s[1]", "sigma[1]"):
            assert np.all(draws.flat(name) > 0)

    def test_close_to_ubm_without_correlation(self):
        cfg = FitConfig.fast(iterations=800, warmup=400)
        spec = ScenarioSpec("t")
        diffs = []
        for rep in range(20):
            ds = generate_dataset(spec, rep).dataset
            diffs.append(fit_bbm(ds, cfg).mean("mu_theta") - fit_ubm(ds, cfg).mean("mu"))
        assert abs(np.mean(diffs)) < 0.5

    def test_deterministic(self, pooled_dataset, small_config):
        a = fit_bbm(pooled_dataset, small_config)
        b = fit_bbm(pooled_dataset, small_config)
        np.testing.assert_array_equal(a.draws, b.draws)

    def test_fixed_sigma_s_removes_columns(self, pooled_dataset, small_config):
        d = fit_bbm(pooled_dataset, small_config, fix_sigma_s="empirical")
        assert not d.group("sigma_s")
        np.testing.assert_allclose(d.fixed["sigma_s"], set_sigma_s_empirical(pooled_dataset))
        d = fit_bbm(pooled_dataset, small_config, fix_sigma_s=0.5)
        assert d.fixed["sigma_s"] == [0.5] * pooled_dataset.n
        with pytest.raises(ValidationError):
            fit_bbm(pooled_dataset, small_config, fix_sigma_s="median")
        with pytest.raises(InvalidScale):
            fit_bbm(pooled_dataset, small_config, fix_sigma_s=-1.0)

    def test_regression_columns(self, regression_dataset, small_config):
        d = fit_bbm(regression_dataset, small_config, fix_sigma_s="empirical")
        assert d.parameter_names[:6] == [f"beta_theta[{j}]" for j in (1, 2, 3)] + [
            f"beta_sigma[{j}]" for j in (1, 2, 3)]

    def test_too_few_sources(self, small_config):
        with pytest.raises(TooFewSources):
            fit_bbm(from_arrays([1.0, 2.0], [1.0, 1.0]), small_config)

    def test_parameterisations_agree(self):
        """Both samplers target the same posterior: means agree within Monte-Carlo error."""
        sim = generate_dataset(ScenarioSpec("t", n=20, rho1=0.5, rho2=0.3, seed=8), 0)
        cfg = FitConfig(chains=2, iterations=3000, warmup=1000, thin=1, seed=4)
        a = fit_bbm(sim.dataset, cfg, fix_sigma_s="empirical")
        b = fit_bbm(sim.dataset, cfg, fix_sigma_s="empirical", parameterization="full")
        assert a.sampler_stats["parameterization"] == "collapsed"
        for name in ("mu_theta", "mu_sigma", "rho1", "theta[1]", "sigma[2]"):
            da, db = a.diagnostics[name], b.diagnostics[name]
            x, y = a.flat(name), b.flat(name)
            mcse = math.sqrt(x.var() / da["ess"] + y.var() / db["ess"])
            assert abs(x.mean() - y.mean()) < 4 * mcse, name
