import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiercombine.bbm import BbmParams, fit_bbm
from hiercombine.checking import PpcResult, discrepancy_T, ppc_arrays, ppc_pvalue
from hiercombine.data import from_arrays
from hiercombine.errors import InvalidCorrelation, MissingParameter
from hiercombine.mcmc import FitConfig, PosteriorDraws
from hiercombine.simulation import ScenarioSpec, generate_dataset


def params(n, theta=None, sigma=None, rho1=0.0, sigma_s=None):
    return BbmParams(np.zeros(1), np.zeros(1), 1.0, 1.0, rho1, 0.0,
                     np.ones(n) if sigma_s is None else sigma_s,
                     np.zeros(n) if theta is None else theta,
                     np.ones(n) if sigma is None else sigma)


class TestDiscrepancy:
    def test_zero_at_conditional_means(self):
        p = params(3, theta=np.array([1.0, 2.0, 3.0]), sigma=np.array([1.0, 2.0, 0.5]), rho1=0.6)
        ls = np.log([2.0, 1.0, 0.7])
        y = p.theta + p.rho1 * p.sigma / p.sigma_s * (ls - np.log(p.sigma))
        assert discrepancy_T(from_arrays(y, np.exp(ls)), p) == pytest.approx(0.0, abs=1e-24)

    def test_hand_value(self):
        assert discrepancy_T(from_arrays([1.0, -1.0], [1.0, 1.0]), params(2)) == pytest.approx(2.0)

    def test_chi_square_mean(self):
        rng = np.random.default_rng(0)
        n = 20
        p = params(n, theta=rng.normal(size=n), sigma=np.exp(rng.normal(size=n) * 0.3))
        ts = [discrepancy_T(from_arrays(p.theta + p.sigma * rng.standard_normal(n), np.ones(n)), p)
              for _ in range(2000)]
        # chi-square with n degrees of freedom: mean n, sd sqrt(2n)
        assert abs(np.mean(ts) - n) < 4 * np.sqrt(2 * n / 2000)

    def test_invalid_correlation(self):
        p = params(2)
        object.__setattr__(p, "rho1", 1.0)
        with pytest.raises(InvalidCorrelation):
            discrepancy_T(from_arrays([0.0, 0.0], [1.0, 1.0]), p)

    @given(st.lists(st.tuples(st.floats(-20, 20), st.floats(0.1, 10)), min_size=1, max_size=10),
           st.floats(-0.9, 0.9), st.randoms())
    def test_nonnegative_and_permutation_invariant(self, rows, rho1, rnd):
        y, s = (np.array(v) for v in zip(*rows))
        n = y.size
        p = params(n, rho1=rho1, sigma=s[::-1].copy())
        t = discrepancy_T(from_arrays(y, s), p)
        assert t >= 0
        order = list(range(n))
        rnd.shuffle(order)
        q = params(n, rho1=rho1, sigma=p.sigma[order])
        assert discrepancy_T(from_arrays(y[order], s[order]), q) == pytest.approx(t, rel=1e-10)


@pytest.fixture(scope="module")
def fitted():
    sim = generate_dataset(ScenarioSpec("ppc", n=30, rho1=0.5, rho2=0.5, seed=3), 0)
    cfg = FitConfig(chains=2, iterations=1000, warmup=500, thin=1, seed=3)
    return sim.dataset, fit_bbm(sim.dataset, cfg)


class TestPpc:
    def test_result_shape(self, fitted):
        ds, draws = fitted
        res = ppc_pvalue(ds, draws)
        assert isinstance(res, PpcResult) and res.n_draws == draws.n_draws
        assert res.p_value == np.mean(res.t_rep >= res.t_obs)
        assert 0.05 < res.p_value < 0.95
        assert res.to_dict() == {"p_value": res.p_value, "n_draws": res.n_draws}

    def test_misfit_detected(self, fitted):
        ds, draws = fitted
        inflated = from_arrays(ds.y * 10, ds.s)
        assert ppc_pvalue(inflated, draws).p_value < 0.05

    def test_reproducible_and_seeded(self, fitted):
        ds, draws = fitted
        assert ppc_pvalue(ds, draws).p_value == ppc_pvalue(ds, draws).p_value
        assert ppc_pvalue(ds, draws, seed=1).p_value != ppc_pvalue(ds, draws, seed=2).p_value

    def test_draw_permutation(self, fitted):
        ds, draws = fitted
        res = ppc_pvalue(ds, draws)
        order = np.random.default_rng(0).permutation(res.n_draws)
        assert np.mean(res.t_rep[order] >= res.t_obs[order]) == res.p_value

    def test_doubling_draws(self, fitted):
        ds, draws = fitted
        half = PosteriorDraws(draws.parameter_names, draws.draws[:, ::2], draws.config,
                              draws.divergences, fixed=draws.fixed, model="bbm")
        a = ppc_pvalue(ds, half, seed=5).p_value
        b = ppc_pvalue(ds, draws, seed=5).p_value
        assert abs(a - b) < 2 / np.sqrt(draws.n_draws)

    def test_fixed_sigma_s(self, fitted):
        ds, _ = fitted
        cfg = FitConfig(chains=2, iterations=400, warmup=200, thin=1, seed=3)
        d = fit_bbm(ds, cfg, fix_sigma_s="empirical")
        theta, sigma, rho1, ss = ppc_arrays(d, ds.n)
        assert ss.shape == (1, ds.n) and theta.shape == (d.n_draws, ds.n)
        assert 0.0 <= ppc_pvalue(ds, d).p_value <= 1.0

    def test_missing_parameter(self, fitted):
        ds, draws = fitted
        keep = [k for k, nm in enumerate(draws.parameter_names) if nm != "rho1"]
        d = PosteriorDraws([draws.parameter_names[k] for k in keep], draws.draws[:, :, keep],
                           draws.config, draws.divergences)
        with pytest.raises(MissingParameter) as exc:
            ppc_pvalue(ds, d)
        assert exc.value.name == "rho1"
