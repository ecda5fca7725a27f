import csv
import math

import numpy as np
import pytest

from hiercombine.errors import ValidationError
from hiercombine.mcmc import FitConfig
from hiercombine.simulation import (
    METRIC_COLUMNS, RECORD_COLUMNS, THETA_COLUMNS, ScenarioSpec, generate_dataset,
    scenario_catalogue, replicate_seed, run_study, summarize, theta_recovery_report,
    theta_rows_to_csv,
)


def oracle(ds, truth, seed):
    return {p: (v, v, v) for p, v in truth.targets.items()}


class TestScenarioSpec:
    @pytest.mark.parametrize("kw", [dict(r_theta=0), dict(sigma_s=-1), dict(rho1=1.0),
                                    dict(rho2=-1.0), dict(n_reps=0), dict(covariate_mode="x"),
                                    dict(covariate_mode="regression", beta_theta=(1, 2))])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            ScenarioSpec(**kw)

    def test_round_trip(self):
        s = ScenarioSpec("a", rho1=0.3, covariate_mode="regression")
        assert ScenarioSpec.from_dict(s.to_dict()) == s
        with pytest.raises(ValidationError):
            ScenarioSpec.from_dict({"bogus": 1})

    def test_catalogue(self):
        cat = scenario_catalogue(n_reps=5)
        assert len(cat) == 12
        assert cat["reg-r12"].rho1 == cat["reg-r12"].rho2 == 0.7
        assert cat["reg-r12"].targets() == {"beta[1]": 5.0, "beta[2]": 3.0, "beta[3]": 1.0}
        assert cat["homog-r0"].mu_sigma == 0.2 and cat["homog-r0"].r_sigma == 0.1


class TestGenerate:
    def test_deterministic(self):
        spec = ScenarioSpec("d", covariate_mode="regression")
        a, b = generate_dataset(spec, 3), generate_dataset(spec, 3)
        np.testing.assert_array_equal(a.dataset.y, b.dataset.y)
        np.testing.assert_array_equal(a.dataset.X, b.dataset.X)
        np.testing.assert_array_equal(a.truth.theta, b.truth.theta)
        assert not np.array_equal(a.dataset.y, generate_dataset(spec, 4).dataset.y)

    def test_replicate_seed_distinct(self):
        seeds = {replicate_seed(1, sc, r) for sc in ("a", "b") for r in range(50)}
        assert len(seeds) == 100

    def test_uncorrelated_errors(self):
        sim = generate_dataset(ScenarioSpec("c"), 0, n=10_000)
        e1 = sim.dataset.y - sim.truth.theta
        e2 = np.log(sim.dataset.s) - np.log(sim.truth.sigma)
        assert abs(np.corrcoef(e1, e2)[0, 1]) < 0.03

    def test_correlated_errors(self):
        sim = generate_dataset(ScenarioSpec("c", rho1=0.7, rho2=0.7), 0, n=10_000)
        e1 = (sim.dataset.y - sim.truth.theta) / sim.truth.sigma
        e2 = np.log(sim.dataset.s) - np.log(sim.truth.sigma)
        assert abs(np.corrcoef(e1, e2)[0, 1] - 0.7) < 0.03
        assert abs(np.corrcoef(sim.truth.theta, np.log(sim.truth.sigma))[0, 1] - 0.7) < 0.03

    def test_law_of_large_numbers(self):
        sim = generate_dataset(ScenarioSpec("l", mu_theta=10, r_theta=3), 0, n=10_000)
        assert abs(sim.truth.theta.mean() - 10) < 0.1

    def test_regression_design(self):
        sim = generate_dataset(ScenarioSpec("r", covariate_mode="regression"), 0, n=10_000)
        X = sim.dataset.X
        assert X.shape == (10_000, 3) and np.all(X[:, 0] == 1)
        assert set(np.unique(X[:, 2])) == {0.0, 1.0}
        assert abs(X[:, 2].mean() - 0.2) < 0.02
        coef = np.linalg.lstsq(X, sim.truth.theta, rcond=None)[0]
        np.testing.assert_allclose(coef, [5, 3, 1], atol=0.15)


class TestRunStudy:
    def test_oracle_method(self):
        specs = [ScenarioSpec("m", n_reps=5), ScenarioSpec("r", n_reps=5, covariate_mode="regression")]
        out = run_study(specs, ["oracle"], custom_methods={"oracle": oracle})
        assert len(out.rows) == 4
        for row in out.rows:
            assert (row.bias, row.mse, row.coverage, row.n_reps, row.failures) == (0, 0, 1, 5, 0)

    def test_classical_metrics(self):
        spec = ScenarioSpec("m", n_reps=30)
        out = run_study([spec], ["raw", "weighted", "trimmed"], bootstrap_B=200)
        for row in out.rows:
            assert 0 <= row.coverage <= 1
            assert row.mse >= row.bias**2 * (1 - 1 / row.n_reps) - 1e-12
        recs = [r for r in out.records if r.method == "raw"]
        err = np.array([r.estimate - 10 for r in recs])
        assert out.get("m", "raw", "mu").bias == pytest.approx(err.mean())
        assert out.get("m", "raw", "mu").mse == pytest.approx(np.mean(err**2))

    def test_order_invariance(self):
        spec = ScenarioSpec("m", n_reps=8)
        a = run_study([spec], ["raw", "weighted"])
        b = run_study([spec], ["raw", "weighted"], reps=[7, 2, 5, 0, 3, 6, 1, 4])
        assert a.rows == b.rows
        assert a.records == b.records
        shuffled = list(reversed(a.records))
        assert summarize(shuffled, {}, [spec], ["raw", "weighted"]) == a.rows

    def test_workers_match_serial(self):
        spec = ScenarioSpec("m", n_reps=4)
        assert run_study([spec], ["raw"], workers=2).rows == run_study([spec], ["raw"]).rows

    def test_failures_counted(self):
        def flaky(ds, truth, seed):
            if seed % 2:
                raise ValidationError("boom")
            return oracle(ds, truth, seed)
        spec = ScenarioSpec("m", n_reps=10)
        row = run_study([spec], ["flaky"], custom_methods={"flaky": flaky}).rows[0]
        assert row.n_reps + row.failures == 10 and row.failures > 0

    def test_validation(self):
        spec = ScenarioSpec("m", n_reps=2)
        with pytest.raises(ValidationError):
            run_study([spec], ["lr"])
        with pytest.raises(ValidationError):
            run_study([spec], ["ubm"])
        with pytest.raises(ValidationError):
            run_study([spec, spec], ["raw"])
        with pytest.raises(ValidationError):
            run_study([spec], ["nope"])

    def test_csv_outputs(self, tmp_path):
        out = run_study([ScenarioSpec("m", n_reps=3)], ["raw"])
        out.to_csv(tmp_path / "m.csv")
        out.records_to_csv(tmp_path / "r.csv")
        with open(tmp_path / "m.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == METRIC_COLUMNS and len(rows) == 2
        with open(tmp_path / "r.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == RECORD_COLUMNS and len(rows) == 4


@pytest.fixture(scope="module")
def fast():
    return FitConfig(chains=2, iterations=800, warmup=400, thin=1, seed=1)


class TestThetaReport:
    def test_rows(self, fast, tmp_path):
        spec = ScenarioSpec("t", n=12, rho1=0.7, rho2=0.7)
        rows = theta_recovery_report(spec, fast)
        assert len(rows) == 12
        d = [r.distance for r in rows]
        assert d == sorted(d, reverse=True)
        for r in rows:
            assert r.y_low < r.y < r.y_high
            assert r.bbm_low <= r.bbm <= r.bbm_high and r.ubm_low <= r.ubm <= r.ubm_high
        theta_rows_to_csv(rows, tmp_path / "t.csv")
        with open(tmp_path / "t.csv") as fh:
            assert tuple(next(csv.reader(fh))) == THETA_COLUMNS

    def test_regression_rejected(self, fast):
        with pytest.raises(ValidationError):
            theta_recovery_report(ScenarioSpec("r", covariate_mode="regression"), fast)


@pytest.mark.slow
def test_homogeneous_coverage():
    spec = scenario_catalogue(n_reps=100)["homog-r0"]
    out = run_study([spec], ["raw", "bbm"], FitConfig.fast())
    for m in ("raw", "bbm"):
        row = out.get("homog-r0", m, "mu")
        print(m, row)
        assert 0.90 <= row.coverage <= 0.98
        assert not math.isnan(row.bias)
