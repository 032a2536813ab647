import numpy as np
import numpy.testing as npt
import pytest

from propweight import rng as rng_mod
from propweight.balance import TuningGrid
from propweight.exceptions import ConfigError, DataError
from propweight.simulation import (SCENARIO_IDS, ScenarioConfig,
                                   compute_metrics, compute_mos,
                                   generate_population, pps_sample,
                                   run_scenario)
from propweight.weights import Method, hajek_mean


class TestGeneratePopulation:
    def test_population_mean_near_017(self):
        for seed in (0, 1, 2):
            pop = generate_population(50_000, seed)
            assert 0.16 <= pop.mu <= 0.18

    def test_blended_covariate_variance(self):
        pop = generate_population(50_000, 3)
        x5 = pop.covariates[:, 4]
        analytic = 1.171 ** 2 * (0.16 ** 2 + 0.84 ** 2)
        assert x5.var() == pytest.approx(analytic, abs=0.05)

    def test_blended_covariate_correlation(self):
        pop = generate_population(50_000, 4)
        x1 = pop.covariates[:, 0]
        x5 = pop.covariates[:, 4]
        cov = np.mean((x1 - x1.mean()) * (x5 - x5.mean()))
        assert cov == pytest.approx(1.171 * 0.16, abs=0.03)

    def test_seeded_reproducibility(self):
        a = generate_population(2_000, 9)
        b = generate_population(2_000, 9)
        npt.assert_array_equal(a.covariates, b.covariates)
        npt.assert_array_equal(a.outcome, b.outcome)


class TestComputeMos:
    def test_zero_covariates_give_unit_mos_everywhere(self):
        x = np.zeros((3, 7))
        for scenario in SCENARIO_IDS + ("survey",):
            npt.assert_array_equal(compute_mos(scenario, x), np.ones(3))

    def test_linear_scenario_single_term(self):
        x = np.zeros((1, 7))
        x[0, 0] = 1.0
        assert compute_mos("I0Q0", x)[0] == pytest.approx(np.exp(0.3),
                                                          rel=1e-15)

    def test_severe_scenario_all_ones_oracle(self):
        # independent transcription: sum the seventeen terms at x = 1
        terms = [1, 1, 1.5, 1.5, -0.8, -0.5, 0.7,      # main effects
                 1, 1.5, 0.7,                          # squares
                 1, 1, 1.5, -0.8,                      # pairwise products
                 1.5, 1, 1]                            # higher-order terms
        expected = np.exp(0.18 * sum(terms))
        x = np.ones((1, 7))
        assert compute_mos("I3Q3", x)[0] == pytest.approx(expected, rel=1e-12)

    def test_survey_mos_uses_log_linear_coefficients(self):
        x = np.zeros((1, 7))
        x[0, 6] = 2.0
        assert compute_mos("survey", x)[0] == pytest.approx(
            np.exp(0.14 * 2), rel=1e-15)

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ConfigError, match="unknown scenario"):
            compute_mos("I9Q9", np.zeros((1, 7)))


class TestPpsSample:
    def test_equal_mos_gives_uniform_probabilities(self):
        idx, pi, d = pps_sample(np.ones(40), 8, rng_mod.stream(0, 0))
        npt.assert_allclose(pi, 8 / 40, rtol=1e-15)
        npt.assert_allclose(d, 5.0, rtol=1e-15)
        assert len(set(idx.tolist())) == 8

    def test_sample_size_always_exact(self):
        gen = np.random.default_rng(5)
        mos = gen.uniform(0.5, 3.0, 60)
        for ell in range(50):
            idx, _, _ = pps_sample(mos, 11, rng_mod.stream(1, ell))
            assert idx.shape == (11,)
            assert len(set(idx.tolist())) == 11

    def test_inclusion_frequency_matches_pi(self):
        reps = 10_000
        mos = np.linspace(0.5, 4.0, 30)
        n = 6
        pi = n * mos / mos.sum()
        hits = np.zeros(30)
        for ell in range(reps):
            idx, _, _ = pps_sample(mos, n, rng_mod.stream(2, ell))
            hits[idx] += 1
        freq = hits / reps
        mc_se = np.sqrt(pi * (1 - pi) / reps)
        assert np.all(np.abs(freq - pi) <= 3 * np.maximum(mc_se, 1e-4))

    def test_horvitz_thompson_total_of_mos(self):
        reps = 1_000
        gen = np.random.default_rng(6)
        mos = gen.uniform(0.2, 2.0, 50)
        totals = np.zeros(reps)
        for ell in range(reps):
            idx, _, d = pps_sample(mos, 10, rng_mod.stream(3, ell))
            totals[ell] = np.sum(d * mos[idx])
        mc_se = totals.std(ddof=1) / np.sqrt(reps)
        assert abs(totals.mean() - mos.sum()) <= 3 * max(mc_se, 1e-9)

    def test_certainty_units_error_by_default(self):
        mos = np.array([1000.0] + [1.0] * 20)
        with pytest.raises(DataError, match="certainty"):
            pps_sample(mos, 5, rng_mod.stream(0, 0))

    def test_certainty_truncation_caps_and_includes(self):
        mos = np.array([1000.0] + [1.0] * 20)
        for ell in range(20):
            idx, pi, d = pps_sample(mos, 5, rng_mod.stream(4, ell),
                                    certainty="truncate")
            assert pi.max() <= 1.0
            assert idx.shape == (5,)
            assert 0 in idx.tolist()
            assert d[idx.tolist().index(0)] == 1.0


class TestComputeMetrics:
    def test_perfect_estimates_give_zeros(self):
        report = compute_metrics("I0Q0", 0.17,
                                 {Method.TWO_PS: np.full(10, 0.17)})
        m = report.metrics[0]
        assert m.rb_pct == pytest.approx(0.0, abs=1e-12)
        assert m.empirical_variance == pytest.approx(0.0, abs=1e-30)
        assert m.mse == pytest.approx(0.0, abs=1e-30)

    def test_hand_arithmetic_example(self):
        report = compute_metrics("I0Q0", 0.17,
                                 {Method.ONE_PS: np.array([0.16, 0.18])})
        m = report.metrics[0]
        assert m.rb_pct == pytest.approx(0.0, abs=1e-12)
        assert m.empirical_variance == pytest.approx(1e-4, rel=1e-12)
        assert m.mse == pytest.approx(1e-4, rel=1e-12)

    def test_matches_spreadsheet_recomputation(self, rng):
        mu = 0.17
        ests = {Method.TWO_PS: rng.normal(0.17, 0.01, 40),
                Method.ONE_PS: rng.normal(0.19, 0.02, 40)}
        boots = {Method.TWO_PS: rng.uniform(5e-5, 2e-4, 40)}
        report = compute_metrics("I1Q1", mu, ests, boots)
        for m in report.metrics:
            e = ests[m.method]
            npt.assert_allclose(m.rb_pct, 100 * (e.mean() - mu) / mu,
                                atol=1e-12)
            npt.assert_allclose(m.empirical_variance,
                                np.mean((e - e.mean()) ** 2), atol=1e-18)
            npt.assert_allclose(m.mse, np.mean((e - mu) ** 2), atol=1e-18)
            if m.method == Method.TWO_PS:
                npt.assert_allclose(
                    m.variance_ratio,
                    boots[m.method].mean() / m.empirical_variance,
                    atol=1e-12)

    def test_mse_identity(self, rng):
        for _ in range(5):
            e = rng.normal(0.2, 0.03, 25)
            report = compute_metrics("I0Q1", 0.17, {Method.TWO_PS: e})
            m = report.metrics[0]
            bias = m.rb_pct / 100 * 0.17
            assert m.mse == pytest.approx(m.empirical_variance + bias ** 2,
                                          abs=1e-12)
            assert m.mse >= m.empirical_variance - 1e-12


class TestOracleEstimator:
    def test_true_inverse_propensity_weights_are_unbiased(self):
        # Hajek with the true participation weights is a consistency check
        pop = generate_population(8_000, 21)
        mos = compute_mos("I1Q1", pop.covariates)
        reps, n_c = 400, 300
        estimates = np.zeros(reps)
        for r in range(reps):
            idx, pi, d = pps_sample(mos, n_c, rng_mod.stream(13, r),
                                    certainty="truncate")
            estimates[r] = hajek_mean(d, pop.outcome[idx])
        mc_se = estimates.std(ddof=1) / np.sqrt(reps)
        assert abs(estimates.mean() - pop.mu) <= 3 * mc_se


@pytest.fixture(scope="module")
def tiny_setup():
    pop = generate_population(5_000, 17)
    grid = TuningGrid(shrinkage=(0.1,), n_trees=(30,), max_depth=(2,))
    config = ScenarioConfig(scenario="I0Q0", replications=4, n_c=250,
                            n_s=250, grid=grid, seed=3)
    return pop, config


class TestRunScenario:
    def test_smoke_all_methods(self, tiny_setup):
        pop, config = tiny_setup
        report = run_scenario(pop, config)
        assert {m.method for m in report.metrics} == set(config.methods)
        for m in report.metrics:
            assert np.isfinite(m.rb_pct)
            assert m.empirical_variance >= 0.0
            assert m.n_reps == 4

    def test_parallel_matches_serial(self, tiny_setup):
        pop, config = tiny_setup
        serial = run_scenario(pop, config)
        import dataclasses
        parallel = run_scenario(pop, dataclasses.replace(config, jobs=2))
        for m in serial.metrics:
            npt.assert_array_equal(serial.estimates[m.method],
                                   parallel.estimates[m.method])

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(scenario="bogus", replications=5)
        with pytest.raises(ConfigError):
            ScenarioConfig(scenario="I0Q0", replications=1)
        with pytest.raises(ConfigError):
            ScenarioConfig(scenario="I0Q0", replications=5,
                           bootstrap_methods=(Method.NAIVE,))
