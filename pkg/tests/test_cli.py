import numpy as np
import pytest
import yaml

from propweight import rng as rng_mod
from propweight.cli import main
from propweight.simulation import compute_mos, generate_population, pps_sample


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def write_pair(tmp_path, sc_values, ss_values, ss_weights, outcome=None,
               stratum=None, psu=None):
    p = sc_values.shape[1]
    cov_names = [f"x{j + 1}" for j in range(p)]
    sc_header = cov_names + (["__outcome"] if outcome is not None else [])
    sc_rows = []
    for i in range(sc_values.shape[0]):
        row = list(sc_values[i])
        if outcome is not None:
            row.append(outcome[i])
        sc_rows.append(row)
    ss_header = cov_names + ["__weight"]
    ss_rows = [list(ss_values[i]) + [ss_weights[i]]
               for i in range(ss_values.shape[0])]
    if stratum is not None:
        ss_header += ["__stratum", "__psu"]
        for i, row in enumerate(ss_rows):
            row.extend([stratum[i], psu[i]])
    sc_path = write_csv(tmp_path / "nonprob.csv", sc_header, sc_rows)
    ss_path = write_csv(tmp_path / "survey.csv", ss_header, ss_rows)
    return sc_path, ss_path


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(payload))
    return str(path)


def read_report(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# propweight")
    header = lines[1].split(",")
    rows = [line.split(",") for line in lines[2:]]
    return header, rows


class TestSimulateCommand:
    def _config(self, tmp_path):
        return write_config(tmp_path, "sim.yaml", {
            "scenarios": ["I0Q0"],
            "replications": 3,
            "n_c": 200, "n_s": 200,
            "population_size": 4000,
            "grid": {"shrinkage": [0.1], "n_trees": [20], "max_depth": [2]},
            "seed": 12,
        })

    def test_produces_all_reports_with_expected_rows(self, tmp_path):
        config = self._config(tmp_path)
        out = tmp_path / "run"
        assert main(["simulate", "--config", config, "--out", str(out)]) == 0
        header, rows = read_report(out / "metrics.csv")
        assert header == ["scenario", "method", "rb_pct",
                          "empirical_variance", "mse", "variance_ratio"]
        assert len(rows) == 4  # one per method
        _, rep_rows = read_report(out / "replicates.csv")
        assert len(rep_rows) == 4 * 3
        _, plot_rows = read_report(out / "plot_data.csv")
        assert len(plot_rows) == 4
        assert {r[0] for r in rows} == {"I0Q0"}

    def test_byte_identical_reruns(self, tmp_path):
        config = self._config(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", config, "--out", str(out1)])
        main(["simulate", "--config", config, "--out", str(out2)])
        for name in ("metrics.csv", "replicates.csv", "plot_data.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        config = write_config(tmp_path, "bad.yaml", {"scenario": ["I0Q0"]})
        assert main(["simulate", "--config", config,
                     "--out", str(tmp_path)]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_set_overrides(self, tmp_path):
        config = self._config(tmp_path)
        out = tmp_path / "o"
        assert main(["simulate", "--config", config, "--out", str(out),
                     "--set", "methods=[two_ps]",
                     "--set", "replications=2"]) == 0
        _, rows = read_report(out / "metrics.csv")
        assert len(rows) == 1


class TestWeightCommand:
    def test_symmetric_degenerate_case(self, tmp_path, rng):
        values = rng.standard_normal((40, 2))
        sc_path, ss_path = write_pair(tmp_path, values, values,
                                      np.ones(40))
        config = write_config(tmp_path, "w.yaml", {
            "nonprob": sc_path, "survey": ss_path, "method": "two_ps"})
        out = tmp_path / "out"
        assert main(["weight", "--config", config, "--out", str(out)]) == 0
        _, rows = read_report(out / "weights.csv")
        weights = np.array([float(r[2]) for r in rows])
        assert np.allclose(weights, 1.0, atol=1e-4)
        _, brows = read_report(out / "balance.csv")
        assert all(float(r[2]) < 1e-6 for r in brows)

    def test_boost2ps_constant_survey_weights(self, tmp_path, rng):
        c = 6.0
        values = rng.standard_normal((30, 1))
        sc_path, ss_path = write_pair(tmp_path, values,
                                      rng.standard_normal((30, 1)),
                                      np.full(30, c))
        config = write_config(tmp_path, "w.yaml", {
            "nonprob": sc_path, "survey": ss_path, "method": "boost_two_ps",
            "grid": {"shrinkage": [0.1], "n_trees": [0], "max_depth": [1]},
        })
        out = tmp_path / "out"
        assert main(["weight", "--config", config, "--out", str(out)]) == 0
        _, rows = read_report(out / "weights.csv")
        weights = np.array([float(r[2]) for r in rows])
        assert np.allclose(weights, c, atol=1e-5)
        assert (out / "tuning.csv").exists()

    def test_planted_quadratic_mechanism_favors_boosting(self, tmp_path):
        pop = generate_population(4_000, 31)
        mos_c = compute_mos("I0Q2", pop.covariates)
        mos_s = compute_mos("survey", pop.covariates)
        idx_c, _, _ = pps_sample(mos_c, 350, rng_mod.stream(8, 0),
                                 certainty="truncate")
        idx_s, pi_s, d_s = pps_sample(mos_s, 350, rng_mod.stream(8, 1))
        sc_path, ss_path = write_pair(tmp_path, pop.covariates[idx_c],
                                      pop.covariates[idx_s], d_s,
                                      outcome=pop.outcome[idx_c])

        asmds = {}
        for method in ("two_ps", "boost_two_ps"):
            config = write_config(tmp_path, f"{method}.yaml", {
                "nonprob": sc_path, "survey": ss_path, "method": method,
                "grid": {"shrinkage": [0.1], "n_trees": [200, 600],
                         "max_depth": [2, 3], "min_node_size": [10]},
            })
            out = tmp_path / method
            assert main(["weight", "--config", config,
                         "--out", str(out)]) == 0
            _, rows = read_report(out / "balance.csv")
            asmds[method] = sum(float(r[2]) for r in rows)
        assert asmds["boost_two_ps"] < asmds["two_ps"]

    def test_estimates_written_when_outcome_present(self, tmp_path, rng):
        values = rng.standard_normal((25, 1))
        sc_path, ss_path = write_pair(tmp_path, values,
                                      rng.standard_normal((25, 1)),
                                      np.ones(25),
                                      outcome=(rng.random(25) < 0.5).astype(int))
        config = write_config(tmp_path, "w.yaml", {
            "nonprob": sc_path, "survey": ss_path, "method": "one_ps"})
        out = tmp_path / "out"
        assert main(["weight", "--config", config, "--out", str(out)]) == 0
        header, rows = read_report(out / "estimates.csv")
        assert header[:2] == ["method", "estimate"]
        assert 0.0 <= float(rows[0][1]) <= 1.0

    def test_save_score_round_trips(self, tmp_path, rng):
        values = rng.standard_normal((30, 1))
        sc_path, ss_path = write_pair(tmp_path, values + 0.5,
                                      rng.standard_normal((30, 1)),
                                      np.ones(30))
        config = write_config(tmp_path, "w.yaml", {
            "nonprob": sc_path, "survey": ss_path, "method": "boost_two_ps",
            "grid": {"shrinkage": [0.2], "n_trees": [15], "max_depth": [2],
                     "min_node_size": [5]},
            "save_score": True,
        })
        out = tmp_path / "out"
        assert main(["weight", "--config", config, "--out", str(out)]) == 0
        from propweight.boosting import BoostedScore
        score = BoostedScore.from_json((out / "score.json").read_text())
        assert score.n_trees == 15

    def test_missing_file_exits_3(self, tmp_path, capsys):
        config = write_config(tmp_path, "w.yaml", {
            "nonprob": str(tmp_path / "nope.csv"),
            "survey": str(tmp_path / "nope2.csv")})
        assert main(["weight", "--config", config,
                     "--out", str(tmp_path)]) == 3


class TestTuneCommand:
    def test_writes_grid_log(self, tmp_path, rng, capsys):
        sc_path, ss_path = write_pair(tmp_path,
                                      rng.standard_normal((40, 1)) + 0.8,
                                      rng.standard_normal((40, 1)),
                                      np.ones(40))
        config = write_config(tmp_path, "t.yaml", {
            "nonprob": sc_path, "survey": ss_path, "method": "boost_two_ps",
            "grid": {"shrinkage": [0.2, 0.1], "n_trees": [10, 30],
                     "max_depth": [1], "min_node_size": [10]},
        })
        out = tmp_path / "out"
        assert main(["tune", "--config", config, "--out", str(out)]) == 0
        _, rows = read_report(out / "tuning.csv")
        assert len(rows) == 4
        assert "best:" in capsys.readouterr().out


class TestBootstrapCommand:
    def test_two_replicate_se_matches_hand_formula(self, tmp_path, rng):
        values = rng.standard_normal((30, 1))
        sc_path, ss_path = write_pair(
            tmp_path, values, rng.standard_normal((30, 1)),
            rng.uniform(1, 3, 30).round(3),
            outcome=(rng.random(30) < 0.4).astype(int))
        config = write_config(tmp_path, "b.yaml", {
            "nonprob": sc_path, "survey": ss_path, "method": "one_ps",
            "bootstrap": {"replicates": 2},
            "seed": 3,
        })
        out = tmp_path / "out"
        assert main(["bootstrap", "--config", config, "--out", str(out)]) == 0
        _, rows = read_report(out / "bootstrap.csv")
        est = float(rows[0][1])
        se = float(rows[0][3])
        _, log_rows = read_report(out / "replicate_log.csv")
        reps = [float(r[2]) for r in log_rows if r[3] == "ok"]
        hand = np.sqrt(((reps[0] - est) ** 2 + (reps[1] - est) ** 2) / 1)
        assert se == pytest.approx(hand, rel=1e-12)

    def test_single_config_drives_weight_and_bootstrap(self, tmp_path, rng):
        values = rng.standard_normal((25, 1))
        sc_path, ss_path = write_pair(
            tmp_path, values, rng.standard_normal((25, 1)), np.ones(25),
            outcome=(rng.random(25) < 0.4).astype(int))
        config = write_config(tmp_path, "run.yaml", {
            "nonprob": sc_path, "survey": ss_path, "method": "one_ps",
            "bootstrap": {"replicates": 3},
            "seed": 2,
        })
        assert main(["weight", "--config", config,
                     "--out", str(tmp_path / "w")]) == 0
        assert main(["bootstrap", "--config", config,
                     "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "w" / "weights.csv").exists()
        assert (tmp_path / "b" / "bootstrap.csv").exists()

    def test_replicate_failures_exit_4(self, tmp_path, rng, capsys):
        # x2 varies only inside one of two PSUs: replicates that drop that
        # PSU have a constant column and fail, far beyond the 5% budget
        n = 20
        x1 = rng.standard_normal(n)
        x2 = np.zeros(n)
        x2[:10] = rng.standard_normal(10)
        ss_values = np.column_stack([x1, x2])
        sc_values = np.column_stack([rng.standard_normal(n), np.zeros(n)])
        stratum = ["s1"] * n
        psu = ["varying"] * 10 + ["flat"] * 10
        sc_path, ss_path = write_pair(
            tmp_path, sc_values, ss_values, np.ones(n),
            outcome=(rng.random(n) < 0.5).astype(int),
            stratum=stratum, psu=psu)
        config = write_config(tmp_path, "b.yaml", {
            "nonprob": sc_path, "survey": ss_path, "method": "two_ps",
            "expansion": {"interactions": "none"},
            "bootstrap": {"replicates": 10},
            "seed": 1,
        })
        assert main(["bootstrap", "--config", config,
                     "--out", str(tmp_path / "out")]) == 4
        assert "failed" in capsys.readouterr().err
