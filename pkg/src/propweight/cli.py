"""Command-line interface: simulate, weight, tune, bootstrap.

Each command takes a YAML key/value config (strictly validated: unknown
keys are rejected), with ``--set key=value`` overrides for scripted
sweeps.  Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
failure.
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from .balance import (BalanceSpec, DESK_GRID, REAL_DATA_GRID,
                      SIMULATION_GRID, TuningGrid, smd_by_covariate)
from .boosting import TuningParams
from .bootstrap import BootstrapConfig, collapse_strata, run_bootstrap
from .data import FeatureExpansion, read_samples
from .exceptions import ConfigError, DataError, NumericalError
from .pipeline import (MethodOptions, WeightingProblem, construct_weights,
                       estimate_mean)
from .report import VERSION, config_hash, write_csv
from .simulation import (SCENARIO_IDS, ScenarioConfig, generate_population,
                         run_scenario)
from .weights import BOOSTED_METHODS, Method

_EXIT_CODES = {ConfigError: 2, DataError: 3, NumericalError: 4}


def _parse_set(items):
    overrides = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = yaml.safe_load(raw)
    return overrides


def _apply_override(config, dotted, value):
    parts = dotted.split(".")
    node = config
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def _load_config(args, defaults):
    config = {k: (dict(v) if isinstance(v, dict) else v)
              for k, v in defaults.items()}
    if args.config:
        try:
            loaded = yaml.safe_load(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML config: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a mapping of keys to values")
        for key, value in loaded.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(defaults[key], dict) and isinstance(value, dict):
                merged = dict(defaults[key])
                merged.update(value)
                config[key] = merged
            else:
                config[key] = value
    for dotted, value in _parse_set(args.set).items():
        root = dotted.split(".")[0]
        if root not in defaults:
            raise ConfigError(f"unknown config key {root!r}")
        _apply_override(config, dotted, value)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.jobs is not None:
        config["jobs"] = args.jobs
    return config


def _check_keys(mapping, allowed, where):
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {sorted(unknown)}")


def _grid_from_config(node, default):
    if node is None:
        return default
    _check_keys(node, ("shrinkage", "n_trees", "max_depth", "min_node_size"),
                "grid")
    kwargs = {}
    for key in ("shrinkage", "n_trees", "max_depth", "min_node_size"):
        if node.get(key) is not None:
            values = node[key]
            if not isinstance(values, (list, tuple)):
                values = [values]
            kwargs[key] = tuple(values)
    base = {"shrinkage": default.shrinkage, "n_trees": default.n_trees,
            "max_depth": default.max_depth,
            "min_node_size": default.min_node_size}
    base.update(kwargs)
    return TuningGrid(**base)


def _expansion_from_config(node):
    if node is None:
        return None
    _check_keys(node, ("intercept", "main_effects", "interactions",
                       "quadratics"), "expansion")
    mains = node.get("main_effects", "all")
    mains = None if mains in ("all", None) else tuple(mains)
    inter = node.get("interactions", "all")
    if inter in ("all", True):
        inter = True
    elif inter in ("none", False, None):
        inter = False
    else:
        inter = tuple((a, b) for a, b in inter)
    quads = tuple(node.get("quadratics") or ())
    return FeatureExpansion(include_intercept=bool(node.get("intercept", True)),
                            main_effects=mains, pairwise_interactions=inter,
                            quadratic_terms=quads)


def _methods_from_config(values, where="methods"):
    try:
        return tuple(Method(str(v)) for v in values)
    except ValueError as exc:
        raise ConfigError(f"invalid {where}: {exc}") from None


_SIMULATE_DEFAULTS = {
    "scenarios": list(SCENARIO_IDS),
    "methods": ["one_ps", "two_ps", "boost_one_ps", "boost_two_ps"],
    "replications": 200,
    "n_c": 1500,
    "n_s": 1500,
    "population_size": 50000,
    "bootstrap_replicates": 0,
    "bootstrap_methods": [],
    "grid": None,
    "seed": 0,
    "jobs": 1,
}


def cmd_simulate(args):
    config = _load_config(args, _SIMULATE_DEFAULTS)
    if args.paper_scale:
        if config["replications"] == _SIMULATE_DEFAULTS["replications"]:
            config["replications"] = 1000
        grid_default = SIMULATION_GRID
    else:
        grid_default = DESK_GRID
    grid = _grid_from_config(config["grid"], grid_default)
    methods = _methods_from_config(config["methods"])
    boot_methods = _methods_from_config(config["bootstrap_methods"],
                                        "bootstrap_methods")
    if config["bootstrap_replicates"] > 0 and not boot_methods:
        boot_methods = methods

    cfg_hash = config_hash(dict(config, paper_scale=bool(args.paper_scale)))
    out = Path(args.out)
    seed = int(config["seed"])

    population = generate_population(int(config["population_size"]), seed)
    metric_rows = []
    replicate_rows = []
    plot_rows = []
    for scenario in config["scenarios"]:
        scenario_config = ScenarioConfig(
            scenario=str(scenario), replications=int(config["replications"]),
            n_c=int(config["n_c"]), n_s=int(config["n_s"]), methods=methods,
            grid=grid, bootstrap_replicates=int(config["bootstrap_replicates"]),
            bootstrap_methods=boot_methods, seed=seed,
            jobs=int(config["jobs"]))
        report = run_scenario(population, scenario_config)
        for m in report.metrics:
            metric_rows.append((report.scenario, str(m.method), m.rb_pct,
                                m.empirical_variance, m.mse,
                                m.variance_ratio))
            plot_rows.append((report.scenario, str(m.method),
                              abs(m.rb_pct)))
        for method, ests in report.estimates.items():
            for rep, est in enumerate(ests):
                replicate_rows.append((report.scenario, str(method), rep,
                                       float(est), report.statuses[rep]))

    write_csv(out / "metrics.csv",
              ("scenario", "method", "rb_pct", "empirical_variance", "mse",
               "variance_ratio"), metric_rows, "simulate", seed, cfg_hash)
    write_csv(out / "replicates.csv",
              ("scenario", "method", "replication", "estimate", "status"),
              replicate_rows, "simulate", seed, cfg_hash)
    write_csv(out / "plot_data.csv", ("scenario", "method", "abs_rb_pct"),
              plot_rows, "simulate", seed, cfg_hash)
    return 0


# one run document drives weight, tune, and bootstrap; each command reads
# the keys it needs and ignores the rest
_RUN_DEFAULTS = {
    "nonprob": None,
    "survey": None,
    "method": "boost_two_ps",
    "expansion": None,
    "step2_expansion": None,
    "grid": None,
    "gbm": None,
    "importance": None,
    "trim_quantile": None,
    "collapse_strata": False,
    "save_score": False,
    "bootstrap": {
        "replicates": 100,
        "reuse_tuned_params": True,
        "deviations_about": "full",
    },
    "seed": 0,
    "jobs": 1,
}


def _load_weight_inputs(config, args):
    if not config["nonprob"] or not config["survey"]:
        raise ConfigError("config keys 'nonprob' and 'survey' (CSV paths) "
                          "are required")
    # relative data paths resolve against the config file's directory
    base = Path(args.config).parent if args.config else Path.cwd()
    sc, ss = read_samples(base / config["nonprob"], base / config["survey"])
    if config["collapse_strata"]:
        ss = collapse_strata(ss)
    return sc, ss


def _method_options(config):
    expansion = _expansion_from_config(config["expansion"])
    step2 = _expansion_from_config(config["step2_expansion"])
    grid = _grid_from_config(config["grid"], REAL_DATA_GRID)
    params = None
    if config["gbm"] is not None:
        _check_keys(config["gbm"], ("shrinkage", "n_trees", "max_depth",
                                    "min_node_size", "bag_fraction"), "gbm")
        params = TuningParams(**{k: v for k, v in config["gbm"].items()})
    importance = None
    if config["importance"] is not None:
        importance = np.asarray(config["importance"], dtype=np.float64)
    kwargs = {}
    if expansion is not None:
        kwargs["parametric_expansion"] = expansion
    return MethodOptions(step2_expansion=step2, grid=grid, gbm_params=params,
                         importance=importance,
                         trim_quantile=config["trim_quantile"], **kwargs)


def cmd_weight(args):
    config = _load_config(args, _RUN_DEFAULTS)
    cfg_hash = config_hash(config)
    out = Path(args.out)
    seed = int(config["seed"])
    method = Method(str(config["method"]))

    sc, ss = _load_weight_inputs(config, args)
    options = _method_options(config)
    problem = WeightingProblem.from_samples(sc, ss)

    from . import rng as rng_mod
    tune_rng = rng_mod.stream(seed, rng_mod.TUNING)
    outcome = construct_weights(problem, method, options,
                                rng_stream=tune_rng)
    pw = outcome.weights

    weight_rows = [(i, str(method), float(w), float(nw))
                   for i, (w, nw) in enumerate(zip(pw.values, pw.normalized))]
    write_csv(out / "weights.csv",
              ("unit_id", "method", "weight", "normalized_weight"),
              weight_rows, "weight", seed, cfg_hash)

    if outcome.tuned is not None:
        _write_tuning(out / "tuning.csv", outcome.tuned, seed, cfg_hash,
                      "weight")
    if config["save_score"]:
        if outcome.score is None:
            raise ConfigError("save_score applies to boosted methods only")
        (out / "score.json").write_text(outcome.score.to_json())

    smd_naive = smd_by_covariate(sc.covariates, np.ones(sc.n_rows),
                                 ss.covariates, ss.weights)
    smd_weighted = smd_by_covariate(sc.covariates, pw.values,
                                    ss.covariates, ss.weights)
    balance_rows = [
        (name, float(a), float(b))
        for name, a, b in zip(sc.covariates.column_names, smd_naive,
                              smd_weighted)]
    write_csv(out / "balance.csv",
              ("covariate", "smd_unweighted", "smd_weighted"),
              balance_rows, "weight", seed, cfg_hash)

    if sc.outcome is not None:
        est = estimate_mean(problem, pw)
        write_csv(out / "estimates.csv",
                  ("method", "estimate", "n_nonprob", "sum_weights"),
                  [(str(method), est, sc.n_rows, float(pw.values.sum()))],
                  "weight", seed, cfg_hash)
    return 0


def _write_tuning(path, tuned, seed, cfg_hash, command):
    rows = [(e.params.shrinkage, e.params.n_trees, e.params.max_depth,
             e.params.min_node_size, e.asmd, e.status)
            for e in tuned.evaluations]
    write_csv(path, ("shrinkage", "n_trees", "max_depth", "min_node_size",
                     "asmd", "status"), rows, command, seed, cfg_hash)


def cmd_tune(args):
    config = _load_config(args, _RUN_DEFAULTS)
    cfg_hash = config_hash(config)
    out = Path(args.out)
    seed = int(config["seed"])
    method = Method(str(config["method"]))
    if method not in BOOSTED_METHODS:
        raise ConfigError(f"tuning applies to boosted methods, not {method}")

    sc, ss = _load_weight_inputs(config, args)
    options = _method_options(config)
    if options.gbm_params is not None:
        raise ConfigError("'gbm' fixes the parameters; nothing to tune")
    problem = WeightingProblem.from_samples(sc, ss)

    from . import rng as rng_mod
    from .pipeline import _fit_or_tune_gbm
    tuned, params, _, _ = _fit_or_tune_gbm(
        problem, method, options, None,
        rng_mod.stream(seed, rng_mod.TUNING))
    _write_tuning(Path(out) / "tuning.csv", tuned, seed, cfg_hash, "tune")
    best = (f"best: shrinkage={params.shrinkage} n_trees={params.n_trees} "
            f"max_depth={params.max_depth} "
            f"min_node_size={params.min_node_size}")
    print(best)
    return 0


def cmd_bootstrap(args):
    config = _load_config(args, _RUN_DEFAULTS)
    cfg_hash = config_hash(config)
    out = Path(args.out)
    seed = int(config["seed"])
    method = Method(str(config["method"]))

    _check_keys(config["bootstrap"], ("replicates", "reuse_tuned_params",
                                      "deviations_about"), "bootstrap")
    boot_config = BootstrapConfig(
        n_replicates=int(config["bootstrap"]["replicates"]),
        reuse_tuned_params=bool(config["bootstrap"]["reuse_tuned_params"]),
        seed=seed,
        deviations_about=str(config["bootstrap"]["deviations_about"]))

    sc, ss = _load_weight_inputs(config, args)
    if sc.outcome is None:
        raise DataError("bootstrap needs an __outcome column in the "
                        "nonprobability CSV")
    options = _method_options(config)
    result = run_bootstrap(sc, ss, method, options, boot_config)

    write_csv(out / "bootstrap.csv",
              ("method", "estimate", "variance", "se", "ci_lower",
               "ci_upper", "replicates"),
              [(str(method), result.estimate, result.variance, result.se,
                result.ci_lower, result.ci_upper,
                boot_config.n_replicates)],
              "bootstrap", seed, cfg_hash)
    log_rows = [(ell, str(method), float(est), status)
                for ell, (est, status) in enumerate(
                    zip(result.estimates, result.statuses))]
    write_csv(out / "replicate_log.csv",
              ("replicate", "method", "estimate", "status"), log_rows,
              "bootstrap", seed, cfg_hash)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="propweight",
        description="Pseudo-weighting of nonprobability samples with "
                    "gradient-boosted and logistic propensity scores")
    parser.add_argument("--version", action="version",
                        version=f"propweight {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in (("simulate", cmd_simulate), ("weight", cmd_weight),
                       ("tune", cmd_tune), ("bootstrap", cmd_bootstrap)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--paper-scale", action="store_true",
                       help="full-scale replication/grid defaults")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        for cls, code in _EXIT_CODES.items():
            if isinstance(exc, cls):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
