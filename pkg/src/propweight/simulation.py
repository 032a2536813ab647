"""Finite-population generation, PPS sampling, and the scenario study.

Eight nonprobability selection mechanisms of increasing nonlinearity and
non-additivity drive the measure of size; the survey sample uses a fixed
log-linear measure of size.  Each replication draws both samples, fits the
requested methods, and optionally bootstraps their variances.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from .balance import DESK_GRID
from .bootstrap import BootstrapConfig, run_bootstrap
from .data import CovariateMatrix, NonprobSample, SurveySample
from .exceptions import ConfigError, DataError, NumericalError
from .pipeline import (MethodOptions, WeightingProblem, construct_weights,
                       estimate_mean)
from .weights import BOOSTED_METHODS, Method

N_COVARIATES = 7
COLUMN_NAMES = tuple(f"x{j + 1}" for j in range(N_COVARIATES))
OUTCOME_COEF = np.array([-2.5, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
SURVEY_MOS_COEF = np.array([0.0, 0.2, 0.2, 0.3, 0.3, -0.16, -0.1, 0.14])

SCENARIO_IDS = ("I0Q0", "I0Q1", "I1Q0", "I1Q1", "I0Q2", "I2Q0", "I2Q2",
                "I3Q3")

# per-method stream component, kept disjoint from the purpose codes
_METHOD_CODES = {m: 10 + i for i, m in enumerate(Method)}


@dataclass(frozen=True)
class Population:
    """Finite population with correlated covariates and a binary outcome."""

    covariates: np.ndarray
    outcome: np.ndarray
    mu: float
    seed: int

    @property
    def size(self):
        return self.covariates.shape[0]


def generate_population(n_units, seed):
    """Generate the finite population.

    Seven base standard-normal draws; x5 and x6 are correlated blends of
    (v1, v5) and (v2, v6); the binary outcome follows a logistic model in
    x1..x4.
    """
    if n_units < 1:
        raise ConfigError("population size must be >= 1")
    rng = rng_mod.stream(seed, rng_mod.POPULATION)
    v = rng_mod.standard_normal(rng, (n_units, N_COVARIATES))
    x = v.copy()
    x[:, 4] = 1.171 * (0.16 * v[:, 0] + 0.84 * v[:, 4])
    x[:, 5] = 1.353 * (0.67 * v[:, 1] + 0.33 * v[:, 5])
    eta = OUTCOME_COEF[0] + x[:, :4] @ OUTCOME_COEF[1:5]
    p = 1.0 / (1.0 + np.exp(-eta))
    y = (rng.random(n_units) < p).astype(np.float64)
    return Population(covariates=x, outcome=y, mu=float(y.mean()), seed=seed)


def _scenario_exponent(scenario, x):
    x1, x2, x3, x4, x5, x6, x7 = (x[:, j] for j in range(7))
    base = x1 + x2 + 1.5 * x3 + 1.5 * x4 - 0.8 * x5 - 0.5 * x6 + 0.7 * x7
    slight_inter = x1 * x3 + x2 * x4 + 1.5 * x4 * x5 - 0.8 * x5 * x6
    moderate_inter = (x1 * x3 + x2 * x4 + 1.5 * x3 * x5 + 1.5 * x4 * x6
                      - 0.8 * x5 * x7 + x1 * x6 + x2 * x3 + 1.5 * x3 * x4
                      + 1.5 * x4 * x5 - 0.8 * x5 * x6)
    moderate_quad = x2 ** 2 + 1.5 * x4 ** 2 + 0.7 * x7 ** 2
    if scenario == "I0Q0":
        return 0.3 * base
    if scenario == "I0Q1":
        return 0.25 * (base + x2 ** 2)
    if scenario == "I1Q0":
        return 0.27 * (base + slight_inter)
    if scenario == "I1Q1":
        return 0.25 * (base + x2 ** 2 + slight_inter)
    if scenario == "I0Q2":
        return 0.25 * (base + moderate_quad)
    if scenario == "I2Q0":
        return 0.22 * (base + moderate_inter)
    if scenario == "I2Q2":
        return 0.17 * (base + moderate_quad + moderate_inter)
    if scenario == "I3Q3":
        return 0.18 * (base + moderate_quad + slight_inter
                       + 1.5 * x3 ** 2 * x5 ** 2 + x1 * x2 * x3
                       + x4 * x5 * x7)
    raise ConfigError(f"unknown scenario {scenario!r}; "
                      f"valid ids: {', '.join(SCENARIO_IDS)}")


def compute_mos(scenario, x):
    """Measure of size for a scenario id or for the survey design."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != N_COVARIATES:
        raise DataError(f"expected {N_COVARIATES} covariates, got {x.shape[1]}")
    if scenario == "survey":
        exponent = SURVEY_MOS_COEF[0] + x @ SURVEY_MOS_COEF[1:]
    else:
        exponent = _scenario_exponent(scenario, x)
    mos = np.exp(exponent)
    if not np.all(np.isfinite(mos)):
        raise NumericalError(f"measure of size overflowed in {scenario}")
    return mos


def _inclusion_probs(mos, n, certainty):
    """Fixed-size inclusion probabilities n * mos / sum(mos).

    With ``certainty='truncate'`` units whose probability would exceed 1
    become certainty selections (pi = 1) and the remainder is renormalized
    to the remaining sample size, iterating until all pi <= 1.
    """
    pi = n * mos / mos.sum()
    if pi.max() <= 1.0:
        return pi
    if certainty == "error":
        raise DataError(
            "measure of size implies certainty units "
            f"(max n*mos/sum(mos) = {pi.max():.3g} > 1)")
    certain = np.zeros(mos.shape[0], dtype=bool)
    while True:
        rest = ~certain
        k = n - int(certain.sum())
        if k <= 0:
            raise DataError("more certainty units than the sample size")
        pi = np.ones(mos.shape[0])
        pi[rest] = k * mos[rest] / mos[rest].sum()
        newly = rest & (pi >= 1.0)
        if not newly.any():
            return pi
        certain |= newly


def pps_sample(mos, n, rng_stream, certainty="error"):
    """Randomized systematic PPS draw of exactly n units.

    Returns (indices, inclusion probabilities, weights 1/pi).  Certainty
    units (pi = 1) are always selected when ``certainty='truncate'``; the
    default raises on them per the fixed-size PPS contract.
    """
    mos = np.asarray(mos, dtype=np.float64)
    if np.any(mos <= 0) or not np.all(np.isfinite(mos)):
        raise DataError("measures of size must be positive and finite")
    if not 1 <= n < mos.shape[0]:
        raise DataError(f"sample size {n} must be in [1, {mos.shape[0]})")
    pi = _inclusion_probs(mos, n, certainty)

    perm = rng_stream.permutation(mos.shape[0])
    cum = np.cumsum(pi[perm])
    start = rng_stream.random()
    hits = np.searchsorted(cum, start + np.arange(n), side="right")
    hits = np.minimum(hits, mos.shape[0] - 1)
    idx = perm[hits]
    return idx, pi[idx], 1.0 / pi[idx]


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario run."""

    scenario: str
    replications: int
    n_c: int = 1500
    n_s: int = 1500
    methods: tuple = (Method.ONE_PS, Method.TWO_PS, Method.BOOST_ONE_PS,
                      Method.BOOST_TWO_PS)
    grid: object = DESK_GRID
    bootstrap_replicates: int = 0
    bootstrap_methods: tuple = ()
    seed: int = 0
    jobs: int = 1
    max_failure_fraction: float = 0.02

    def __post_init__(self):
        if self.scenario not in SCENARIO_IDS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.replications < 2:
            raise ConfigError("need at least 2 replications")
        methods = tuple(Method(m) for m in self.methods)
        object.__setattr__(self, "methods", methods)
        boot = tuple(Method(m) for m in self.bootstrap_methods)
        unknown = [m for m in boot if m not in methods]
        if unknown:
            raise ConfigError(f"bootstrap methods {unknown} not in methods")
        object.__setattr__(self, "bootstrap_methods", boot)


@dataclass(frozen=True)
class MethodMetrics:
    method: Method
    n_reps: int
    rb_pct: float
    empirical_variance: float
    mse: float
    mean_bootstrap_variance: float = float("nan")
    variance_ratio: float = float("nan")


@dataclass(frozen=True)
class MetricsReport:
    scenario: str
    mu: float
    metrics: tuple
    estimates: dict
    bootstrap_variances: dict = field(default_factory=dict)
    statuses: tuple = ()


def compute_metrics(scenario, mu, estimates, bootstrap_variances=None,
                    statuses=()):
    """Aggregate replicate estimates into the evaluation metrics.

    Relative bias is in percent of mu; the empirical variance divides by
    the replicate count (so MSE = EV + bias^2 holds exactly); the variance
    ratio is mean bootstrap variance over empirical variance.
    """
    bootstrap_variances = bootstrap_variances or {}
    rows = []
    for method, ests in estimates.items():
        e = np.asarray(ests, dtype=np.float64)
        e = e[np.isfinite(e)]
        if e.shape[0] < 2:
            raise NumericalError(f"{method}: fewer than 2 usable estimates")
        mean = e.mean()
        rb = 100.0 * (mean - mu) / mu
        ev = float(np.mean((e - mean) ** 2))
        mse = float(np.mean((e - mu) ** 2))
        if mse < ev - 1e-12:
            raise NumericalError(
                f"{method}: MSE {mse} fell below the empirical variance")
        row = dict(method=Method(method), n_reps=int(e.shape[0]),
                   rb_pct=float(rb), empirical_variance=ev, mse=mse)
        bv = bootstrap_variances.get(method)
        if bv is not None:
            bv = np.asarray(bv, dtype=np.float64)
            bv = bv[np.isfinite(bv)]
            if bv.size:
                mean_bv = float(bv.mean())
                row["mean_bootstrap_variance"] = mean_bv
                row["variance_ratio"] = mean_bv / ev
        rows.append(MethodMetrics(**row))
    return MetricsReport(scenario=scenario, mu=mu, metrics=tuple(rows),
                         estimates={Method(m): np.asarray(v)
                                    for m, v in estimates.items()},
                         bootstrap_variances={Method(m): np.asarray(v)
                                              for m, v in
                                              bootstrap_variances.items()},
                         statuses=tuple(statuses))


_WORKER = {}


def _init_worker(covariates, outcome, mos_c, mos_s, config):
    _WORKER["x"] = covariates
    _WORKER["y"] = outcome
    _WORKER["mos_c"] = mos_c
    _WORKER["mos_s"] = mos_s
    _WORKER["config"] = config


def _replication(rep):
    """Run one replication against the worker state; returns
    (rep, {method: estimate}, {method: bootstrap variance}, status)."""
    x = _WORKER["x"]
    y = _WORKER["y"]
    config = _WORKER["config"]
    seed = config.seed
    try:
        rng_s = rng_mod.stream(seed, rng_mod.SURVEY_DRAW, rep)
        rng_c = rng_mod.stream(seed, rng_mod.NONPROB_DRAW, rep)
        idx_s, pi_s, d_s = pps_sample(_WORKER["mos_s"], config.n_s, rng_s,
                                      certainty="truncate")
        idx_c, _, _ = pps_sample(_WORKER["mos_c"], config.n_c, rng_c,
                                 certainty="truncate")
        sc = NonprobSample(CovariateMatrix(x[idx_c], COLUMN_NAMES), y[idx_c])
        ss = SurveySample(CovariateMatrix(x[idx_s], COLUMN_NAMES), d_s)
        problem = WeightingProblem.from_samples(sc, ss)
        options = MethodOptions(grid=config.grid)

        ests = {}
        boots = {}
        for method in config.methods:
            mcode = _METHOD_CODES[method]
            tune_rng = rng_mod.stream(seed, rng_mod.TUNING, rep, mcode)
            outcome = construct_weights(problem, method, options,
                                        rng_stream=tune_rng)
            est = estimate_mean(problem, outcome.weights)
            ests[method] = est
            if (config.bootstrap_replicates > 0
                    and method in config.bootstrap_methods):
                boot = run_bootstrap(
                    sc, ss, method, options,
                    BootstrapConfig(config.bootstrap_replicates, seed=seed),
                    stream_key=(rep, mcode),
                    tuned_params=outcome.gbm_params, full_estimate=est)
                boots[method] = boot.variance
        return rep, ests, boots, "ok"
    except (DataError, NumericalError) as exc:
        return rep, {}, {}, f"failed: {exc}"


def run_scenario(population, config):
    """Monte Carlo evaluation of the configured methods on one scenario."""
    if config.n_c >= population.size or config.n_s >= population.size:
        raise ConfigError("sample sizes must be below the population size")
    mos_c = compute_mos(config.scenario, population.covariates)
    mos_s = compute_mos("survey", population.covariates)

    reps = range(config.replications)
    if config.jobs > 1:
        with ProcessPoolExecutor(
                max_workers=config.jobs, initializer=_init_worker,
                initargs=(population.covariates, population.outcome, mos_c,
                          mos_s, config)) as pool:
            results = list(pool.map(_replication, reps, chunksize=1))
    else:
        _init_worker(population.covariates, population.outcome, mos_c,
                     mos_s, config)
        results = [_replication(r) for r in reps]

    estimates = {m: np.full(config.replications, np.nan)
                 for m in config.methods}
    boot_vars = {m: np.full(config.replications, np.nan)
                 for m in config.bootstrap_methods}
    statuses = []
    for rep, ests, boots, status in results:
        statuses.append(status)
        for m, v in ests.items():
            estimates[m][rep] = v
        for m, v in boots.items():
            boot_vars[m][rep] = v

    n_failed = sum(1 for s in statuses if s != "ok")
    if n_failed > config.max_failure_fraction * config.replications:
        raise NumericalError(
            f"{n_failed} of {config.replications} replications failed; "
            f"first failure: {next(s for s in statuses if s != 'ok')}")

    return compute_metrics(config.scenario, population.mu, estimates,
                           boot_vars if config.bootstrap_methods else None,
                           statuses)
