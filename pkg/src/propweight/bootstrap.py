"""Bootstrap replication of the weighting pipeline and its variance.

The nonprobability sample is resampled by simple random sampling with
replacement; the survey sample is resampled at the PSU level, drawing
a_h - 1 PSUs with replacement within each stratum h, with replicate
weights (a_h / (a_h - 1)) * m * d for a PSU drawn m times.  The replicate
variance is the mean squared deviation of replicate estimates about the
full-sample estimate, divided by L - 1.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import rng as rng_mod
from .data import NonprobSample, SurveySample
from .exceptions import ConfigError, DataError, NumericalError
from .pipeline import MethodOptions, WeightingProblem, construct_weights, \
    estimate_mean
from .weights import BOOSTED_METHODS, Method

_Z975 = float(ndtri(0.975))


@dataclass(frozen=True)
class BootstrapConfig:
    n_replicates: int
    reuse_tuned_params: bool = True
    seed: int = 0
    deviations_about: str = "full"

    def __post_init__(self):
        if self.n_replicates < 2:
            raise ConfigError("bootstrap needs at least 2 replicates")
        if self.deviations_about not in ("full", "replicate_mean"):
            raise ConfigError(
                "deviations_about must be 'full' or 'replicate_mean'")


@dataclass(frozen=True)
class ReplicateWeights:
    """Per-unit bootstrap weights and the PSU draw counts behind them."""

    unit_weights: np.ndarray
    unit_counts: np.ndarray
    psu_keys: tuple
    psu_counts: np.ndarray


def resample_nonprob(sc, rng_stream):
    """SRSWR resample of the nonprobability sample (duplicated rows)."""
    n = sc.n_rows
    idx = rng_stream.integers(0, n, n)
    outcome = None if sc.outcome is None else sc.outcome[idx]
    return NonprobSample(sc.covariates.take_rows(idx), outcome)


def _stratum_psu_layout(ss):
    """Sorted strata, each with its sorted unique PSUs and unit indices."""
    strata = []
    stratum_labels = np.unique(ss.stratum)
    for h in stratum_labels:
        in_h = np.nonzero(ss.stratum == h)[0]
        psus = np.unique(ss.psu[in_h])
        strata.append((h, psus, in_h))
    return strata


def resample_survey(ss, rng_stream):
    """Resample a_h - 1 PSUs per stratum with replacement."""
    unit_counts = np.zeros(ss.n_rows)
    unit_weights = np.zeros(ss.n_rows)
    psu_keys = []
    psu_counts = []
    for h, psus, in_h in _stratum_psu_layout(ss):
        a_h = len(psus)
        if a_h < 2:
            raise DataError(
                f"stratum {h!r} has a single PSU; collapse it with a "
                "neighboring stratum first (see collapse_strata)")
        draws = rng_stream.integers(0, a_h, a_h - 1)
        counts = np.bincount(draws, minlength=a_h)
        factor = a_h / (a_h - 1.0)
        for j, psu in enumerate(psus):
            psu_keys.append((h, psu))
            psu_counts.append(counts[j])
            in_psu = in_h[ss.psu[in_h] == psu]
            unit_counts[in_psu] = counts[j]
            unit_weights[in_psu] = factor * counts[j] * ss.weights[in_psu]
    return ReplicateWeights(unit_weights=unit_weights,
                            unit_counts=unit_counts,
                            psu_keys=tuple(psu_keys),
                            psu_counts=np.asarray(psu_counts))


def collapse_strata(ss):
    """Merge singleton-PSU strata with the next stratum by label order.

    Moved units keep a compound PSU label (old stratum + PSU) so PSUs from
    different source strata never merge by accident.
    """
    stratum = [str(v) for v in ss.stratum]
    psu = [str(v) for v in ss.psu]
    changed = True
    while changed:
        changed = False
        labels = sorted(set(stratum))
        if len(labels) == 1:
            break
        for pos, h in enumerate(labels):
            in_h = [i for i, s in enumerate(stratum) if s == h]
            if len({psu[i] for i in in_h}) >= 2:
                continue
            target = labels[pos + 1] if pos + 1 < len(labels) else labels[pos - 1]
            for i in in_h:
                psu[i] = f"{h}::{psu[i]}"
                stratum[i] = target
            changed = True
            break
    return SurveySample(ss.covariates, ss.weights,
                        np.asarray(stratum, dtype=object),
                        np.asarray(psu, dtype=object))


def bootstrap_variance(estimates, full_sample_estimate, about="full"):
    """Sum of squared deviations over L - 1.

    Deviations are taken about the full-sample estimate (the displayed
    formula); ``about='replicate_mean'`` switches to the centered variant.
    """
    e = np.asarray(estimates, dtype=np.float64)
    if e.shape[0] < 2:
        raise DataError("bootstrap variance needs at least 2 estimates")
    center = float(np.mean(e)) if about == "replicate_mean" else float(
        full_sample_estimate)
    return float(np.sum((e - center) ** 2) / (e.shape[0] - 1))


def replicate_problem(sc, ss, sc_counts, rep):
    """Build the WeightingProblem for one bootstrap replicate.

    Drawn-zero rows are dropped; multiplicities carry the draw counts (see
    the pipeline module docstring for why this matches duplicated rows).
    """
    keep_c = np.nonzero(sc_counts > 0)[0]
    keep_s = np.nonzero(rep.unit_counts > 0)[0]
    if keep_c.size == 0 or keep_s.size == 0:
        raise NumericalError("degenerate bootstrap replicate")
    from .data import CovariateMatrix

    values = np.vstack([sc.covariates.values[keep_c],
                        ss.covariates.values[keep_s]])
    stacked = CovariateMatrix(values, sc.covariates.column_names)
    outcome = None if sc.outcome is None else sc.outcome[keep_c]
    return WeightingProblem(
        covariates=stacked,
        n_sc=keep_c.size,
        sc_mult=sc_counts[keep_c].astype(np.float64),
        ss_mult=rep.unit_counts[keep_s].astype(np.float64),
        ss_weight=rep.unit_weights[keep_s],
        outcome=outcome,
    )


@dataclass(frozen=True)
class BootstrapResult:
    estimate: float
    variance: float
    se: float
    ci_lower: float
    ci_upper: float
    estimates: np.ndarray
    statuses: tuple
    tuned_params: object


def run_bootstrap(sc, ss, method, options=None, config=None, stream_key=(),
                  tuned_params=None, full_estimate=None):
    """Refit the chosen method on every bootstrap replicate.

    Hyperparameters tuned on the full sample are reused across replicates
    unless ``config.reuse_tuned_params`` is off, in which case every
    replicate re-tunes on its own resample.  Replicate failures are logged;
    more than 5% failures aborts.
    """
    if sc.outcome is None:
        raise DataError("bootstrap variance needs outcome values on the "
                        "nonprobability sample")
    options = options if options is not None else MethodOptions()
    config = config if config is not None else BootstrapConfig(n_replicates=100)
    method = Method(method)

    full_problem = WeightingProblem.from_samples(sc, ss)
    if full_estimate is None or (
            tuned_params is None and method in BOOSTED_METHODS
            and config.reuse_tuned_params):
        tune_rng = rng_mod.stream(config.seed, *stream_key, rng_mod.TUNING)
        outcome = construct_weights(full_problem, method, options,
                                    rng_stream=tune_rng,
                                    tuned_params=tuned_params)
        if full_estimate is None:
            full_estimate = estimate_mean(full_problem, outcome.weights)
        if tuned_params is None:
            tuned_params = outcome.gbm_params

    L = config.n_replicates
    estimates = np.full(L, np.nan)
    statuses = []
    for ell in range(L):
        rng_c = rng_mod.stream(config.seed, *stream_key, ell,
                               rng_mod.BOOTSTRAP_NONPROB)
        rng_s = rng_mod.stream(config.seed, *stream_key, ell,
                               rng_mod.BOOTSTRAP_SURVEY)
        try:
            counts_c = np.bincount(rng_c.integers(0, sc.n_rows, sc.n_rows),
                                   minlength=sc.n_rows)
            rep = resample_survey(ss, rng_s)
            problem = replicate_problem(sc, ss, counts_c, rep)
            use_params = tuned_params if config.reuse_tuned_params else None
            rep_rng = rng_mod.stream(config.seed, *stream_key, ell,
                                     rng_mod.TUNING)
            outcome = construct_weights(problem, method, options,
                                        rng_stream=rep_rng,
                                        tuned_params=use_params)
            estimates[ell] = estimate_mean(problem, outcome.weights)
            statuses.append("ok")
        except (DataError, NumericalError) as exc:
            statuses.append(f"failed: {exc}")

    ok = np.isfinite(estimates)
    n_failed = int(L - ok.sum())
    if n_failed > 0.05 * L:
        raise NumericalError(
            f"{n_failed} of {L} bootstrap replicates failed")
    variance = bootstrap_variance(estimates[ok], full_estimate,
                                  about=config.deviations_about)
    se = float(np.sqrt(variance))
    return BootstrapResult(
        estimate=float(full_estimate), variance=variance, se=se,
        ci_lower=float(full_estimate - _Z975 * se),
        ci_upper=float(full_estimate + _Z975 * se),
        estimates=estimates, statuses=tuple(statuses),
        tuned_params=tuned_params)
