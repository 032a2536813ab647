"""Shared orchestration: fit a pseudo-weighting method on a sample pair.

A WeightingProblem is the stacked representation used everywhere —
simulation replications, bootstrap replicates, and the CSV pathway.
Bootstrap replicates reuse it with multiplicities instead of duplicated
rows: a nonprobability unit drawn k times carries multiplicity k, and a
survey unit whose PSU was drawn m times carries multiplicity m (its
"unweighted" replicate presence) alongside its rescaled bootstrap design
weight.  Every fit below consumes those through case weights, which is
likelihood-identical to physically duplicating rows.
"""

from dataclasses import dataclass

import numpy as np

from .balance import BalanceSpec, DESK_GRID, tune_gbm
from .boosting import TuningParams, fit_gbm_with_scores
from .data import (CombinedSample, CovariateMatrix, FeatureExpansion,
                   MAINS_AND_INTERACTIONS, NonprobSample, SurveySample,
                   expand_features)
from .exceptions import ConfigError, DataError, NumericalError
from .logistic import fit_step1_logistic, fit_step2_logistic
from .weights import Method, PseudoWeights, hajek_mean, trim_weights


@dataclass(frozen=True)
class WeightingProblem:
    """Stacked raw covariates (s_c rows first) plus per-row sampling state."""

    covariates: CovariateMatrix
    n_sc: int
    sc_mult: np.ndarray
    ss_mult: np.ndarray
    ss_weight: np.ndarray
    outcome: np.ndarray = None

    @classmethod
    def from_samples(cls, sc, ss):
        if sc.covariates.column_names != ss.covariates.column_names:
            raise DataError("covariate schema mismatch between samples")
        stacked = CovariateMatrix(
            np.vstack([sc.covariates.values, ss.covariates.values]),
            sc.covariates.column_names)
        return cls(covariates=stacked, n_sc=sc.n_rows,
                   sc_mult=np.ones(sc.n_rows), ss_mult=np.ones(ss.n_rows),
                   ss_weight=ss.weights.copy(), outcome=sc.outcome)

    @property
    def n_ss(self):
        return self.covariates.n_rows - self.n_sc

    @property
    def sc_covariates(self):
        return self.covariates.take_rows(np.arange(self.n_sc))

    @property
    def ss_covariates(self):
        return self.covariates.take_rows(
            np.arange(self.n_sc, self.covariates.n_rows))

    def sc_sample(self):
        return NonprobSample(self.sc_covariates, self.outcome)

    def combined_unweighted(self):
        """Stack for the unweighted loss: replicate multiplicities as weights."""
        r = np.concatenate([np.ones(self.n_sc), np.zeros(self.n_ss)])
        w = np.concatenate([self.sc_mult, self.ss_mult])
        return CombinedSample(self.covariates, r, w)

    def combined_weighted(self):
        """Stack for the survey-weighted loss."""
        r = np.concatenate([np.ones(self.n_sc), np.zeros(self.n_ss)])
        w = np.concatenate([self.sc_mult, self.ss_weight])
        return CombinedSample(self.covariates, r, w)

    def step2_survey(self):
        return SurveySample(self.ss_covariates, self.ss_weight)


@dataclass(frozen=True)
class MethodOptions:
    """Expansions, tuning inputs, and optional trimming for one method run.

    ``parametric_expansion`` feeds the logistic models; ``step2_expansion``
    (defaulting to the parametric one) feeds the boosted two-step second
    stage.  ``gbm_params`` fixes the ensemble settings and skips tuning.
    """

    parametric_expansion: FeatureExpansion = MAINS_AND_INTERACTIONS
    step2_expansion: FeatureExpansion = None
    grid: object = DESK_GRID
    gbm_params: TuningParams = None
    importance: np.ndarray = None
    trim_quantile: float = None

    def resolved_step2(self):
        return (self.step2_expansion if self.step2_expansion is not None
                else self.parametric_expansion)


@dataclass(frozen=True)
class WeightingOutcome:
    weights: PseudoWeights
    tuned: object
    gbm_params: TuningParams
    step2_diagnostic: float
    score: object = None


def _fit_or_tune_gbm(problem, method, options, tuned_params, rng_stream):
    """Return (tune_result_or_None, params, sc scores, fitted score)."""
    if method == Method.BOOST_TWO_PS:
        combined = problem.combined_unweighted()
        ref_weights = problem.ss_mult
    else:
        combined = problem.combined_weighted()
        ref_weights = problem.ss_weight

    params = tuned_params if tuned_params is not None else options.gbm_params
    if params is not None:
        score, scores, _ = fit_gbm_with_scores(combined, params, rng_stream)
        return None, params, scores[:problem.n_sc], score

    spec = BalanceSpec(importance=options.importance)
    result = tune_gbm(combined, problem.n_sc, problem.sc_mult,
                      problem.ss_covariates, ref_weights, options.grid,
                      spec, rng_stream)
    return result, result.params, result.sc_scores, result.score


def construct_weights(problem, method, options=None, rng_stream=None,
                      tuned_params=None):
    """Construct pseudo-weights for the problem's nonprobability rows."""
    options = options if options is not None else MethodOptions()
    method = Method(method)
    tuned = None
    gbm_params = None
    step2_diag = float("nan")

    score = None
    if method == Method.NAIVE:
        pw = PseudoWeights(method, np.ones(problem.n_sc), {})

    elif method == Method.ONE_PS:
        fit = fit_step1_logistic(problem.combined_weighted(),
                                 options.parametric_expansion)
        if not fit.converged:
            raise NumericalError("one-step logistic fit did not converge")
        x = expand_features(problem.sc_covariates, options.parametric_expansion)
        pw = PseudoWeights(method, np.exp(-(x.values @ fit.coefficients)),
                           {"coefficients": fit.coefficients})

    elif method == Method.TWO_PS:
        step1 = fit_step1_logistic(problem.combined_unweighted(),
                                   options.parametric_expansion)
        step2, q_hat = fit_step2_logistic(problem.step2_survey(),
                                          options.parametric_expansion,
                                          membership_weights=problem.ss_mult)
        if not (step1.converged and step2.converged):
            raise NumericalError("two-step logistic fits did not converge")
        x = expand_features(problem.sc_covariates, options.parametric_expansion)
        b = x.values @ (step1.coefficients + step2.coefficients)
        pw = PseudoWeights(method, np.exp(-b), {
            "step1_coefficients": step1.coefficients,
            "step2_coefficients": step2.coefficients,
        })
        step2_diag = _step2_diag(q_hat, problem)

    elif method == Method.BOOST_TWO_PS:
        tuned, gbm_params, b1, score = _fit_or_tune_gbm(
            problem, method, options, tuned_params, rng_stream)
        step2, q_hat = fit_step2_logistic(problem.step2_survey(),
                                          options.resolved_step2(),
                                          membership_weights=problem.ss_mult)
        if not step2.converged:
            raise NumericalError("step-2 logistic fit did not converge")
        x = expand_features(problem.sc_covariates, options.resolved_step2())
        b2 = x.values @ step2.coefficients
        pw = PseudoWeights(method, np.exp(-(b1 + b2)), {
            "gbm_params": gbm_params,
            "step2_coefficients": step2.coefficients,
        })
        step2_diag = _step2_diag(q_hat, problem)

    elif method == Method.BOOST_ONE_PS:
        tuned, gbm_params, b, score = _fit_or_tune_gbm(
            problem, method, options, tuned_params, rng_stream)
        pw = PseudoWeights(method, np.exp(-b), {"gbm_params": gbm_params})

    else:
        raise ConfigError(f"unknown method {method}")

    if options.trim_quantile is not None:
        pw = trim_weights(pw, options.trim_quantile)
    return WeightingOutcome(weights=pw, tuned=tuned, gbm_params=gbm_params,
                            step2_diagnostic=step2_diag, score=score)


def _step2_diag(q_hat, problem):
    d_hat = (1.0 - q_hat) / np.clip(q_hat, 1e-10, None)
    return float(np.mean(np.abs(d_hat - problem.ss_weight) / problem.ss_weight))


def estimate_mean(problem, pw):
    """Pseudo-weighted mean of the outcome over the nonprobability rows."""
    if problem.outcome is None:
        raise DataError("no outcome values to estimate a mean from")
    return hajek_mean(pw, problem.outcome, multiplicity=problem.sc_mult)
