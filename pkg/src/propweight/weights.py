"""Pseudo-weight construction and the pseudo-weighted mean estimator."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import expand_features
from .exceptions import DataError, NumericalError


class Method(str, Enum):
    """Pseudo-weighting methods (plus the unweighted baseline)."""

    NAIVE = "naive"
    ONE_PS = "one_ps"
    TWO_PS = "two_ps"
    BOOST_ONE_PS = "boost_one_ps"
    BOOST_TWO_PS = "boost_two_ps"

    def __str__(self):
        return self.value


BOOSTED_METHODS = (Method.BOOST_ONE_PS, Method.BOOST_TWO_PS)


@dataclass(frozen=True)
class PseudoWeights:
    """Per-unit weights for the nonprobability sample under one method."""

    method: Method
    values: np.ndarray
    provenance: dict

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
            raise NumericalError(
                f"{self.method} produced non-finite or non-positive weights")
        object.__setattr__(self, "values", v)

    @property
    def normalized(self):
        """Weights rescaled to sum to the sample size (diagnostic view)."""
        return self.values * (self.values.shape[0] / self.values.sum())


def _exp_neg(b, method, provenance):
    return PseudoWeights(method, np.exp(-np.asarray(b, dtype=np.float64)),
                         provenance)


def weights_1ps(fit, sc):
    """One-step weights exp(-b_w(x)) from the survey-weighted logistic fit."""
    if not fit.converged:
        raise NumericalError("one-step logistic fit did not converge")
    x = expand_features(sc.covariates, fit.expansion)
    return _exp_neg(x.values @ fit.coefficients, Method.ONE_PS,
                    {"coefficients": fit.coefficients})


def weights_2ps(step1, step2, sc):
    """Two-step weights exp(-(b1(x) + b2(x))) from the two logistic fits."""
    if not (step1.converged and step2.converged):
        raise NumericalError("two-step logistic fits did not converge")
    if step1.expansion != step2.expansion:
        raise DataError("step-1 and step-2 fits use different expansions")
    x = expand_features(sc.covariates, step1.expansion)
    b = x.values @ (step1.coefficients + step2.coefficients)
    return _exp_neg(b, Method.TWO_PS, {
        "step1_coefficients": step1.coefficients,
        "step2_coefficients": step2.coefficients,
    })


def weights_boost2ps(score, step2, sc):
    """Boosted two-step weights exp(-(b1_gbm(x) + b2(x)))."""
    if score.weighted:
        raise DataError("the boosted two-step score must be fit on the "
                        "unweighted stack")
    if not step2.converged:
        raise NumericalError("step-2 logistic fit did not converge")
    b1 = score.evaluate(sc.covariates)
    x = expand_features(sc.covariates, step2.expansion)
    b2 = x.values @ step2.coefficients
    return _exp_neg(b1 + b2, Method.BOOST_TWO_PS, {
        "n_trees": score.n_trees,
        "shrinkage": score.shrinkage,
        "step2_coefficients": step2.coefficients,
    })


def weights_boost1ps(score, sc):
    """Boosted one-step weights exp(-b_w(x)) from the weighted-loss score."""
    b = score.evaluate(sc.covariates)
    return _exp_neg(b, Method.BOOST_ONE_PS, {
        "n_trees": score.n_trees,
        "shrinkage": score.shrinkage,
    })


def trim_weights(pw, quantile):
    """Cap weights at the given quantile (optional; off by default)."""
    if not 0.0 < quantile <= 1.0:
        raise DataError(f"trim quantile must be in (0, 1], got {quantile}")
    cap = np.quantile(pw.values, quantile)
    return PseudoWeights(pw.method, np.minimum(pw.values, cap),
                         dict(pw.provenance, trimmed_at=quantile))


def hajek_mean(weights, y, multiplicity=None):
    """Ratio estimator sum(w y) / sum(w); invariant to weight rescaling."""
    w = weights.values if isinstance(weights, PseudoWeights) else np.asarray(
        weights, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if w.shape != y.shape:
        raise DataError("weights and outcomes must have equal length")
    if multiplicity is not None:
        w = w * np.asarray(multiplicity, dtype=np.float64)
    total = w.sum()
    if not total > 0.0:
        raise NumericalError("weights sum to zero or below")
    return float(np.dot(w, y) / total)
