"""Covariate-balance metric (ASMD) and balance-driven hyperparameter search.

The tuning criterion compares the pseudo-weighted nonprobability sample
against the reference survey sample: the unweighted survey sample for the
boosted two-step method, the design-weighted survey sample for the boosted
one-step method.  For each candidate (shrinkage, depth, node size) a single
ensemble is grown to the largest tree count and the score is snapshotted at
every tree count in the grid, so nested tree counts never refit.
"""

from dataclasses import dataclass
from enum import Enum
from itertools import product

import numpy as np

from .boosting import TuningParams, fit_gbm_with_scores
from .data import stack_unweighted, stack_weighted
from .exceptions import ConfigError, DataError, NumericalError
from .weights import Method


class Comparison(Enum):
    GBM_WEIGHTED_SC_VS_UNWEIGHTED_SS = "unweighted_reference"
    WEIGHTED_SC_VS_SAMPLE_WEIGHTED_SS = "sample_weighted_reference"


@dataclass(frozen=True)
class BalanceSpec:
    """Per-covariate importance and which reference moments to balance on."""

    importance: np.ndarray = None
    comparison: Comparison = Comparison.GBM_WEIGHTED_SC_VS_UNWEIGHTED_SS

    def __post_init__(self):
        if self.importance is not None:
            a = np.asarray(self.importance, dtype=np.float64)
            if np.any(a <= 0) or not np.all(np.isfinite(a)):
                raise DataError("importance constants must be positive")
            object.__setattr__(self, "importance", a)


@dataclass(frozen=True)
class TuningGrid:
    shrinkage: tuple
    n_trees: tuple
    max_depth: tuple
    min_node_size: tuple = (10,)

    def __post_init__(self):
        for name in ("shrinkage", "n_trees", "max_depth", "min_node_size"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ConfigError(f"tuning grid has no {name} candidates")
            object.__setattr__(self, name, vals)

    def points(self):
        return list(product(self.shrinkage, self.n_trees, self.max_depth,
                            self.min_node_size))


# grids from the simulation study and the survey application; the desk grid
# is the reduced default sized for laptop runs
SIMULATION_GRID = TuningGrid(shrinkage=(0.1, 0.01, 0.001),
                             n_trees=(1000, 2000, 5000),
                             max_depth=(2, 3, 4, 5))
DESK_GRID = TuningGrid(shrinkage=(0.1, 0.01), n_trees=(1000, 3000),
                       max_depth=(2, 3, 5))
REAL_DATA_GRID = TuningGrid(shrinkage=(0.001, 0.0001),
                            n_trees=(1000, 2000, 5000, 10000),
                            max_depth=(4, 5, 6, 7, 8, 9, 10),
                            min_node_size=(5, 10, 15, 20))


def _weighted_moments(values, weights):
    total = weights.sum()
    mean = weights @ values / total
    var = weights @ (values - mean) ** 2 / total
    return mean, var


def smd_by_covariate(sc_cov, sc_weights, ref_cov, ref_weights):
    """Absolute standardized mean difference per covariate.

    Both sides use weight-normalized means and variances; the denominator
    is the pooled spread sqrt((var_c + var_s) / 2).  A covariate that is
    constant on both sides contributes 0 when the means agree and is an
    error otherwise.
    """
    if sc_cov.column_names != ref_cov.column_names:
        raise DataError("balance comparison requires a shared covariate schema")
    sc_w = np.asarray(sc_weights, dtype=np.float64)
    ref_w = np.asarray(ref_weights, dtype=np.float64)
    if np.any(sc_w <= 0) or np.any(ref_w <= 0):
        raise DataError("balance weights must be positive")
    out = np.empty(sc_cov.n_cols)
    for j in range(sc_cov.n_cols):
        mc, vc = _weighted_moments(sc_cov.values[:, j], sc_w)
        ms, vs = _weighted_moments(ref_cov.values[:, j], ref_w)
        pooled = np.sqrt(0.5 * (vc + vs))
        if pooled == 0.0:
            if mc == ms:
                out[j] = 0.0
            else:
                raise NumericalError(
                    f"covariate {sc_cov.column_names[j]!r} has zero pooled "
                    "variance but unequal means")
        else:
            out[j] = abs(mc - ms) / pooled
    return out


def asmd(sc_cov, sc_weights, ref_cov, ref_weights, spec=None):
    """Importance-weighted sum of absolute standardized mean differences."""
    spec = spec if spec is not None else BalanceSpec()
    smd = smd_by_covariate(sc_cov, sc_weights, ref_cov, ref_weights)
    if spec.importance is None:
        return float(smd.sum())
    if spec.importance.shape != smd.shape:
        raise DataError(
            f"{spec.importance.shape[0]} importance constants for "
            f"{smd.shape[0]} covariates")
    return float(spec.importance @ smd)


@dataclass(frozen=True)
class TuneEvaluation:
    params: TuningParams
    asmd: float
    status: str


@dataclass(frozen=True)
class TuneResult:
    """Winning parameters, the full evaluation log, and the winning fit."""

    params: TuningParams
    evaluations: tuple
    score: object
    sc_scores: np.ndarray


def _truncate_score(score, n_trees):
    from .boosting import BoostedScore

    end = int(score.offsets[n_trees])
    return BoostedScore(
        initial=score.initial, shrinkage=score.shrinkage,
        weighted=score.weighted, columns=score.columns,
        feature=score.feature[:end], threshold=score.threshold[:end],
        value=score.value[:end], left=score.left[:end],
        right=score.right[:end], offsets=score.offsets[:n_trees + 1])


def tune_gbm(combined, n_sc, sc_mult, ref_cov, ref_weights, grid, spec,
             rng_stream=None):
    """Grid search minimizing the pseudo-weighted ASMD.

    ``combined`` is the stacked sample the ensembles are fit on, with its
    first ``n_sc`` rows the nonprobability side; ``sc_mult`` are those
    rows' multiplicities (ones outside bootstrap replicates).  Ties break
    to smaller shrinkage, then fewer trees, then shallower depth, then
    larger node size.
    """
    sc_cov = combined.covariates.take_rows(np.arange(n_sc))
    t_list = sorted(set(int(t) for t in grid.n_trees))
    results = {}
    best_rank = None
    best_key = None
    best_score = None
    best_b = None

    for nu, depth, mn in product(grid.shrinkage, grid.max_depth,
                                 grid.min_node_size):
        try:
            score, _, snaps = fit_gbm_with_scores(
                combined, TuningParams(nu, t_list[-1], depth, mn),
                rng_stream, snapshot_trees=t_list)
        except (DataError, NumericalError, FloatingPointError) as exc:
            for t in t_list:
                results[(nu, t, depth, mn)] = (np.nan, f"failed: {exc}")
            continue
        for t in t_list:
            b_sc = snaps[t][:n_sc]
            try:
                gbm_w = sc_mult * np.exp(-b_sc)
                if not np.all(np.isfinite(gbm_w)) or np.any(gbm_w <= 0):
                    raise NumericalError("score produced unusable weights")
                value = asmd(sc_cov, gbm_w, ref_cov, ref_weights, spec)
            except (DataError, NumericalError, FloatingPointError) as exc:
                results[(nu, t, depth, mn)] = (np.nan, f"failed: {exc}")
                continue
            results[(nu, t, depth, mn)] = (value, "ok")
            rank = (value, nu, t, depth, -mn)
            if best_rank is None or rank < best_rank:
                best_rank = rank
                best_key = (nu, t, depth, mn)
                best_score = score
                best_b = b_sc.copy()

    evaluations = tuple(
        TuneEvaluation(TuningParams(nu, int(t), depth, mn),
                       float(results[(nu, int(t), depth, mn)][0]),
                       results[(nu, int(t), depth, mn)][1])
        for nu, t, depth, mn in grid.points())

    if best_key is None:
        raise NumericalError("every tuning grid point failed")

    nu, t, depth, mn = best_key
    return TuneResult(params=TuningParams(nu, t, depth, mn),
                      evaluations=evaluations,
                      score=_truncate_score(best_score, t),
                      sc_scores=best_b)


def tune(sc, ss, grid, spec, method, rng_stream=None):
    """Select GBM tuning parameters for a boosted method on full samples."""
    if method == Method.BOOST_TWO_PS:
        combined = stack_unweighted(sc, ss)
        ref_weights = np.ones(ss.n_rows)
    elif method == Method.BOOST_ONE_PS:
        combined = stack_weighted(sc, ss)
        ref_weights = ss.weights
    else:
        raise ConfigError(f"tuning applies to boosted methods, not {method}")
    return tune_gbm(combined, sc.n_rows, np.ones(sc.n_rows), ss.covariates,
                    ref_weights, grid, spec, rng_stream)
