"""Pseudo-weighting of nonprobability samples against a reference survey.

Four propensity-based pseudo-weight constructions (one- and two-step, each
with a logistic or gradient-boosted balancing score), balance-driven
hyperparameter tuning, stratified PSU bootstrap variance, and the Monte
Carlo evaluation harness.
"""

from .balance import (BalanceSpec, Comparison, DESK_GRID, REAL_DATA_GRID,
                      SIMULATION_GRID, TuneResult, TuningGrid, asmd,
                      smd_by_covariate, tune)
from .boosting import (BoostedScore, RegressionTree, TuningParams,
                       evaluate_score, fit_gbm, fit_tree, log_loss)
from .bootstrap import (BootstrapConfig, BootstrapResult, ReplicateWeights,
                        bootstrap_variance, collapse_strata, resample_nonprob,
                        resample_survey, run_bootstrap)
from .data import (CombinedSample, CovariateMatrix, FeatureExpansion,
                   NonprobSample, SurveySample, expand_features,
                   read_samples, stack_unweighted, stack_weighted)
from .exceptions import (ConfigError, DataError, NumericalError,
                         PropweightError)
from .logistic import (LogisticFit, fit_step1_logistic, fit_step2_logistic,
                       fit_weighted_logistic, step2_weight_diagnostic)
from .pipeline import (MethodOptions, WeightingProblem, construct_weights,
                       estimate_mean)
from .simulation import (MetricsReport, Population, ScenarioConfig,
                         SCENARIO_IDS, compute_metrics, compute_mos,
                         generate_population, pps_sample, run_scenario)
from .weights import (Method, PseudoWeights, hajek_mean, trim_weights,
                      weights_1ps, weights_2ps, weights_boost1ps,
                      weights_boost2ps)

__version__ = "0.1.0"
