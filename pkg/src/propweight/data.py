"""Samples, covariate matrices, and the covariate-function expansion g(x).

All containers are immutable after construction (arrays are marked
read-only), so they are safe to share across worker processes.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np
import pandas as pd

from .exceptions import DataError

INTERCEPT_NAME = "(intercept)"

# reserved CSV column names
WEIGHT_COL = "__weight"
STRATUM_COL = "__stratum"
PSU_COL = "__psu"
OUTCOME_COL = "__outcome"
RESERVED_COLS = (WEIGHT_COL, STRATUM_COL, PSU_COL, OUTCOME_COL)


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _as_float_matrix(values):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"covariate values must be 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class CovariateMatrix:
    """Dense covariate matrix; rows are units, columns are named covariates."""

    values: np.ndarray
    column_names: tuple

    def __post_init__(self):
        arr = _as_float_matrix(self.values)
        names = tuple(str(c) for c in self.column_names)
        if arr.shape[0] < 1:
            raise DataError("covariate matrix needs at least one row")
        if arr.shape[1] != len(names):
            raise DataError(
                f"{len(names)} column names for {arr.shape[1]} columns")
        if len(set(names)) != len(names):
            raise DataError("covariate column names must be unique")
        if not np.all(np.isfinite(arr)):
            bad = [names[j] for j in np.nonzero(~np.isfinite(arr).all(axis=0))[0]]
            raise DataError(f"non-finite covariate values in column(s) {bad}")
        object.__setattr__(self, "values", _freeze(arr))
        object.__setattr__(self, "column_names", names)

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_cols(self):
        return self.values.shape[1]

    def column_index(self, name):
        try:
            return self.column_names.index(name)
        except ValueError:
            raise DataError(f"unknown covariate column {name!r}") from None

    def take_rows(self, idx):
        return CovariateMatrix(self.values[np.asarray(idx)], self.column_names)


@dataclass(frozen=True)
class FeatureExpansion:
    """Deterministic expansion spec for g(x).

    ``main_effects=None`` means all raw columns.  ``pairwise_interactions``
    is either a flag (True = all pairs of the main effects) or an explicit
    tuple of name pairs.  Expanded column order is fixed: intercept, mains
    (input order), quadratics (input order), interactions (lexicographic by
    raw column-index pair).
    """

    include_intercept: bool = True
    main_effects: tuple = None
    pairwise_interactions: object = False
    quadratic_terms: tuple = ()

    def __post_init__(self):
        if self.main_effects is not None:
            object.__setattr__(self, "main_effects",
                               tuple(str(c) for c in self.main_effects))
        if not isinstance(self.pairwise_interactions, bool):
            pairs = tuple((str(a), str(b)) for a, b in self.pairwise_interactions)
            object.__setattr__(self, "pairwise_interactions", pairs)
        object.__setattr__(self, "quadratic_terms",
                           tuple(str(c) for c in self.quadratic_terms))


MAIN_EFFECTS_ONLY = FeatureExpansion(include_intercept=False)
MAINS_AND_INTERACTIONS = FeatureExpansion(include_intercept=True,
                                          pairwise_interactions=True)


def expand_features(raw, spec):
    """Apply a FeatureExpansion to a raw covariate matrix.

    Column order is intercept, mains, quadratics, then interactions sorted
    lexicographically by (i, j) raw column-index pair with i < j; an
    interaction column is the elementwise product of its two raw columns.
    """
    mains = spec.main_effects if spec.main_effects is not None else raw.column_names
    if len(set(mains)) != len(mains):
        raise DataError("duplicate main-effect term requested")
    main_idx = [raw.column_index(c) for c in mains]

    if spec.pairwise_interactions is True:
        pair_idx = list(combinations(sorted(main_idx), 2))
    elif spec.pairwise_interactions is False:
        pair_idx = []
    else:
        pair_idx = []
        for a, b in spec.pairwise_interactions:
            ia, ib = raw.column_index(a), raw.column_index(b)
            if ia == ib:
                raise DataError(f"interaction of {a!r} with itself; "
                                "use a quadratic term instead")
            pair_idx.append((min(ia, ib), max(ia, ib)))
        if len(set(pair_idx)) != len(pair_idx):
            raise DataError("duplicate interaction term requested")
        pair_idx.sort()

    if len(set(spec.quadratic_terms)) != len(spec.quadratic_terms):
        raise DataError("duplicate quadratic term requested")
    quad_idx = [raw.column_index(c) for c in spec.quadratic_terms]

    n = raw.n_rows
    cols = []
    names = []
    if spec.include_intercept:
        cols.append(np.ones(n))
        names.append(INTERCEPT_NAME)
    for c, j in zip(mains, main_idx):
        cols.append(raw.values[:, j])
        names.append(c)
    for c, j in zip(spec.quadratic_terms, quad_idx):
        cols.append(raw.values[:, j] ** 2)
        names.append(f"{c}^2")
    for ia, ib in pair_idx:
        cols.append(raw.values[:, ia] * raw.values[:, ib])
        names.append(f"{raw.column_names[ia]}:{raw.column_names[ib]}")

    if not cols:
        raise DataError("feature expansion produced no columns")
    return CovariateMatrix(np.column_stack(cols), tuple(names))


@dataclass(frozen=True)
class SurveySample:
    """Reference probability sample with design weights and PSU structure.

    ``stratum``/``psu`` default to a single stratum with one PSU per unit
    (the design used when no clustering information is available).
    """

    covariates: CovariateMatrix
    weights: np.ndarray
    stratum: np.ndarray = None
    psu: np.ndarray = None

    def __post_init__(self):
        n = self.covariates.n_rows
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (n,):
            raise DataError(f"need {n} survey weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise DataError("survey weights must be positive and finite")
        object.__setattr__(self, "weights", _freeze(w))
        stratum = self.stratum if self.stratum is not None else np.zeros(n, dtype=np.int64)
        psu = self.psu if self.psu is not None else np.arange(n, dtype=np.int64)
        stratum = np.asarray(stratum)
        psu = np.asarray(psu)
        if stratum.shape != (n,) or psu.shape != (n,):
            raise DataError("stratum and psu labels must be given per unit")
        object.__setattr__(self, "stratum", _freeze(stratum))
        object.__setattr__(self, "psu", _freeze(psu))

    @property
    def n_rows(self):
        return self.covariates.n_rows


@dataclass(frozen=True)
class NonprobSample:
    """Volunteer sample: covariates plus an optional outcome vector."""

    covariates: CovariateMatrix
    outcome: np.ndarray = None

    def __post_init__(self):
        if self.outcome is not None:
            y = np.asarray(self.outcome, dtype=np.float64)
            if y.shape != (self.covariates.n_rows,):
                raise DataError(
                    f"outcome length {y.shape} does not match "
                    f"{self.covariates.n_rows} rows")
            if not np.all(np.isfinite(y)):
                raise DataError("non-finite outcome values")
            object.__setattr__(self, "outcome", _freeze(y))

    @property
    def n_rows(self):
        return self.covariates.n_rows


@dataclass(frozen=True)
class CombinedSample:
    """Stacked nonprobability + survey rows with membership indicator R."""

    covariates: CovariateMatrix
    membership: np.ndarray
    fit_weights: np.ndarray

    def __post_init__(self):
        n = self.covariates.n_rows
        r = np.asarray(self.membership, dtype=np.float64)
        w = np.asarray(self.fit_weights, dtype=np.float64)
        if r.shape != (n,) or w.shape != (n,):
            raise DataError("membership and fit_weights must be given per row")
        if not np.all((r == 0.0) | (r == 1.0)):
            raise DataError("membership indicator must be 0 or 1")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise DataError("fit weights must be positive and finite")
        object.__setattr__(self, "membership", _freeze(r))
        object.__setattr__(self, "fit_weights", _freeze(w))

    @property
    def n_rows(self):
        return self.covariates.n_rows


def _check_schema(sc, ss):
    if sc.covariates.column_names != ss.covariates.column_names:
        raise DataError(
            "covariate schema mismatch between samples: "
            f"{sc.covariates.column_names} vs {ss.covariates.column_names}")


def _stack(sc, ss, survey_fit_weights):
    _check_schema(sc, ss)
    values = np.vstack([sc.covariates.values, ss.covariates.values])
    r = np.concatenate([np.ones(sc.n_rows), np.zeros(ss.n_rows)])
    w = np.concatenate([np.ones(sc.n_rows), survey_fit_weights])
    return CombinedSample(CovariateMatrix(values, sc.covariates.column_names), r, w)


def stack_unweighted(sc, ss):
    """Stack s_c over s_s with unit fit weights on both sides."""
    return _stack(sc, ss, np.ones(ss.n_rows))


def stack_weighted(sc, ss):
    """Stack s_c (unit weights) over s_s carrying its design weights."""
    return _stack(sc, ss, ss.weights)


def _encode_covariates(df, categories):
    """Numeric passthrough plus one-hot (first level dropped) for text columns."""
    cols = []
    names = []
    for col in df.columns:
        series = df[col]
        if col in categories:
            levels = categories[col]
            observed = series.astype(str).to_numpy()
            for level in levels[1:]:
                cols.append((observed == level).astype(np.float64))
                names.append(f"{col}={level}")
        else:
            values = pd.to_numeric(series, errors="coerce").to_numpy(dtype=np.float64)
            if np.any(np.isnan(values) & ~series.isna().to_numpy()):
                raise DataError(f"column {col!r} mixes numeric and text values")
            cols.append(values)
            names.append(col)
    return CovariateMatrix(np.column_stack(cols), tuple(names))


def _read_frame(path):
    try:
        df = pd.read_csv(path, comment="#", skip_blank_lines=True)
    except Exception as exc:
        raise DataError(f"cannot read CSV {path}: {exc}") from None
    if df.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    if any(str(c).startswith("Unnamed:") for c in df.columns):
        raise DataError(f"{path}: header row with column names is required")
    if df.isna().any().any():
        bad = [c for c in df.columns if df[c].isna().any()]
        raise DataError(f"{path}: missing values in column(s) {bad}; "
                        "rows must be fully observed")
    return df


def _categorical_levels(frames):
    """Shared sorted level maps for text columns across data frames."""
    categories = {}
    for df in frames:
        for col in df.columns:
            if col in RESERVED_COLS:
                continue
            if df[col].dtype == object:
                levels = set(str(v) for v in df[col])
                categories.setdefault(col, set()).update(levels)
    return {col: sorted(levels) for col, levels in categories.items()}


def read_samples(nonprob_path, survey_path):
    """Load the nonprobability and survey CSVs with a harmonized schema.

    Reserved columns: ``__weight`` (survey design weight, required in the
    survey file), ``__stratum``/``__psu`` (optional survey design labels),
    ``__outcome`` (optional nonprobability outcome).  Every other column is
    a covariate; text columns are one-hot encoded against the union of
    levels seen in either file, first level dropped.
    """
    df_c = _read_frame(nonprob_path)
    df_s = _read_frame(survey_path)

    for col in (WEIGHT_COL, STRATUM_COL, PSU_COL):
        if col in df_c.columns:
            raise DataError(f"{nonprob_path}: column {col!r} is only valid "
                            "in the survey file")
    if OUTCOME_COL in df_s.columns:
        raise DataError(f"{survey_path}: column {OUTCOME_COL!r} is only valid "
                        "in the nonprobability file")
    if WEIGHT_COL not in df_s.columns:
        raise DataError(f"{survey_path}: survey file requires a "
                        f"{WEIGHT_COL!r} column of design weights")

    cov_cols_c = [c for c in df_c.columns if c not in RESERVED_COLS]
    cov_cols_s = [c for c in df_s.columns if c not in RESERVED_COLS]
    if cov_cols_c != cov_cols_s:
        raise DataError(
            "covariate columns differ between files: "
            f"{cov_cols_c} vs {cov_cols_s}")

    for col in df_c.columns:
        if col.startswith("__") and col not in RESERVED_COLS:
            raise DataError(f"unknown reserved column {col!r}")
    for col in df_s.columns:
        if col.startswith("__") and col not in RESERVED_COLS:
            raise DataError(f"unknown reserved column {col!r}")

    categories = _categorical_levels([df_c[cov_cols_c], df_s[cov_cols_s]])
    for col, levels in categories.items():
        if len(levels) < 2:
            raise DataError(f"categorical column {col!r} has a single level")

    cov_c = _encode_covariates(df_c[cov_cols_c], categories)
    cov_s = _encode_covariates(df_s[cov_cols_s], categories)

    outcome = None
    if OUTCOME_COL in df_c.columns:
        outcome = pd.to_numeric(df_c[OUTCOME_COL]).to_numpy(dtype=np.float64)
    sc = NonprobSample(cov_c, outcome)

    weights = pd.to_numeric(df_s[WEIGHT_COL]).to_numpy(dtype=np.float64)
    stratum = df_s[STRATUM_COL].to_numpy().astype(str) if STRATUM_COL in df_s.columns else None
    psu = df_s[PSU_COL].to_numpy().astype(str) if PSU_COL in df_s.columns else None
    if (stratum is None) != (psu is None):
        raise DataError("survey file must carry both __stratum and __psu "
                        "or neither")
    ss = SurveySample(cov_s, weights, stratum, psu)
    return sc, ss
