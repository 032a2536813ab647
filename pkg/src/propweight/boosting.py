"""Gradient boosting of the balancing score on the logit scale.

The ensemble minimizes the membership log-loss over the combined sample:
the initial score is the (weighted) sample log-odds, each iteration fits a
regression tree to the residuals R_i - expit(b(x_i)), terminal nodes carry
the (case-weighted) mean residual, and trees enter with shrinkage nu.
"""

import json
from dataclasses import dataclass

import numpy as np

from ._treefit import LEAF, _gbm_fit, _grow_tree, _predict_scores
from .exceptions import DataError

SCHEMA_VERSION = 1


def _feature_major(values):
    return np.ascontiguousarray(values.T)


def _presort(values):
    """Per-feature stable argsort; uint16 indices when the sample fits."""
    order = np.argsort(values, axis=0, kind="stable").T
    dtype = np.uint16 if values.shape[0] <= np.iinfo(np.uint16).max else np.int32
    return np.ascontiguousarray(order.astype(dtype))


@dataclass(frozen=True)
class TuningParams:
    """GBM tuning vector: shrinkage, tree count, depth, node size, bagging."""

    shrinkage: float
    n_trees: int
    max_depth: int
    min_node_size: int = 10
    bag_fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.shrinkage <= 1.0:
            raise DataError(f"shrinkage must be in (0, 1], got {self.shrinkage}")
        if self.n_trees < 0:
            raise DataError(f"n_trees must be >= 0, got {self.n_trees}")
        if self.max_depth < 1:
            raise DataError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_node_size < 1:
            raise DataError(f"min_node_size must be >= 1, got {self.min_node_size}")
        if not 0.0 < self.bag_fraction <= 1.0:
            raise DataError(f"bag_fraction must be in (0, 1], got {self.bag_fraction}")


@dataclass(frozen=True)
class RegressionTree:
    """Packed binary regression tree (see _treefit for the layout)."""

    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @property
    def n_leaves(self):
        return int(np.sum(self.feature == LEAF))

    @property
    def n_nodes(self):
        return int(self.feature.shape[0])

    def predict(self, values):
        """Leaf value for each row of a (n, p) matrix."""
        values = np.asarray(values, dtype=np.float64)
        xf = _feature_major(values)
        offsets = np.array([0, self.n_nodes], dtype=np.int64)
        return _predict_scores(xf, 0.0, 1.0, self.feature, self.threshold,
                               self.value, self.left, self.right, offsets)


def fit_tree(features, targets, case_weights, max_depth, min_node_size,
             rng_stream=None):
    """Greedy least-squares regression tree with weighted residual means.

    ``rng_stream`` is accepted for interface symmetry with fit_gbm; the
    exact fit is deterministic and does not consume randomness.
    """
    values = features.values if hasattr(features, "values") else np.asarray(features, float)
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(case_weights, dtype=np.float64)
    n, p = values.shape
    if n == 0:
        raise DataError("cannot fit a tree on zero rows")
    if targets.shape != (n,) or weights.shape != (n,):
        raise DataError("targets and case_weights must match the row count")
    if not np.all(np.isfinite(targets)):
        raise DataError("non-finite targets")
    if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
        raise DataError("case weights must be positive and finite")
    if max_depth < 1 or min_node_size < 1:
        raise DataError("max_depth and min_node_size must be >= 1")

    xf = _feature_major(values)
    srt = _presort(values)
    xs = np.empty((p, n))
    ws = np.empty((p, n))
    for j in range(p):
        xs[j] = xf[j][srt[j]]
        ws[j] = weights[srt[j]]

    max_nodes = (1 << (max_depth + 1)) - 1
    feat = np.empty(max_nodes, np.int32)
    thr = np.empty(max_nodes)
    val = np.empty(max_nodes)
    left = np.empty(max_nodes, np.int32)
    right = np.empty(max_nodes, np.int32)
    n_slots = _grow_tree(xs, ws, srt, xf, targets, weights, weights * targets,
                         np.ones(n, np.uint8), np.empty(n, np.int16),
                         max_depth, float(min_node_size), feat, thr, val,
                         left, right, np.zeros(n), np.zeros(n, np.int32))
    return RegressionTree(feat[:n_slots].copy(), thr[:n_slots].copy(),
                          val[:n_slots].copy(), left[:n_slots].copy(),
                          right[:n_slots].copy())


@dataclass(frozen=True)
class BoostedScore:
    """Fitted ensemble for the balancing score b(x) on the logit scale.

    Evaluation is exactly initial + shrinkage * sum over trees, accumulated
    in training order.
    """

    initial: float
    shrinkage: float
    weighted: bool
    columns: tuple
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    left: np.ndarray
    right: np.ndarray
    offsets: np.ndarray

    @property
    def n_trees(self):
        return int(self.offsets.shape[0] - 1)

    @property
    def trees(self):
        return [self.tree(t) for t in range(self.n_trees)]

    def tree(self, t):
        lo, hi = int(self.offsets[t]), int(self.offsets[t + 1])
        return RegressionTree(self.feature[lo:hi], self.threshold[lo:hi],
                              self.value[lo:hi], self.left[lo:hi],
                              self.right[lo:hi])

    def _check_schema(self, cov):
        if hasattr(cov, "column_names") and cov.column_names != self.columns:
            raise DataError(
                f"covariate schema {cov.column_names} does not match the "
                f"training schema {self.columns}")

    def evaluate(self, cov):
        """Score rows of a covariate matrix (schema must match training)."""
        self._check_schema(cov)
        values = cov.values if hasattr(cov, "values") else np.asarray(cov, float)
        if values.ndim == 1:
            values = values[None, :]
        if values.shape[1] != len(self.columns):
            raise DataError(
                f"expected {len(self.columns)} covariate columns, "
                f"got {values.shape[1]}")
        xf = _feature_major(values)
        return _predict_scores(xf, self.initial, self.shrinkage, self.feature,
                               self.threshold, self.value, self.left,
                               self.right, self.offsets)

    def to_json(self):
        """Versioned JSON document with every node record, for audit."""
        doc = {
            "schema_version": SCHEMA_VERSION,
            "initial": self.initial,
            "shrinkage": self.shrinkage,
            "weighted": self.weighted,
            "columns": list(self.columns),
            "trees": [
                {
                    "feature": self.tree(t).feature.tolist(),
                    "threshold": self.tree(t).threshold.tolist(),
                    "value": self.tree(t).value.tolist(),
                    "left": self.tree(t).left.tolist(),
                    "right": self.tree(t).right.tolist(),
                }
                for t in range(self.n_trees)
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DataError(
                f"unsupported score schema_version {doc.get('schema_version')}")
        feats, thrs, vals, lefts, rights = [], [], [], [], []
        offsets = [0]
        for tree in doc["trees"]:
            feats.extend(tree["feature"])
            thrs.extend(tree["threshold"])
            vals.extend(tree["value"])
            lefts.extend(tree["left"])
            rights.extend(tree["right"])
            offsets.append(len(feats))
        return cls(
            initial=float(doc["initial"]),
            shrinkage=float(doc["shrinkage"]),
            weighted=bool(doc["weighted"]),
            columns=tuple(doc["columns"]),
            feature=np.asarray(feats, np.int32),
            threshold=np.asarray(thrs, np.float64),
            value=np.asarray(vals, np.float64),
            left=np.asarray(lefts, np.int32),
            right=np.asarray(rights, np.int32),
            offsets=np.asarray(offsets, np.int64),
        )


def _bag_masks(params, n, rng_stream):
    if params.bag_fraction >= 1.0:
        return np.ones((1, n), np.uint8), False
    if rng_stream is None:
        raise DataError("bag_fraction < 1 requires an rng stream")
    k = max(1, int(np.ceil(params.bag_fraction * n)))
    masks = np.zeros((params.n_trees, n), np.uint8)
    for t in range(params.n_trees):
        masks[t, rng_stream.permutation(n)[:k]] = 1
    return masks, True


def fit_gbm_with_scores(data, params, rng_stream=None, snapshot_trees=()):
    """Fit the boosted score and return per-row training-score snapshots.

    ``snapshot_trees`` lists tree counts (each <= params.n_trees) at which
    the per-row scores are captured; the final scores are always returned.
    Fit weights come from the combined sample, so the same routine covers
    the unweighted loss (unit weights) and the survey-weighted loss.
    """
    r = data.membership
    w = data.fit_weights
    n_c_w = float(np.sum(w[r == 1.0]))
    n_s_w = float(np.sum(w[r == 0.0]))
    if n_c_w == 0.0 or n_s_w == 0.0:
        raise DataError("combined sample must contain rows from both samples")
    b0 = float(np.log(n_c_w / n_s_w))

    snap_ts = np.asarray(sorted(set(int(t) for t in snapshot_trees)), np.int64)
    if snap_ts.size and (snap_ts[0] < 0 or snap_ts[-1] > params.n_trees):
        raise DataError("snapshot tree counts must lie in [0, n_trees]")

    values = data.covariates.values
    xf = _feature_major(values)
    srt = _presort(values)
    masks, use_bag = _bag_masks(params, data.n_rows, rng_stream)

    feat, thr, val, left, right, offsets, scores, snaps = _gbm_fit(
        xf, srt, r, w, b0, float(params.shrinkage), int(params.n_trees),
        int(params.max_depth), float(params.min_node_size), snap_ts, masks,
        use_bag)

    score = BoostedScore(
        initial=b0, shrinkage=float(params.shrinkage),
        weighted=bool(not np.all(w == 1.0)),
        columns=data.covariates.column_names,
        feature=feat, threshold=thr, value=val, left=left, right=right,
        offsets=offsets)
    snapshots = {int(t): snaps[i] for i, t in enumerate(snap_ts)}
    return score, scores, snapshots


def fit_gbm(data, params, rng_stream=None):
    """Fit the gradient-boosted balancing score on a combined sample."""
    score, _, _ = fit_gbm_with_scores(data, params, rng_stream)
    return score


def evaluate_score(score, cov):
    """Evaluate a fitted score on covariate rows (exact training arithmetic)."""
    return score.evaluate(cov)


def log_loss(score, data):
    """Negated membership log-likelihood of a score on a combined sample.

    Smaller is better; finite for any finite scores via log1p(exp).
    """
    b = score.evaluate(data.covariates)
    r = data.membership
    w = data.fit_weights
    return float(np.sum(w * (np.logaddexp(0.0, b) - r * b)))
