"""Weighted logistic regression via IRLS, for both propensity steps.

Step 1 models membership in the nonprobability sample within the combined
sample; Step 2 models membership in the survey sample against the
population, approximated by stacking each survey unit once with label 1
(the observed sample) and once with label 0 carrying its design weight
(standing in for the population).
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import CovariateMatrix, expand_features
from .exceptions import DataError, NumericalError

MAX_ITER = 100
COEF_TOL = 1e-8
RIDGE = 1e-8
_P_EPS = 1e-10


@dataclass(frozen=True)
class LogisticFit:
    """Coefficients over expanded columns plus convergence diagnostics."""

    coefficients: np.ndarray
    columns: tuple
    converged: bool
    iterations: int
    final_gradient_norm: float
    expansion: object = None

    def linear_predictor(self, cov):
        values = cov.values if hasattr(cov, "values") else np.asarray(cov, float)
        if values.shape[1] != self.coefficients.shape[0]:
            raise DataError(
                f"expected {self.coefficients.shape[0]} columns, "
                f"got {values.shape[1]}")
        return values @ self.coefficients


def _check_rank(xs, w, columns):
    """QR-based rank check on the weight-supported rows; names the first
    column that is linearly dependent on its predecessors."""
    a = xs * np.sqrt(w)[:, None]
    r = np.linalg.qr(a, mode="r")
    diag = np.abs(np.diag(r))
    tol = max(a.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    bad = np.nonzero(diag <= max(tol, 1e-10))[0]
    if bad.size:
        raise NumericalError(
            f"design matrix is rank deficient: column {columns[bad[0]]!r} "
            "is collinear with earlier columns")


def _neg_loglik(eta, y, w):
    return float(np.sum(w * (np.logaddexp(0.0, eta) - y * eta)))


def _irls_step(xs, y, w, beta, eta, nll, ridge_rel):
    """One damped IRLS/Newton step; returns (beta, eta, nll, delta)."""
    p = expit(eta)
    pc = np.clip(p, _P_EPS, 1.0 - _P_EPS)
    irls_w = w * pc * (1.0 - pc)
    z = eta + (y - p) / (pc * (1.0 - pc))
    a = xs.T @ (xs * irls_w[:, None])
    if ridge_rel:
        a[np.diag_indices_from(a)] += ridge_rel * np.mean(np.diag(a))
    rhs = xs.T @ (irls_w * z)
    new_beta = np.linalg.solve(a, rhs)

    step = new_beta - beta
    new_eta = xs @ new_beta
    new_nll = _neg_loglik(new_eta, y, w)
    halvings = 0
    while new_nll > nll + 1e-12 and halvings < 30:
        step *= 0.5
        new_beta = beta + step
        new_eta = xs @ new_beta
        new_nll = _neg_loglik(new_eta, y, w)
        halvings += 1
    return new_beta, new_eta, new_nll, float(np.max(np.abs(step)))


def fit_weighted_logistic(x, y, case_weights, max_iter=MAX_ITER,
                          tol=COEF_TOL, expansion=None):
    """Maximize the case-weighted Bernoulli log-likelihood with a logit link.

    IRLS with step-halving; columns are scaled internally for conditioning.
    A relative ridge (1e-8 of the mean curvature) stabilizes the updates so
    quasi-separated bootstrap replicates still return finite coefficients;
    once the ridged iteration settles, unridged Newton polishing removes
    the ridge bias whenever the likelihood surface supports it.
    Convergence is declared when the max absolute coefficient change drops
    below ``tol``; otherwise the fit is returned with ``converged=False``.
    """
    is_matrix = isinstance(x, CovariateMatrix)
    values = x.values if is_matrix else np.asarray(x, dtype=np.float64)
    columns = x.column_names if is_matrix else tuple(
        f"x{j}" for j in range(values.shape[1]))
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(case_weights, dtype=np.float64)
    n, k = values.shape
    if y.shape != (n,) or w.shape != (n,):
        raise DataError("y and case_weights must match the row count")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError("labels must be 0 or 1")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise DataError("case weights must be positive and finite")

    scale = np.sqrt(np.mean(values ** 2, axis=0))
    zero = scale == 0.0
    if np.any(zero):
        raise NumericalError(
            f"column {columns[int(np.nonzero(zero)[0][0])]!r} is identically zero")
    xs = values / scale
    _check_rank(xs, w, columns)

    beta = np.zeros(k)
    eta = xs @ beta
    nll = _neg_loglik(eta, y, w)
    converged = False
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        try:
            beta, eta, nll, delta = _irls_step(xs, y, w, beta, eta, nll,
                                               RIDGE)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"IRLS normal equations failed: {exc}") from None
        if delta < tol:
            converged = True
            break

    # unridged polish: exact score equations for regular problems; any
    # instability (singular curvature, runaway coefficients) reverts
    if converged:
        polish = (beta, eta, nll)
        for _ in range(20):
            try:
                nb, ne, nn, delta = _irls_step(xs, y, w, *polish, 0.0)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(nb)) or delta > 1e-2:
                # a bias-removal step is tiny; big steps mean the unridged
                # optimum runs away (separation), so keep the ridged fit
                break
            polish = (nb, ne, nn)
            if delta < 1e-12:
                break
        beta, eta, nll = polish

    coef = beta / scale
    grad = values.T @ (w * (y - expit(values @ coef)))
    return LogisticFit(coefficients=coef, columns=columns,
                       converged=converged, iterations=iterations,
                       final_gradient_norm=float(np.max(np.abs(grad))),
                       expansion=expansion)


def fit_step1_logistic(data, spec):
    """Model (step 1): membership in s_c within the combined sample.

    ``data`` is a stacked CombinedSample; its fit weights (unit weights for
    the unweighted stack, design weights for the weighted one) are used as
    the likelihood case weights.
    """
    x = expand_features(data.covariates, spec)
    return fit_weighted_logistic(x, data.membership, data.fit_weights,
                                 expansion=spec)


def fit_step2_logistic(ss, spec, membership_weights=None):
    """Model (step 2): survey sample versus the weighted-survey population.

    Each survey unit enters twice: once with label 1 and weight 1 (or the
    supplied replicate multiplicity) and once with label 0 and its design
    weight, approximating the combined set of the sample and the finite
    population.  Returns the fit and the fitted per-unit probabilities.
    """
    x = expand_features(ss.covariates, spec)
    n = ss.n_rows
    ones = np.ones(n) if membership_weights is None else np.asarray(
        membership_weights, dtype=np.float64)
    stacked = CovariateMatrix(np.vstack([x.values, x.values]), x.column_names)
    labels = np.concatenate([np.ones(n), np.zeros(n)])
    weights = np.concatenate([ones, ss.weights])
    fit = fit_weighted_logistic(stacked, labels, weights, expansion=spec)
    q_hat = expit(x.values @ fit.coefficients)
    return fit, q_hat


def step2_weight_diagnostic(q_hat, ss):
    """Mean absolute relative deviation of the implied design weights.

    The fitted survey-membership odds imply weights (1 - q) / q; agreement
    with the known design weights is a step-2 goodness-of-fit check (not a
    gate).
    """
    d_hat = (1.0 - q_hat) / np.clip(q_hat, _P_EPS, None)
    return float(np.mean(np.abs(d_hat - ss.weights) / ss.weights))
