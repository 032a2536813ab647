import numpy as np
import pytest

from propweight.data import CovariateMatrix, NonprobSample, SurveySample


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_nonprob(values, outcome=None, names=None):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    names = names or tuple(f"x{j + 1}" for j in range(values.shape[1]))
    return NonprobSample(CovariateMatrix(values, names), outcome)


def make_survey(values, weights=None, names=None, stratum=None, psu=None):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    names = names or tuple(f"x{j + 1}" for j in range(values.shape[1]))
    weights = np.ones(values.shape[0]) if weights is None else weights
    return SurveySample(CovariateMatrix(values, names), weights, stratum, psu)


@pytest.fixture
def tiny_pair(rng):
    """Six-row nonprob + four-row survey pair with one covariate."""
    sc = make_nonprob(np.array([[0.5], [1.0], [1.5], [2.0], [2.5], [3.0]]),
                      outcome=np.array([0, 0, 1, 1, 1, 0.0]))
    ss = make_survey(np.array([[0.2], [0.8], [1.2], [2.8]]),
                     weights=np.array([2.0, 3.0, 4.0, 5.0]))
    return sc, ss
