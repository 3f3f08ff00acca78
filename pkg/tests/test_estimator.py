"""Estimator-level oracles: enumeration, variance identities, bias correction."""

import itertools
import math

import numpy as np
import pytest

from tallmc.errors import (
    InsufficientSampleError,
    InvalidDesignError,
    InvalidToleranceError,
    UnsupportedOperationError,
)
from tallmc.estimator import (
    ExactVariates,
    LogLikEstimate,
    ZeroVariates,
    adaptive_sample_size,
    bias_corrected_loglik,
    estimate_from_terms,
    estimate_loglik,
    estimate_variance,
    sign_split,
)
from tallmc.models import NormalLocationModel
from tallmc.sampling import Subsample


class ArrayModel:
    """Population of fixed contribution values, independent of theta."""

    eval_cost = 1.0

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    @property
    def n(self):
        return self.values.size

    def contributions(self, theta, indices):
        return self.values[np.asarray(indices)]


def fixed_subsample(indices, probabilities):
    indices = np.asarray(indices)
    return Subsample(kind="indices", indices=indices,
                     probabilities=np.asarray(probabilities, dtype=float),
                     expected_size=indices.size)


def enumerate_designs(values, m, p):
    """All n^m equally structured with-replacement index tuples with their
    probabilities; the independent oracle for unbiasedness checks."""
    n = len(values)
    for tup in itertools.product(range(n), repeat=m):
        weight = math.prod(p[k] for k in tup)
        yield np.asarray(tup), weight


# --------------------------------------------------------------------------
# estimate_loglik


def test_homogeneous_population_zero_variance():
    model = ArrayModel([3.7] * 5)
    sub = fixed_subsample([0, 2, 4], [0.2, 0.2, 0.2])
    est = estimate_loglik(model, None, sub)
    assert est.value == pytest.approx(5 * 3.7, abs=1e-12)
    assert est.variance == 0.0


def test_perfect_variates_exact_value_zero_variance():
    rng = np.random.default_rng(0)
    model = ArrayModel(rng.normal(size=20))
    sub = fixed_subsample([1, 5, 5, 9], [1 / 20] * 4)
    est = estimate_loglik(model, None, sub, variates=ExactVariates(model))
    assert est.value == pytest.approx(model.values.sum(), rel=1e-14)
    assert est.variance == 0.0


def test_enumeration_mean_matches_total_srs():
    values = [1.0, 2.0, 3.0]
    p = [1 / 3] * 3
    model = ArrayModel(values)
    total = 0.0
    weights = 0.0
    for tup, w in enumerate_designs(values, 2, p):
        sub = fixed_subsample(tup, [p[k] for k in tup])
        total += w * estimate_loglik(model, None, sub).value
        weights += w
    assert weights == pytest.approx(1.0, abs=1e-12)
    assert total == pytest.approx(6.0, abs=1e-12)


def test_invalid_probability_raises():
    model = ArrayModel([1.0, 2.0])
    sub = fixed_subsample([0, 1], [0.5, 0.0])
    with pytest.raises(InvalidDesignError):
        estimate_loglik(model, None, sub)


def test_single_draw_raises():
    model = ArrayModel([1.0, 2.0])
    sub = fixed_subsample([0], [0.5])
    with pytest.raises(InsufficientSampleError):
        estimate_loglik(model, None, sub)


def test_cost_is_m_plus_declared():
    model = ArrayModel(np.arange(6.0))
    sub = fixed_subsample([0, 1, 2], [1 / 6] * 3)
    est = estimate_loglik(model, None, sub, variates=ExactVariates(model))
    assert est.cost == 3 + 6
    est0 = estimate_loglik(model, None, sub, variates=ZeroVariates())
    assert est0.cost == 3


# --------------------------------------------------------------------------
# estimate_variance


def test_variance_identical_terms_zero():
    assert estimate_variance([5.0, 5.0, 5.0]) == 0.0


def test_variance_two_point_arithmetic():
    assert estimate_variance([0.0, 2.0]) == pytest.approx(1.0, abs=1e-15)


def test_variance_estimator_unbiased_by_enumeration():
    values = [1.0, 2.0, 3.0]
    p = [1 / 3] * 3
    m = 2
    mean_est = 0.0
    mean_var = 0.0
    for tup, w in enumerate_designs(values, m, p):
        zeta = np.array([values[k] / p[k] for k in tup])
        mean_est += w * zeta.mean()
        mean_var += w * estimate_variance(zeta, m)
    # exact estimator variance: Var(zeta)/m = 6/2 = 3
    assert mean_var == pytest.approx(3.0, abs=1e-12)
    assert mean_est == pytest.approx(6.0, abs=1e-12)


def test_variance_needs_two_terms():
    with pytest.raises(InsufficientSampleError):
        estimate_variance([1.0])


# --------------------------------------------------------------------------
# exhaustive unbiasedness over designs (module-scale slice of criterion 1)


@pytest.mark.parametrize("n,m", [(2, 2), (3, 2), (4, 3)])
def test_exhaustive_unbiasedness_small(n, m):
    rng = np.random.default_rng(n * 10 + m)
    values = rng.normal(size=n)
    model = ArrayModel(values)
    designs = [np.full(n, 1.0 / n), None, None]
    w1 = np.arange(1.0, n + 1.0)
    designs[1] = w1 / w1.sum()
    w2 = rng.random(n) + 0.1
    designs[2] = w2 / w2.sum()
    for p in designs:
        mean_val = 0.0
        second = 0.0
        mean_var = 0.0
        for tup, w in enumerate_designs(values, m, p):
            sub = fixed_subsample(tup, [p[k] for k in tup])
            est = estimate_loglik(model, None, sub)
            mean_val += w * est.value
            second += w * est.value**2
            mean_var += w * est.variance
        exact_total = values.sum()
        exact_variance = second - mean_val**2
        assert mean_val == pytest.approx(exact_total, abs=1e-12, rel=1e-12)
        assert mean_var == pytest.approx(exact_variance, abs=1e-12, rel=1e-10)


def test_better_variates_do_not_increase_variance():
    # shrinkage family: residual delta vs 2*delta is pointwise strictly better
    rng = np.random.default_rng(7)
    values = rng.normal(size=8)
    delta = rng.normal(size=8)
    delta[delta == 0.0] = 0.1
    q_good = values - delta
    q_bad = values - 2.0 * delta
    n = values.size
    p = np.full(n, 1.0 / n)
    # exact estimator variance under SRS with m draws is Var_k(residual/p)/m
    var_good = np.var(n * (values - q_good))
    var_bad = np.var(n * (values - q_bad))
    assert np.all(np.abs(values - q_good) < np.abs(values - q_bad))
    assert var_good <= var_bad


# --------------------------------------------------------------------------
# bias-corrected likelihood


def test_bias_correction_zero_variance_identity():
    est = LogLikEstimate(value=-123.4, variance=0.0, subsample_size=10)
    assert bias_corrected_loglik(est) == -123.4


def test_bias_correction_lognormal_mean_identity():
    # E[exp(lhat - s2/2)] = exp(l) when lhat ~ N(l, s2) with known variance
    rng = np.random.default_rng(11)
    l, s2 = 2.0, 0.5
    lhat = rng.normal(l, np.sqrt(s2), size=400_000)
    mean = np.exp(lhat - s2 / 2.0).mean()
    se = np.exp(lhat - s2 / 2.0).std() / np.sqrt(lhat.size)
    assert abs(mean - np.exp(l)) < 4 * se


def test_bias_correction_residual_error_matches_heuristic():
    # with a chi-square spread on the variance estimate, the residual
    # fractional error is exp(s2^2 / (4(m-1))) - 1
    rng = np.random.default_rng(13)
    s2, m, reps = 2.0, 41, 400_000
    sigma2_hat = s2 * rng.chisquare(m - 1, size=reps) / (m - 1)
    # E[exp(lhat - l)] = exp(s2/2) exactly, so average the remaining factor
    ratio = np.exp(0.5 * (s2 - sigma2_hat))
    err = ratio.mean() - 1.0
    se = ratio.std() / np.sqrt(reps)
    predicted = np.exp(s2**2 / (4 * (m - 1))) - 1.0
    assert abs(err - predicted) < 4 * se + 1e-4


# --------------------------------------------------------------------------
# adaptive sample size


def test_adaptive_size_ratio_one_keeps_m():
    est = LogLikEstimate(value=0.0, variance=1.5, subsample_size=100)
    assert adaptive_sample_size(est, 1.5) == 100


def test_adaptive_size_ratio_two_doubles_m():
    est = LogLikEstimate(value=0.0, variance=2.0, subsample_size=100)
    assert adaptive_sample_size(est, 1.0) == 200


def test_adaptive_size_matches_scaled_sum_form():
    # m * sigma2 / v_max equals the direct sum form 1/(v_max (m-1)) sum(...)^2
    rng = np.random.default_rng(3)
    zeta = rng.normal(size=37)
    m = zeta.size
    est = estimate_from_terms(zeta, np.zeros(m), np.ones(m))
    v_max = 0.01
    direct = np.sum((zeta - zeta.mean()) ** 2) / (v_max * (m - 1))
    assert adaptive_sample_size(est, v_max) == math.ceil(direct)


def test_adaptive_size_cap_and_errors():
    est = LogLikEstimate(value=0.0, variance=50.0, subsample_size=100)
    assert adaptive_sample_size(est, 1.0, n_cap=1000) == 1000
    with pytest.raises(InvalidToleranceError):
        adaptive_sample_size(est, 0.0)


# --------------------------------------------------------------------------
# sign split


def test_sign_split_normal_model_matches_quadratic_form():
    rng = np.random.default_rng(5)
    y = rng.normal(1.0, 2.0, size=50)
    model = NormalLocationModel(y, sigma2=4.0)
    theta = np.array([0.7])
    split = sign_split(model, theta, np.arange(model.n))
    assert split.shift == pytest.approx(-0.5 * np.log(2 * np.pi * 4.0))
    expected = -0.5 * (y - 0.7) ** 2 / 4.0
    np.testing.assert_allclose(split.shifted_contribution, expected, rtol=1e-14)
    assert np.all(split.shifted_contribution <= 0.0)


def test_sign_split_boundary_zero_is_valid():
    model = NormalLocationModel(np.array([0.7, 1.0]), sigma2=1.0)
    split = sign_split(model, np.array([0.7]), np.array([0]))
    assert split.shifted_contribution[0] == 0.0


def test_sign_split_sum_identity():
    rng = np.random.default_rng(6)
    y = rng.normal(size=200)
    model = NormalLocationModel(y, sigma2=1.3)
    theta = np.array([0.2])
    split = sign_split(model, theta, np.arange(model.n))
    recombined = np.sum(split.shifted_contribution + split.shift)
    assert recombined == pytest.approx(model.full_loglik(theta), rel=1e-12)


def test_sign_split_unsupported_model_raises():
    model = ArrayModel([1.0, 2.0])
    with pytest.raises(UnsupportedOperationError):
        sign_split(model, None, 0)
