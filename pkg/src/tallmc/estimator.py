"""Subsample-based log-likelihood estimation.

The central quantity is the unbiased estimator of the full-data
log-likelihood total built from ``m`` with-replacement draws,

    lhat = q + (1/m) * sum_i (l_{u_i} - q_{u_i}) / p_{u_i},

where ``q_k`` are control variates with known total ``q`` and ``p_k`` is the
probability of drawing observation ``k``.  Everything downstream (variance
estimate, bias correction, adaptive subsample sizing) works on the per-draw
terms ``zeta_i = (l_{u_i} - q_{u_i}) / p_{u_i}``.  All arithmetic stays in
log scale; the likelihood itself is never exponentiated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientSampleError,
    InvalidDesignError,
    InvalidToleranceError,
    UnsupportedOperationError,
)

__all__ = [
    "LogLikEstimate",
    "Term",
    "SignSplit",
    "ZeroVariates",
    "ExactVariates",
    "CheapVariates",
    "estimate_from_terms",
    "estimate_loglik",
    "estimate_variance",
    "bias_corrected_loglik",
    "adaptive_sample_size",
    "sign_split",
]


@dataclass(frozen=True)
class LogLikEstimate:
    """Estimated log-likelihood with its estimated variance.

    Attributes
    ----------
    value : float
        Estimated log-likelihood total (nats), control-variate total included.
    variance : float
        Unbiased estimate of the sampling variance of ``value`` (nats^2).
    subsample_size : int
        Number of with-replacement draws the estimate is based on.
    known_total : float
        The control-variate total folded into ``value``.
    cost : float
        Exact log-likelihood evaluations consumed (subsample evaluations plus
        whatever the variate provider declares for its total).
    """

    value: float
    variance: float
    subsample_size: int
    known_total: float = 0.0
    cost: float = 0.0

    def __post_init__(self):
        if self.variance < 0.0:
            raise InvalidDesignError("variance estimate must be nonnegative")
        if self.subsample_size < 2:
            raise InsufficientSampleError(
                f"variance requires at least 2 draws, got {self.subsample_size}"
            )


@dataclass(frozen=True)
class Term:
    """One sampled observation: contribution l_k, variate q_k, probability p_k."""

    index: int
    contribution: float
    variate: float
    probability: float


@dataclass(frozen=True)
class SignSplit:
    """Decomposition l_k = shifted_contribution + shift with single-signed parts."""

    shifted_contribution: np.ndarray | float
    shift: float


class ZeroVariates:
    """Trivial provider: q_k = 0, the plain inverse-probability estimator."""

    cost = 0.0

    def evaluate(self, theta):
        return self

    @property
    def total(self):
        return 0.0

    def at(self, indices):
        return np.zeros(np.shape(indices))


class ExactVariates:
    """Perfect control variates q_k = l_k(theta).

    Mainly a test device: the residuals vanish, so the estimator reproduces
    the full-data log-likelihood with zero variance.  The declared cost is
    the covered population size since every contribution is evaluated
    exactly.  ``subset`` restricts the covered population; indices passed to
    ``at`` are then positions within the subset.
    """

    def __init__(self, model, subset=None):
        self.model = model
        self.subset = (np.arange(model.n) if subset is None
                       else np.asarray(subset))

    def evaluate(self, theta):
        values = self.model.contributions(theta, self.subset)
        return _FrozenVariates(
            values, float(np.sum(values)),
            self.subset.size * self.model.eval_cost)


class CheapVariates:
    """Control variates from the model's cheap surrogate evaluations.

    Typical instance: a coarse numeric grid standing in for the accurate
    one, so the variate total costs a fraction of a full exact pass.
    """

    def __init__(self, model, subset=None):
        if model.cheap_eval_cost is None:
            raise InvalidDesignError(
                f"{type(model).__name__} declares no cheap evaluations")
        self.model = model
        self.subset = (np.arange(model.n) if subset is None
                       else np.asarray(subset))

    def evaluate(self, theta):
        values = self.model.cheap_contributions(theta, self.subset)
        return _FrozenVariates(
            values, float(np.sum(values)),
            self.subset.size * self.model.cheap_eval_cost)


class _FrozenVariates:
    """Variate values pinned at one theta."""

    def __init__(self, values, total, cost):
        self.values = np.asarray(values, dtype=float)
        self.total = float(total)
        self.cost = float(cost)

    def at(self, indices):
        return self.values[np.asarray(indices)]


def estimate_variance(zeta, m=None):
    """Unbiased variance of the mean of ``m`` iid terms.

    Returns ``(1/(m(m-1))) * sum_i (zeta_i - mean(zeta))^2``.  Centering at
    the sample mean reproduces the plain formula when the variate total is
    zero and keeps the estimator unbiased otherwise.
    """
    zeta = np.asarray(zeta, dtype=float)
    if m is None:
        m = zeta.size
    if m < 2 or zeta.size < 2:
        raise InsufficientSampleError(f"variance estimation needs m >= 2, got {m}")
    centered = zeta - zeta.mean()
    return float(np.dot(centered, centered) / (m * (m - 1)))


def estimate_from_terms(contributions, variate_values, probabilities,
                        known_total=0.0, extra_cost=0.0):
    """Build a :class:`LogLikEstimate` from aligned per-draw arrays.

    ``contributions``, ``variate_values`` and ``probabilities`` are the
    sampled l_k, q_k and p_k in draw order; ``known_total`` is the variate
    total q over the sampled population and ``extra_cost`` the provider's
    declared evaluation count for it.
    """
    l = np.asarray(contributions, dtype=float)
    qv = np.asarray(variate_values, dtype=float)
    p = np.asarray(probabilities, dtype=float)
    m = l.size
    if m < 2:
        raise InsufficientSampleError(f"estimator needs m >= 2 draws, got {m}")
    if np.any(p <= 0.0):
        raise InvalidDesignError("all sampled inclusion probabilities must be > 0")
    zeta = (l - qv) / p
    value = known_total + float(zeta.mean())
    variance = estimate_variance(zeta, m)
    return LogLikEstimate(
        value=value,
        variance=variance,
        subsample_size=m,
        known_total=float(known_total),
        cost=float(m) + float(extra_cost),
    )


def estimate_from_term_list(terms, known_total=0.0, extra_cost=0.0):
    """As :func:`estimate_from_terms`, from a list of :class:`Term`."""
    return estimate_from_terms(
        [t.contribution for t in terms],
        [t.variate for t in terms],
        [t.probability for t in terms],
        known_total=known_total,
        extra_cost=extra_cost,
    )


def estimate_loglik(model, theta, subsample, variates=None):
    """Estimate the full-data log-likelihood at ``theta`` from a subsample.

    Parameters
    ----------
    model : object
        Must supply vectorized ``contributions(theta, indices)``.
    subsample : Subsample
        With-replacement index draw carrying per-draw probabilities.
    variates : provider, optional
        Object whose ``evaluate(theta)`` returns values with ``total``,
        ``at(indices)`` and ``cost``.  Defaults to q_k = 0.
    """
    if variates is None:
        variates = ZeroVariates()
    values = variates.evaluate(theta)
    indices = np.asarray(subsample.indices)
    contributions = model.contributions(theta, indices)
    return estimate_from_terms(
        contributions,
        values.at(indices),
        subsample.probabilities,
        known_total=values.total,
        extra_cost=values.cost,
    )


def bias_corrected_loglik(est):
    """Log of the bias-corrected likelihood estimate: value - variance/2.

    Subtracting half the estimated variance removes the leading-order bias
    of exponentiating a noisy log-likelihood (exact for a normal estimator
    with known variance).  The result stays in log scale.
    """
    return est.value - 0.5 * est.variance


def adaptive_sample_size(est, v_max, n_cap=None):
    """Subsample size predicted to bring the variance down to ``v_max``.

    Returns ``m* = ceil(m * variance / v_max)``, floored at 2 so a variance
    estimate remains defined and capped at the population size when given.
    Callers re-draw at m* and repeat while the variance still exceeds v_max.
    """
    if v_max <= 0.0:
        raise InvalidToleranceError(f"v_max must be > 0, got {v_max}")
    m_star = math.ceil(est.subsample_size * est.variance / v_max)
    m_star = max(2, m_star)
    if n_cap is not None:
        m_star = min(m_star, int(n_cap))
    return m_star


def sign_split(model, theta, k):
    """Single-signed decomposition l_k = l*_k + d declared by the model.

    Raises :class:`UnsupportedOperationError` when the model does not
    declare a split (weight builders then fall back to |proxy| magnitudes).
    """
    fn = getattr(model, "sign_split", None)
    if fn is None:
        raise UnsupportedOperationError(
            f"{type(model).__name__} does not declare a sign split"
        )
    shifted, shift = fn(theta, np.asarray(k))
    return SignSplit(shifted_contribution=shifted, shift=float(shift))
