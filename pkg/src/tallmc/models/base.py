"""The contract a statistical model fulfills for subsampling MCMC.

A model is a finite population of log-likelihood contributions: the sum of
``contributions(theta, k)`` over all k is the full-data log-likelihood.
Optional capabilities (data-space derivatives, a single-signed
decomposition, cheap coarse evaluations, an always-evaluated index set)
unlock the corresponding estimator features; their absence degrades
gracefully.
"""

from __future__ import annotations

import numpy as np

from ..errors import UnsupportedOperationError


class Model:
    """Base class; subclasses fill in the population and the densities."""

    #: cost bookkeeping: "evaluations" counts density evaluations,
    #: "work" counts deterministic work units proportional to run time.
    cost_unit = "evaluations"
    #: cost of one exact contribution evaluation, in cost units.
    eval_cost = 1.0
    #: cost of one cheap (surrogate / coarse) evaluation, when available.
    cheap_eval_cost = None

    param_names: tuple = ()

    @property
    def n(self):
        raise NotImplementedError

    @property
    def dim(self):
        return len(self.param_names)

    def contributions(self, theta, indices):
        raise NotImplementedError

    def contribution(self, theta, k):
        return float(self.contributions(theta, np.atleast_1d(k))[0])

    def full_loglik(self, theta):
        return float(np.sum(self.contributions(theta, np.arange(self.n))))

    def log_prior(self, theta):
        raise NotImplementedError

    def log_posterior(self, theta):
        lp = self.log_prior(theta)
        if not np.isfinite(lp):
            return -np.inf
        return lp + self.full_loglik(theta)

    def prior_bounds(self):
        """Box support of the prior as (low, high) arrays, or None."""
        return None

    def init_theta(self):
        return np.zeros(self.dim)

    @property
    def always_evaluate(self):
        """Indices never subsampled (their sum is computed exactly)."""
        return np.empty(0, dtype=np.int64)

    # --- optional capabilities -------------------------------------------

    def proxy_points(self):
        """Raw data-space points z_k the Taylor machinery expands in."""
        raise UnsupportedOperationError(
            f"{type(self).__name__} has no data-space representation")

    def cluster_groups(self):
        """Category labels clustering must not straddle, or None."""
        return None

    def point_loglik(self, theta, points):
        raise UnsupportedOperationError(
            f"{type(self).__name__} cannot evaluate off-sample points")

    def point_derivatives(self, theta, points):
        raise UnsupportedOperationError(
            f"{type(self).__name__} has no data-space derivatives")

    def cheap_contributions(self, theta, indices):
        raise UnsupportedOperationError(
            f"{type(self).__name__} has no cheap surrogate evaluations")
