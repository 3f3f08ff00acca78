"""Logistic regression on iid rows, with sparse-response subsampling."""

from __future__ import annotations

import numpy as np

from ..variates import bernoulli_logit_glm, glm_data_gradient_hessian
from .base import Model


class LogisticModel(Model):
    """Bernoulli response y_k with success probability sigmoid(x_k' beta).

    Contributions use the log1p-exp form, so they stay finite for any
    realistic linear predictor.  When ``subsample_ones=False`` (the default)
    the responders form the always-evaluated set and only the y=0 rows are
    subsampled, which pays off when responses are sparse.
    """

    def __init__(self, y, x, prior_variance=10.0, subsample_ones=False):
        self.y = np.asarray(y, dtype=float)
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.y.shape[0] != self.x.shape[0]:
            raise ValueError("response and covariates disagree on n")
        self.prior_variance = float(prior_variance)
        self.subsample_ones = bool(subsample_ones)
        self.param_names = tuple(f"beta{j}" for j in range(self.x.shape[1]))
        self._glm = bernoulli_logit_glm()

    @property
    def n(self):
        return int(self.y.shape[0])

    @property
    def always_evaluate(self):
        if self.subsample_ones:
            return np.empty(0, dtype=np.int64)
        return np.flatnonzero(self.y == 1.0)

    def contributions(self, theta, indices):
        idx = np.asarray(indices)
        s = self.x[idx] @ np.asarray(theta, dtype=float)
        y = self.y[idx]
        # y*log(sigma(s)) + (1-y)*log(1-sigma(s)) in overflow-safe form
        return -(y * np.logaddexp(0.0, -s) + (1.0 - y) * np.logaddexp(0.0, s))

    def sign_split(self, theta, indices):
        # log-probabilities are already single-signed (<= 0)
        return self.contributions(theta, indices), 0.0

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        v = self.prior_variance
        return float(-0.5 * theta @ theta / v
                     - 0.5 * theta.size * np.log(2.0 * np.pi * v))

    def init_theta(self):
        return np.zeros(self.dim)

    # --- data-space machinery --------------------------------------------

    def proxy_points(self):
        return np.column_stack([self.y, self.x])

    def cluster_groups(self):
        return self.y.astype(np.int64)

    def point_loglik(self, theta, points):
        points = np.atleast_2d(points)
        y = points[:, 0]
        s = points[:, 1:] @ np.asarray(theta, dtype=float)
        return -(y * np.logaddexp(0.0, -s) + (1.0 - y) * np.logaddexp(0.0, s))

    def point_derivatives(self, theta, points):
        # closed-form GLM derivatives, vectorized over points:
        # dl/dy = s, dl/dx = (y - p) b, H_yy = 0, H_yx = b, H_xx = -p(1-p) bb'
        points = np.atleast_2d(points)
        beta = np.asarray(theta, dtype=float)
        y = points[:, 0]
        x = points[:, 1:]
        s = x @ beta
        p = 1.0 / (1.0 + np.exp(-s))
        k = points.shape[1]
        grads = np.empty((points.shape[0], k))
        grads[:, 0] = s
        grads[:, 1:] = (y - p)[:, None] * beta
        hessians = np.zeros((points.shape[0], k, k))
        hessians[:, 0, 1:] = beta
        hessians[:, 1:, 0] = beta
        hessians[:, 1:, 1:] = (-p * (1.0 - p))[:, None, None] * np.outer(beta, beta)
        return grads, hessians
