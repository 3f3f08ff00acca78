"""Normal location model: the quadratic-in-data reference case.

Its log density is exactly quadratic in the observation, so the cluster
Taylor proxies reproduce every contribution exactly, and the
normal-prior/normal-likelihood conjugacy gives a closed-form posterior for
sampler smoke tests.
"""

from __future__ import annotations

import numpy as np

from ..variates import glm_data_gradient_hessian, normal_glm
from .base import Model


class NormalLocationModel(Model):
    """y_k ~ N(mu, sigma2) with known sigma2 and a N(m0, v0) prior on mu."""

    param_names = ("mu",)

    def __init__(self, y, sigma2=1.0, prior_mean=0.0, prior_variance=10.0):
        self.y = np.asarray(y, dtype=float)
        self.sigma2 = float(sigma2)
        self.prior_mean = float(prior_mean)
        self.prior_variance = float(prior_variance)
        self._norm_const = -0.5 * np.log(2.0 * np.pi * self.sigma2)
        self._glm = normal_glm(self.sigma2)

    @property
    def n(self):
        return int(self.y.size)

    def contributions(self, theta, indices):
        mu = float(np.asarray(theta).reshape(-1)[0])
        r = self.y[np.asarray(indices)] - mu
        return -0.5 * r**2 / self.sigma2 + self._norm_const

    def sign_split(self, theta, indices):
        mu = float(np.asarray(theta).reshape(-1)[0])
        r = self.y[np.asarray(indices)] - mu
        return -0.5 * r**2 / self.sigma2, self._norm_const

    def log_prior(self, theta):
        mu = float(np.asarray(theta).reshape(-1)[0])
        v = self.prior_variance
        return float(-0.5 * (mu - self.prior_mean) ** 2 / v
                     - 0.5 * np.log(2.0 * np.pi * v))

    def init_theta(self):
        return np.array([self.prior_mean])

    def posterior_moments(self):
        """Closed-form conjugate posterior mean and variance of mu."""
        precision = self.n / self.sigma2 + 1.0 / self.prior_variance
        mean = (self.y.sum() / self.sigma2
                + self.prior_mean / self.prior_variance) / precision
        return mean, 1.0 / precision

    # --- data-space machinery --------------------------------------------

    def proxy_points(self):
        return self.y[:, None]

    def point_loglik(self, theta, points):
        mu = float(np.asarray(theta).reshape(-1)[0])
        r = np.atleast_2d(points)[:, 0] - mu
        return -0.5 * r**2 / self.sigma2 + self._norm_const

    def point_derivatives(self, theta, points):
        mu = float(np.asarray(theta).reshape(-1)[0])
        pts = np.atleast_2d(points)
        r = pts[:, 0] - mu
        grads = (-r / self.sigma2)[:, None]
        hessians = np.full((pts.shape[0], 1, 1), -1.0 / self.sigma2)
        return grads, hessians


class NormalGLMView:
    """The same density in exponential-family form, for derivative checks."""

    def __init__(self, sigma2=1.0):
        self.spec = normal_glm(sigma2)

    def gradient_hessian(self, z, beta):
        return glm_data_gradient_hessian(z, beta, self.spec)
