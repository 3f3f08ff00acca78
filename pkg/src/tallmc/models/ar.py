"""AR(1) with Student-t errors, in regression (M1) or steady-state (M2) form."""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from ..errors import InvalidConfigError
from .base import Model


def t_log_density(residual, nu):
    """Student-t log density including the normalizing constant."""
    c = gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0) - 0.5 * np.log(nu * np.pi)
    return c - 0.5 * (nu + 1.0) * np.log1p(residual**2 / nu)


class AR1Model(Model):
    """First-order autoregression whose sample elements are (y_t, y_{t-1}).

    The population tiles t = 2..n, so a series of length n yields n-1
    elements.  M1 parameterizes the regression (intercept, slope); M2 the
    steady state (stationary mean, persistence).  Priors are uniform:
    (-5, 5) for the location parameter and (0, 1) for the persistence.
    """

    def __init__(self, series, parameterization="m1", nu=5.0):
        parameterization = parameterization.lower()
        if parameterization not in ("m1", "m2"):
            raise InvalidConfigError(f"unknown AR parameterization {parameterization!r}")
        self.series = np.asarray(series, dtype=float)
        if self.series.size < 2:
            raise InvalidConfigError("AR model needs a series of length >= 2")
        self.parameterization = parameterization
        self.nu = float(nu)
        self.current = self.series[1:]
        self.lagged = self.series[:-1]
        self.param_names = (("beta0", "beta1") if parameterization == "m1"
                            else ("mu", "rho"))
        self._t_const = float(gammaln((self.nu + 1.0) / 2.0)
                              - gammaln(self.nu / 2.0)
                              - 0.5 * np.log(self.nu * np.pi))

    @property
    def n(self):
        return int(self.current.size)

    def _residual(self, theta, current, lagged):
        a, b = float(theta[0]), float(theta[1])
        if self.parameterization == "m1":
            return current - a - b * lagged
        return current - a - b * (lagged - a)

    def contributions(self, theta, indices):
        idx = np.asarray(indices)
        eps = self._residual(theta, self.current[idx], self.lagged[idx])
        return t_log_density(eps, self.nu)

    def sign_split(self, theta, indices):
        idx = np.asarray(indices)
        eps = self._residual(theta, self.current[idx], self.lagged[idx])
        shifted = -0.5 * (self.nu + 1.0) * np.log1p(eps**2 / self.nu)
        return shifted, self._t_const

    def log_prior(self, theta):
        a, b = float(theta[0]), float(theta[1])
        if -5.0 < a < 5.0 and 0.0 < b < 1.0:
            return -np.log(10.0)
        return -np.inf

    def prior_bounds(self):
        return np.array([-5.0, 0.0]), np.array([5.0, 1.0])

    def init_theta(self):
        return np.array([0.0, 0.5])

    # --- data-space machinery --------------------------------------------

    def proxy_points(self):
        return np.column_stack([self.current, self.lagged])

    def point_loglik(self, theta, points):
        points = np.atleast_2d(points)
        eps = self._residual(theta, points[:, 0], points[:, 1])
        return t_log_density(eps, self.nu)

    def point_derivatives(self, theta, points):
        points = np.atleast_2d(points)
        eps = self._residual(theta, points[:, 0], points[:, 1])
        nu = self.nu
        dl = -(nu + 1.0) * eps / (nu + eps**2)
        d2l = -(nu + 1.0) * (nu - eps**2) / (nu + eps**2) ** 2
        slope = float(theta[1])
        direction = np.array([1.0, -slope])
        grads = dl[:, None] * direction
        hessians = d2l[:, None, None] * np.outer(direction, direction)
        return grads, hessians

    # --- reparameterization ----------------------------------------------

    @staticmethod
    def m1_to_m2(theta):
        """(intercept, slope) -> (stationary mean, persistence)."""
        b0, b1 = theta
        return np.array([b0 / (1.0 - b1), b1])

    @staticmethod
    def m2_to_m1(theta):
        """(stationary mean, persistence) -> (intercept, slope)."""
        mu, rho = theta
        return np.array([mu * (1.0 - rho), rho])
