"""Discrete-time Weibull survival with a subject-level random effect.

The per-period event probability is h = exp(-lambda (t_j^rho - t_{j-1}^rho))
with log(lambda) linear in the covariates plus a N(0, tau^2) random
intercept and log(rho) linear in the covariates.  A subject's contribution
is its random effect integrated out with the trapezoidal rule; subjects,
not periods, form the subsampling population.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidConfigError, InvalidPanelError
from .base import Model

_LOG2 = float(np.log(2.0))


def _log1mexp(v):
    """log(1 - exp(-v)) for v > 0, stable at both ends."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    small = v <= _LOG2
    out[small] = np.log(-np.expm1(-v[small]))
    out[~small] = np.log1p(-np.exp(-v[~small]))
    return out


def _logsumexp(a, axis=None):
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else float(out)


class WeibullSurvivalModel(Model):
    """Subject panels; contribution(theta, i) is subject i's marginal log-likelihood.

    theta = (beta_lambda..., beta_rho..., log tau^2) with a N(0, 10 I)
    prior.  The random-effect integral runs over gamma in [-W tau, W tau]
    with spacing step_h * tau, so the node count (hence the work per
    evaluation) is fixed by (W, step_h) alone.  Work units are measured
    relative to one fine-grid contribution evaluation, which keeps the cost
    tally deterministic while staying proportional to run time.
    """

    cost_unit = "work"

    def __init__(self, data, step_h=0.01, coarse_h=0.5, halfwidth=6.0,
                 prior_variance=10.0, max_block_rows=200_000):
        if step_h <= 0.0 or coarse_h <= 0.0:
            raise InvalidConfigError("integration steps must be positive")
        if halfwidth <= 0.0:
            raise InvalidConfigError("integration halfwidth must be positive")
        self.step_h = float(step_h)
        self.coarse_h = float(coarse_h)
        self.halfwidth = float(halfwidth)
        self.prior_variance = float(prior_variance)
        self.max_block_rows = int(max_block_rows)

        order = np.lexsort((data.period, data.subject))
        self.subject = np.asarray(data.subject)[order]
        self.t_start = np.asarray(data.t_start, dtype=float)[order]
        self.t_end = np.asarray(data.t_end, dtype=float)[order]
        self.y = np.asarray(data.y, dtype=float)[order]
        self.x = np.atleast_2d(np.asarray(data.x, dtype=float))[order]

        self.subject_ids, starts = np.unique(self.subject, return_index=True)
        self.offsets = np.append(starts, self.subject.size)
        for i in range(self.subject_ids.size):
            lo, hi = self.offsets[i], self.offsets[i + 1]
            t = np.concatenate([[self.t_start[lo]], self.t_end[lo:hi]])
            if np.any(np.diff(t) <= 0.0) or self.t_start[lo] < 0.0:
                raise InvalidPanelError(
                    f"subject {self.subject_ids[i]}: period endpoints must increase")
            if np.any(self.t_start[lo + 1:hi] != self.t_end[lo:hi - 1]):
                raise InvalidPanelError(
                    f"subject {self.subject_ids[i]}: periods must tile the timeline")

        p = self.x.shape[1]
        self.n_covariates = p
        self.param_names = tuple(
            [f"beta_lambda{j}" for j in range(p)]
            + [f"beta_rho{j}" for j in range(p)]
            + ["log_tau2"]
        )
        self.fine_nodes = self._node_count(self.step_h)
        self.coarse_nodes = self._node_count(self.coarse_h)
        self.cheap_eval_cost = self.coarse_nodes / self.fine_nodes

    def _node_count(self, h):
        return int(round(2.0 * self.halfwidth / h)) + 1

    @property
    def n(self):
        return int(self.subject_ids.size)

    def _split_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        p = self.n_covariates
        return theta[:p], theta[p:2 * p], float(theta[-1])

    def contributions(self, theta, indices):
        return self.contributions_with_step(theta, indices, self.step_h)

    def cheap_contributions(self, theta, indices):
        return self.contributions_with_step(theta, indices, self.coarse_h)

    def contributions_with_step(self, theta, indices, h):
        """Marginal log-likelihoods with a caller-chosen trapezoid step."""
        beta_l, beta_r, log_tau2 = self._split_theta(theta)
        tau = np.exp(0.5 * log_tau2)
        nodes = self._node_count(h)
        # integrate over the standardized effect u = gamma / tau
        u = np.linspace(-self.halfwidth, self.halfwidth, nodes)
        log_w = np.log(np.full(nodes, h))
        log_w[0] -= _LOG2
        log_w[-1] -= _LOG2
        log_prior_u = -0.5 * u**2 - 0.5 * np.log(2.0 * np.pi)

        idx = np.asarray(indices)
        out = np.empty(idx.size)
        row_budget = max(1, self.max_block_rows // nodes)
        start = 0
        while start < idx.size:
            end = start
            rows = 0
            while end < idx.size:
                r = int(self.offsets[idx[end] + 1] - self.offsets[idx[end]])
                if end > start and rows + r > row_budget:
                    break
                rows += r
                end += 1
            out[start:end] = self._block(
                idx[start:end], beta_l, beta_r, tau, u, log_w, log_prior_u)
            start = end
        return out

    def _block(self, block, beta_l, beta_r, tau, u, log_w, log_prior_u):
        lengths = self.offsets[block + 1] - self.offsets[block]
        seg_starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        rows = (np.arange(int(lengths.sum()))
                + np.repeat(self.offsets[block] - seg_starts, lengths))
        x = self.x[rows]
        a = x @ beta_l
        rho = np.exp(x @ beta_r)
        dt = self.t_end[rows] ** rho - self.t_start[rows] ** rho
        y = self.y[rows]

        # cumulative hazard per (row, node); exponent clipped against overflow
        log_v = a[:, None] + tau * u[None, :] + np.log(dt)[:, None]
        v = np.exp(np.minimum(log_v, 700.0))
        period_ll = np.where(y[:, None] == 1.0, -v, _log1mexp(v))
        subject_ll = np.add.reduceat(period_ll, seg_starts, axis=0)
        integrand = subject_ll + (log_prior_u + log_w)[None, :]
        return _logsumexp(integrand, axis=1)

    def sign_split(self, theta, indices):
        # contributions are log-probabilities, already single-signed
        return self.contributions(theta, indices), 0.0

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        v = self.prior_variance
        return float(-0.5 * theta @ theta / v
                     - 0.5 * theta.size * np.log(2.0 * np.pi * v))

    def init_theta(self):
        return np.zeros(self.dim)
