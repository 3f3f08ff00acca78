"""Metropolis-Hastings on the augmented (theta, u) space.

The chain replaces the likelihood with the bias-corrected subsample
estimate.  Pseudo-marginal correctness hinges on one discipline: the
estimate cached at the retained state is reused, never recomputed, while
every proposal gets a fresh estimate at its own (theta, u).  Randomness is
partitioned into independent streams (theta proposals, subsample draws,
accept decisions) so correlated-subsample schemes and oracle comparisons
against an exact chain are well defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.special import gammaln

from .errors import (
    InvalidConfigError,
    InvalidToleranceError,
    ModeFindingError,
)
from .estimator import (
    adaptive_sample_size,
    estimate_from_terms,
)
from .sampling import (
    CorrelationParams,
    Subsample,
    draw_indicators,
    draw_pps,
    draw_srs,
    propose_correlated_indicators,
    propose_infrequent,
)

__all__ = [
    "EngineConfig",
    "Streams",
    "ChainState",
    "Trace",
    "PMChain",
    "run_chain",
    "find_mode_and_curvature",
    "rwm_propose",
    "IMHProposal",
    "BurninScaleAdapter",
    "choose_m_for_target_error",
    "acceptance_simplification_check",
]


@dataclass
class EngineConfig:
    """Everything a chain run needs beyond the model and the variates."""

    iterations: int
    burnin_fraction: float = 0.1
    proposal: str = "rwm"            # rwm | imh
    estimator: str = "exact"         # exact | de-srs | hh-pps
    m: int | None = None
    fraction: float | None = None
    omega: float = 1.0
    correlation: CorrelationParams | None = None
    v_max: float | None = None
    target_sigma2: float = 1.0
    target_acceptance: float | None = None
    seed: int = 0
    initial_scale: float | None = None
    imh_dof: float = 10.0
    max_adapt_rounds: int = 10
    m_floor: int | None = None
    adapt_batch: int = 50

    def validate(self):
        if self.iterations < 1:
            raise InvalidConfigError("iterations must be positive")
        if not 0.0 <= self.burnin_fraction < 1.0:
            raise InvalidConfigError("burnin_fraction must lie in [0, 1)")
        if self.proposal not in ("rwm", "imh"):
            raise InvalidConfigError(f"unknown proposal {self.proposal!r}")
        if self.estimator not in ("exact", "de-srs", "hh-pps"):
            raise InvalidConfigError(f"unknown estimator {self.estimator!r}")
        if self.proposal == "imh" and self.estimator != "de-srs":
            raise InvalidConfigError(
                "the independence proposal is only offered with the de-srs estimator")
        if self.estimator != "exact":
            if not 0.0 < self.omega <= 1.0:
                raise InvalidConfigError(f"omega must lie in (0, 1], got {self.omega}")
            if self.m is None and self.fraction is None:
                raise InvalidConfigError("subsampling needs m or fraction")
        if self.correlation is not None:
            if self.estimator != "de-srs":
                raise InvalidConfigError("correlated subsamples require de-srs")
            if self.v_max is not None:
                raise InvalidConfigError(
                    "correlated subsamples and adaptive sizing are not combined "
                    "in one run; set only one of correlation / v_max")
        if self.v_max is not None:
            if self.v_max <= 0.0:
                raise InvalidToleranceError("v_max must be positive")
            if self.estimator != "exact" and self.omega != 1.0:
                raise InvalidConfigError(
                    "adaptive sizing redraws the subsample every iteration; "
                    "use omega = 1 with v_max")
        return self

    def resolved_target_acceptance(self):
        if self.target_acceptance is not None:
            return self.target_acceptance
        return 0.35 if self.estimator == "exact" else 0.15


@dataclass
class Streams:
    """Independent generator streams derived from one master seed."""

    theta: np.random.Generator
    subsample: np.random.Generator
    accept: np.random.Generator
    setup: np.random.Generator

    @classmethod
    def from_seed(cls, seed):
        children = np.random.SeedSequence(seed).spawn(4)
        return cls(*(np.random.default_rng(s) for s in children))


@dataclass
class ChainState:
    """Retained point of the augmented chain with its cached estimate."""

    theta: np.ndarray
    subsample: Subsample | None
    log_phat: float
    log_prior: float
    sigma2: float = 0.0
    m: int = 0


# --------------------------------------------------------------------------
# proposals


def rwm_propose(theta_c, scale, chol_sigma, rng):
    """Gaussian random-walk step with covariance scale^2 * Sigma."""
    z = rng.standard_normal(theta_c.size)
    return theta_c + scale * (chol_sigma @ z)


class IMHProposal:
    """Multivariate-t independence proposal centered at the posterior mode."""

    def __init__(self, mode, sigma, dof=10.0):
        self.mode = np.asarray(mode, dtype=float)
        self.dof = float(dof)
        self.chol = cholesky(np.asarray(sigma, dtype=float), lower=True)
        self._logdet = float(np.sum(np.log(np.diag(self.chol))))

    def draw(self, rng):
        p = self.mode.size
        z = rng.standard_normal(p)
        w = rng.chisquare(self.dof) / self.dof
        return self.mode + (self.chol @ z) / math.sqrt(w)

    def log_density(self, theta):
        p = self.mode.size
        delta = np.asarray(theta, dtype=float) - self.mode
        white = solve_triangular(self.chol, delta, lower=True)
        quad = float(white @ white)
        nu = self.dof
        return float(
            gammaln((nu + p) / 2.0) - gammaln(nu / 2.0)
            - 0.5 * p * math.log(nu * math.pi) - self._logdet
            - 0.5 * (nu + p) * math.log1p(quad / nu)
        )


class BurninScaleAdapter:
    """Stochastic-approximation tuning of the random-walk scale.

    After each batch the log scale moves by t^(-0.6) times the excess of
    the batch acceptance rate over the target; frozen at burn-in end.
    """

    def __init__(self, initial_scale, target, batch_size=50):
        self.log_scale = math.log(initial_scale)
        self.target = target
        self.batch_size = batch_size
        self._accepts = 0
        self._count = 0
        self._batches = 0

    @property
    def scale(self):
        return math.exp(self.log_scale)

    def update(self, accepted):
        self._accepts += bool(accepted)
        self._count += 1
        if self._count >= self.batch_size:
            self._batches += 1
            rate = self._accepts / self._count
            self.log_scale += self._batches ** -0.6 * (rate - self.target)
            self._accepts = 0
            self._count = 0
            return True
        return False


# --------------------------------------------------------------------------
# one-time setup


def _central_gradient(fn, x, rel_step=1e-6):
    g = np.empty(x.size)
    for i in range(x.size):
        h = rel_step * (1.0 + abs(x[i]))
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return g


def _central_hessian(fn, x, rel_step=1e-4):
    p = x.size
    h = rel_step * (1.0 + np.abs(x))
    hess = np.empty((p, p))
    f0 = fn(x)
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        hess[i, i] = (fn(x + ei) - 2.0 * f0 + fn(x - ei)) / h[i] ** 2
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = h[j]
            hess[i, j] = hess[j, i] = (
                fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return hess


def find_mode_and_curvature(model, init_theta=None, max_iterations=500,
                            gradient_tol=1e-6):
    """Posterior mode and inverse negative Hessian, by quasi-Newton ascent.

    This one-time setup uses the full dataset.  The exit point must satisfy
    a scaled gradient tolerance; otherwise the best iterate is carried in
    the raised error.
    """
    x0 = np.asarray(model.init_theta() if init_theta is None else init_theta,
                    dtype=float)

    def negative_log_posterior(theta):
        lp = model.log_prior(theta)
        if not np.isfinite(lp):
            return 1e300
        return -(lp + model.full_loglik(theta))

    bounds = model.prior_bounds()
    if bounds is not None:
        low, high = bounds
        margin = 1e-8 * (high - low)
        box = list(zip(low + margin, high - margin))
        x0 = np.clip(x0, low + 2 * margin, high - 2 * margin)
        result = minimize(negative_log_posterior, x0, method="L-BFGS-B",
                          bounds=box,
                          options={"maxiter": max_iterations, "ftol": 1e-14,
                                   "gtol": 1e-10})
    else:
        result = minimize(negative_log_posterior, x0, method="BFGS",
                          options={"maxiter": max_iterations, "gtol": 1e-9})

    theta_star = np.asarray(result.x, dtype=float)
    f_star = float(negative_log_posterior(theta_star))
    grad = _central_gradient(negative_log_posterior, theta_star)
    scaled = float(np.max(np.abs(grad))) / max(1.0, abs(f_star))
    if scaled > gradient_tol:
        raise ModeFindingError(
            f"mode search stopped with scaled gradient {scaled:.3g} > {gradient_tol:g}",
            best_theta=theta_star, best_value=-f_star)

    hess = _central_hessian(negative_log_posterior, theta_star)
    hess = 0.5 * (hess + hess.T)
    sigma_star = np.linalg.inv(hess)
    sigma_star = 0.5 * (sigma_star + sigma_star.T)
    return theta_star, sigma_star


def choose_m_for_target_error(sigma2_target, fractional_error, n=None):
    """Subsample size keeping the likelihood's fractional error at the target.

    Inverts the log-normal error heuristic error = exp(s^2 / (4(m-1))) - 1
    for the given variance target s = sigma2_target, up to the +-1 draw
    convention; capped at the population size when given.
    """
    if fractional_error <= 0.0:
        raise InvalidToleranceError("fractional_error must be positive")
    if sigma2_target <= 0.0:
        m = 1
    else:
        m = math.ceil(sigma2_target**2 / (4.0 * math.log1p(fractional_error)))
        m = max(1, m)
    if n is not None:
        m = min(m, int(n))
    return m


def acceptance_simplification_check(log_phat_p, log_phat_c, log_prior_p,
                                    log_prior_c, log_pu_p, log_pu_c, omega,
                                    log_q_theta_fwd=0.0, log_q_theta_rev=0.0,
                                    u_equal=False):
    """Full mixture-proposal acceptance ratio next to its simplified form.

    The full ratio carries the subsample prior p(u) and proposal q(u'|u)
    factors of the joint random-walk proposal; for a refreshed subsample
    those factors cancel algebraically and the ratio collapses to the
    theta-and-estimate-only expression.  Returns (full, simplified); used
    by tests only.
    """
    log_simplified = (log_phat_p + log_prior_p + log_q_theta_rev) - (
        log_phat_c + log_prior_c + log_q_theta_fwd)
    if u_equal:
        # both u-proposal densities are (1 - omega); p(u) factors coincide
        log_u_fwd = math.log1p(-omega) if omega < 1.0 else -math.inf
        log_u_rev = log_u_fwd
        log_pu_p = log_pu_c
    else:
        log_u_fwd = math.log(omega) + log_pu_p
        log_u_rev = math.log(omega) + log_pu_c
    log_full = (log_phat_p + log_pu_p + log_prior_p + log_u_rev + log_q_theta_rev) - (
        log_phat_c + log_pu_c + log_prior_c + log_u_fwd + log_q_theta_fwd)
    return math.exp(log_full), math.exp(log_simplified)


# --------------------------------------------------------------------------
# likelihood-estimation kernels


class _ExactKernel:
    """Degenerate configuration: the ordinary full-data MH chain."""

    uses_subsample = False

    def __init__(self, model):
        self.model = model

    def initial_subsample(self, theta, streams):
        return None

    def propose_subsample(self, current, theta_p, streams, force_refresh):
        return None, True

    def evaluate(self, theta, subsample, streams):
        value = self.model.full_loglik(theta)
        cost = self.model.n * self.model.eval_cost
        record = {"m": self.model.n, "sigma2": 0.0, "sigma2_first": 0.0,
                  "adapt_rounds": 0, "adapt_limit": False}
        return value, 0.0, self.model.n, cost, record, None


class _SubsamplingKernel:
    """Shared plumbing for the subsample-estimator kernels."""

    uses_subsample = True

    def __init__(self, model, config, pool, variates):
        self.model = model
        self.config = config
        self.pool = (np.arange(model.n) if pool is None
                     else np.asarray(pool, dtype=np.int64))
        self.always = np.setdiff1d(np.arange(model.n), self.pool)
        self.variates = variates
        self.n_pool = int(self.pool.size)
        m = config.m
        if m is None:
            # the sampling fraction is quoted against the full population,
            # even when only part of it is eligible for subsampling
            m = max(2, int(round(config.fraction * model.n)))
        if config.m_floor is not None:
            m = max(m, config.m_floor)
        self.m_base = min(max(2, int(m)), self.n_pool)

    def _always_sum(self, theta):
        if self.always.size == 0:
            return 0.0, 0.0
        vals = self.model.contributions(theta, self.always)
        return float(np.sum(vals)), self.always.size * self.model.eval_cost

    def _estimate(self, theta, index_sample, values, first_cost):
        positions = index_sample.indices
        contributions = self.model.contributions(theta, self.pool[positions])
        est = estimate_from_terms(
            contributions,
            values.at(positions),
            index_sample.probabilities,
            known_total=values.total,
            extra_cost=values.cost if first_cost else 0.0,
        )
        cost = positions.size * self.model.eval_cost
        return est, cost

    def evaluate(self, theta, subsample, streams):
        always_value, cost = self._always_sum(theta)
        values = self.variates.evaluate(theta)
        cost += values.cost
        index_sample = subsample.as_index_sample(self.n_pool)
        est, eval_cost = self._estimate(theta, index_sample, values, True)
        cost += eval_cost
        sigma2_first = est.variance
        rounds = 0
        limit = False
        v_max = self.config.v_max
        if v_max is not None:
            while est.variance > v_max:
                if rounds >= self.config.max_adapt_rounds:
                    limit = True
                    break
                m_new = adaptive_sample_size(est, v_max, n_cap=self.n_pool)
                if self.config.m_floor is not None:
                    m_new = max(m_new, self.config.m_floor)
                m_new = min(m_new, self.n_pool)
                subsample = self._fresh(m_new, streams)
                index_sample = subsample.as_index_sample(self.n_pool)
                est, eval_cost = self._estimate(theta, index_sample, values, False)
                cost += eval_cost
                rounds += 1
        log_phat = always_value + est.value - 0.5 * est.variance
        record = {"m": est.subsample_size, "sigma2": est.variance,
                  "sigma2_first": sigma2_first, "adapt_rounds": rounds,
                  "adapt_limit": limit}
        return log_phat, est.variance, est.subsample_size, cost, record, subsample


class _DESRSKernel(_SubsamplingKernel):
    """Difference estimator under simple random sampling; u can persist."""

    def _fresh(self, m, streams):
        return draw_srs(self.n_pool, m, streams.subsample)

    def initial_subsample(self, theta, streams):
        if self.config.correlation is not None:
            return draw_indicators(self.n_pool, self.config.correlation.fraction,
                                   streams.subsample)
        return self._fresh(self.m_base, streams)

    def propose_subsample(self, current, theta_p, streams, force_refresh):
        corr = self.config.correlation
        if corr is not None:
            if force_refresh:
                return draw_indicators(self.n_pool, corr.fraction,
                                       streams.subsample), True
            return propose_correlated_indicators(current, corr,
                                                 streams.subsample), True
        omega = 1.0 if force_refresh else self.config.omega
        return propose_infrequent(current, omega,
                                  lambda: self._fresh(self.m_base, streams),
                                  streams.subsample)


class _HHPPSKernel(_SubsamplingKernel):
    """Inverse-probability estimator with weights rebuilt at every proposal."""

    def __init__(self, model, config, pool, variates, weight_fn, weight_cost):
        super().__init__(model, config, pool, variates)
        self.weight_fn = weight_fn
        self.weight_cost = float(weight_cost)
        self._weights = None

    def initial_subsample(self, theta, streams):
        self._weights = self.weight_fn(theta)
        return draw_pps(self._weights, self.m_base, streams.subsample)

    def propose_subsample(self, current, theta_p, streams, force_refresh):
        # weights depend on theta, so u is never reused across iterations
        self._weights = self.weight_fn(theta_p)
        return draw_pps(self._weights, self.m_base, streams.subsample), True

    def _fresh(self, m, streams):
        return draw_pps(self._weights, m, streams.subsample)

    def evaluate(self, theta, subsample, streams):
        out = super().evaluate(theta, subsample, streams)
        log_phat, var, m, cost, record, sub = out
        return log_phat, var, m, cost + self.weight_cost, record, sub


# --------------------------------------------------------------------------
# trace and chain


@dataclass
class Trace:
    """Per-iteration chain output plus run-level metadata."""

    param_names: tuple
    theta: np.ndarray
    accepted: np.ndarray
    m: np.ndarray
    sigma2: np.ndarray
    sigma2_first: np.ndarray
    cost: np.ndarray
    adapt_rounds: np.ndarray
    adapt_limit: np.ndarray
    refreshed: np.ndarray
    burnin: int
    seed: int
    population_size: int
    mode: np.ndarray | None = None
    sigma_star: np.ndarray | None = None
    final_scale: float | None = None
    setup_cost: float = 0.0
    current_recompute_count: int = 0
    completed: int = 0
    error: dict | None = None

    def draws(self):
        """Post burn-in parameter draws."""
        return self.theta[self.burnin:self.completed]

    @property
    def total_cost(self):
        return float(self.cost[self.completed - 1]) if self.completed else 0.0

    def sampling_cost(self):
        """Cost accumulated after burn-in."""
        if self.completed == 0:
            return 0.0
        base = float(self.cost[self.burnin - 1]) if self.burnin > 0 else 0.0
        return float(self.cost[self.completed - 1]) - base

    def acceptance_rate(self):
        kept = self.accepted[self.burnin:self.completed]
        return float(np.mean(kept)) if kept.size else 0.0

    def mean_sampling_fraction(self):
        m = self.m[self.burnin:self.completed]
        m = m[m > 0]
        return float(np.mean(m)) / self.population_size if m.size else 0.0


class PMChain:
    """Sequential pseudo-marginal chain over (theta, u)."""

    def __init__(self, model, config, variates=None, weight_fn=None,
                 weight_cost=0.0, pool=None, mode_info=None):
        config.validate()
        self.model = model
        self.config = config
        self.streams = Streams.from_seed(config.seed)

        if mode_info is None:
            self.mode, self.sigma_star = find_mode_and_curvature(model)
        else:
            self.mode, self.sigma_star = mode_info
        self.chol_sigma = cholesky(self.sigma_star, lower=True)

        if config.estimator == "exact":
            self.kernel = _ExactKernel(model)
        elif config.estimator == "de-srs":
            from .estimator import ZeroVariates

            self.kernel = _DESRSKernel(model, config, pool,
                                       variates or ZeroVariates())
        else:
            from .estimator import ZeroVariates

            if weight_fn is None:
                raise InvalidConfigError("hh-pps needs a weight function")
            self.kernel = _HHPPSKernel(model, config, pool,
                                       variates or ZeroVariates(),
                                       weight_fn, weight_cost)

        if config.proposal == "imh":
            self.imh = IMHProposal(self.mode, self.sigma_star, config.imh_dof)
        else:
            self.imh = None
            initial = config.initial_scale
            if initial is None:
                initial = 2.38 / math.sqrt(model.dim)
            self.adapter = BurninScaleAdapter(
                initial, config.resolved_target_acceptance(), config.adapt_batch)

        self.current_recompute_count = 0
        self.cumulative_cost = 0.0
        self._init_state()

    def _init_state(self):
        theta0 = np.asarray(self.mode, dtype=float)
        lp0 = self.model.log_prior(theta0)
        u0 = self.kernel.initial_subsample(theta0, self.streams)
        log_phat, sigma2, m, cost, _, _ = self.kernel.evaluate(
            theta0, u0, self.streams)
        self.cumulative_cost += cost
        self.state = ChainState(theta=theta0, subsample=u0, log_phat=log_phat,
                                log_prior=lp0, sigma2=sigma2, m=m)

    def _propose_theta(self):
        if self.imh is not None:
            theta_p = self.imh.draw(self.streams.theta)
            log_q_fwd = self.imh.log_density(theta_p)
            log_q_rev = self.imh.log_density(self.state.theta)
            return theta_p, log_q_fwd, log_q_rev
        theta_p = rwm_propose(self.state.theta, self.adapter.scale,
                              self.chol_sigma, self.streams.theta)
        return theta_p, 0.0, 0.0

    def step(self, in_burnin=False):
        """One MH iteration; returns (accepted, record)."""
        state = self.state
        theta_p, log_q_fwd, log_q_rev = self._propose_theta()
        log_prior_p = self.model.log_prior(theta_p)
        record = {"m": 0, "sigma2": np.nan, "sigma2_first": np.nan,
                  "adapt_rounds": 0, "adapt_limit": False, "refreshed": False}

        if not np.isfinite(log_prior_p):
            # outside the prior support: certain rejection, no evaluation
            self.streams.accept.random()
            accepted = False
        else:
            u_p, refreshed = self.kernel.propose_subsample(
                state.subsample, theta_p, self.streams, force_refresh=in_burnin)
            log_phat_p, sigma2_p, m_p, cost, rec, u_final = self.kernel.evaluate(
                theta_p, u_p, self.streams)
            if u_final is not None:
                u_p = u_final
            self.cumulative_cost += cost
            record.update(rec)
            record["refreshed"] = refreshed
            log_alpha = (log_phat_p + log_prior_p + log_q_rev) - (
                state.log_phat + state.log_prior + log_q_fwd)
            accepted = math.log(self.streams.accept.random()) < log_alpha
            if accepted:
                self.state = ChainState(
                    theta=np.asarray(theta_p, dtype=float),
                    subsample=u_p if self.kernel.uses_subsample else None,
                    log_phat=log_phat_p, log_prior=log_prior_p,
                    sigma2=sigma2_p, m=m_p)

        if self.imh is None and in_burnin:
            self.adapter.update(accepted)
        return accepted, record


def run_chain(model, config, variates=None, weight_fn=None, weight_cost=0.0,
              pool=None, mode_info=None):
    """Run burn-in plus sampling; returns the full per-iteration trace.

    ``config.iterations`` counts post burn-in draws; the burn-in adds
    ``burnin_fraction`` of the total on top (subsample refresh is forced and
    random-walk scale adaptation is active during burn-in only).  Any step
    error aborts the run and is recorded on the partial trace.
    """
    config.validate()
    kept = int(config.iterations)
    if config.burnin_fraction > 0.0:
        total = math.ceil(kept / (1.0 - config.burnin_fraction))
    else:
        total = kept
    burnin = total - kept

    chain = PMChain(model, config, variates=variates, weight_fn=weight_fn,
                    weight_cost=weight_cost, pool=pool, mode_info=mode_info)
    setup_cost = chain.cumulative_cost

    p = model.dim
    trace = Trace(
        param_names=tuple(model.param_names),
        theta=np.empty((total, p)),
        accepted=np.zeros(total, dtype=bool),
        m=np.zeros(total, dtype=np.int64),
        sigma2=np.full(total, np.nan),
        sigma2_first=np.full(total, np.nan),
        cost=np.zeros(total),
        adapt_rounds=np.zeros(total, dtype=np.int64),
        adapt_limit=np.zeros(total, dtype=bool),
        refreshed=np.zeros(total, dtype=bool),
        burnin=burnin,
        seed=config.seed,
        population_size=model.n,
        mode=chain.mode,
        sigma_star=chain.sigma_star,
        setup_cost=setup_cost,
    )

    for t in range(total):
        try:
            accepted, record = chain.step(in_burnin=t < burnin)
        except Exception as exc:  # noqa: BLE001 - persist partial trace
            trace.completed = t
            trace.error = {"type": type(exc).__name__, "message": str(exc),
                           "iteration": t}
            break
        trace.theta[t] = chain.state.theta
        trace.accepted[t] = accepted
        trace.m[t] = record["m"]
        trace.sigma2[t] = record["sigma2"]
        trace.sigma2_first[t] = record["sigma2_first"]
        trace.adapt_rounds[t] = record["adapt_rounds"]
        trace.adapt_limit[t] = record["adapt_limit"]
        trace.refreshed[t] = record["refreshed"]
        trace.cost[t] = chain.cumulative_cost
        trace.completed = t + 1

    trace.final_scale = None if chain.imh is not None else chain.adapter.scale
    trace.current_recompute_count = chain.current_recompute_count
    return trace
