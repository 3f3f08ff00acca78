"""Reproducible synthetic dataset generators."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.signal import lfilter

from ..errors import InvalidConfigError
from .data import ARData, LogisticData, SurvivalData


def generate_logistic(true_beta, n, rng, intercept=True):
    """Bernoulli rows with standard-normal covariates.

    ``true_beta`` includes the intercept coefficient first when
    ``intercept`` is set; success probability is sigmoid(x' beta).
    """
    beta = np.asarray(true_beta, dtype=float)
    if n < 1:
        raise InvalidConfigError("n must be positive")
    p = beta.size - (1 if intercept else 0)
    if p < 0:
        raise InvalidConfigError("true_beta must have at least the intercept")
    covariates = rng.standard_normal((int(n), p))
    x = np.column_stack([np.ones(int(n)), covariates]) if intercept else covariates
    s = x @ beta
    y = (rng.random(int(n)) < 1.0 / (1.0 + np.exp(-s))).astype(float)
    return LogisticData(y=y, x=x)


def generate_ar1(true_theta, n, rng, parameterization="m1", nu=5.0):
    """AR(1) series with Student-t innovations, started at the stationary mean."""
    if n < 2:
        raise InvalidConfigError("AR series needs n >= 2")
    a, b = float(true_theta[0]), float(true_theta[1])
    if parameterization.lower() == "m1":
        slope = b
        mean = a / (1.0 - slope) if slope != 1.0 else np.inf
    elif parameterization.lower() == "m2":
        slope = b
        mean = a
    else:
        raise InvalidConfigError(f"unknown AR parameterization {parameterization!r}")
    if abs(slope) >= 1.0:
        warnings.warn(f"AR persistence {slope} is (near-)nonstationary; generating anyway")
    eps = rng.standard_t(nu, size=int(n))
    eps[0] = 0.0  # start exactly at the stationary mean
    deviations = lfilter([1.0], [1.0, -slope], eps)
    return ARData(y=mean + deviations)


def generate_weibull_panels(beta_lambda, beta_rho, log_tau2, n_subjects, rng,
                            max_periods=10, intercept=True):
    """Subject panels: constant covariates, periods until the first 0 response.

    Responses follow Bernoulli(h) with h = exp(-lambda (t_j^rho - t_{j-1}^rho)),
    log(lambda) = gamma_i + x' beta_lambda and log(rho) = x' beta_rho; a
    subject's panel ends at its first y = 0 or at ``max_periods``.
    """
    beta_l = np.asarray(beta_lambda, dtype=float)
    beta_r = np.asarray(beta_rho, dtype=float)
    if beta_l.size != beta_r.size:
        raise InvalidConfigError("beta_lambda and beta_rho must have equal length")
    if n_subjects < 1:
        raise InvalidConfigError("n_subjects must be positive")
    tau = float(np.exp(0.5 * log_tau2))
    p = beta_l.size - (1 if intercept else 0)
    if p < 0:
        raise InvalidConfigError("coefficients must at least cover the intercept")

    subject, period, t0, t1, y, xs = [], [], [], [], [], []
    for i in range(int(n_subjects)):
        covariates = rng.standard_normal(p)
        x = np.concatenate([[1.0], covariates]) if intercept else covariates
        gamma = tau * rng.standard_normal()
        lam = np.exp(gamma + x @ beta_l)
        rho = np.exp(x @ beta_r)
        for j in range(1, int(max_periods) + 1):
            h = np.exp(-lam * (j**rho - (j - 1) ** rho))
            response = 1.0 if rng.random() < h else 0.0
            subject.append(i)
            period.append(j)
            t0.append(float(j - 1))
            t1.append(float(j))
            y.append(response)
            xs.append(x)
            if response == 0.0:
                break
    return SurvivalData(
        subject=np.asarray(subject, dtype=np.int64),
        period=np.asarray(period, dtype=np.int64),
        t_start=np.asarray(t0),
        t_end=np.asarray(t1),
        y=np.asarray(y),
        x=np.asarray(xs),
    )


def generate_normal(mu, sigma2, n, rng):
    return ARData(y=mu + np.sqrt(sigma2) * rng.standard_normal(int(n)))


def generate_dataset(kind, params, rng):
    """Dispatch on model kind; ``params`` mirrors the generator signature."""
    kind = kind.lower()
    if kind == "logistic":
        return generate_logistic(params["true_beta"], params["n"], rng,
                                 intercept=params.get("intercept", True))
    if kind == "ar1":
        return generate_ar1(params["true_theta"], params["n"], rng,
                            parameterization=params.get("parameterization", "m1"),
                            nu=params.get("nu", 5.0))
    if kind == "weibull":
        return generate_weibull_panels(
            params["beta_lambda"], params["beta_rho"], params["log_tau2"],
            params["n_subjects"], rng,
            max_periods=params.get("max_periods", 10),
            intercept=params.get("intercept", True))
    if kind == "normal":
        return generate_normal(params["mu"], params.get("sigma2", 1.0),
                               params["n"], rng)
    raise InvalidConfigError(f"unknown model kind {kind!r}")
