"""Chain-efficiency and accuracy diagnostics.

Efficiency is summarized per parameter by the inefficiency factor
IF = 1 + 2 * sum of autocorrelations (initial-positive-sequence truncated),
the effective sample size ESS = N / IF, and effective draws ED = ESS / cost;
RED and RIF are the ratios of those numbers against a baseline sampler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import gaussian_kde

from .errors import (
    DegenerateChainError,
    InsufficientReplicationError,
    InvalidCostError,
)
from .estimator import ZeroVariates, estimate_variance
from .sampling import draw_srs

__all__ = [
    "EfficiencyReport",
    "inefficiency_factor",
    "efficiency_report",
    "compare_posteriors",
    "ks_statistic",
    "error_scaling_study",
    "density_table",
]


def _autocorrelations(x, max_lag):
    x = np.asarray(x, dtype=float)
    n = x.size
    centered = x - x.mean()
    size = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conjugate(f))[: max_lag + 1].real / n
    return acov / acov[0]


def inefficiency_factor(column, min_draws=100):
    """IF = 1 + 2 * sum of autocorrelations up to the positive-sequence cutoff.

    Lag pairs (2k, 2k+1) are accumulated while their summed autocorrelation
    stays positive; truncation happens at the first nonpositive pair.
    """
    x = np.asarray(column, dtype=float)
    if x.size < min_draws:
        raise InsufficientReplicationError(
            f"need at least {min_draws} draws, got {x.size}")
    if np.all(x == x[0]):
        raise DegenerateChainError("constant trace column")
    max_lag = x.size - 2
    rho = _autocorrelations(x, max_lag)
    total = 0.0
    for k in range(0, (max_lag - 1) // 2 + 1):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0.0:
            break
        total += pair
    # the truncated sum can dip below 1 by sampling noise on white-noise
    # chains; flooring keeps ESS <= N
    return float(max(2.0 * total - 1.0, 1.0))


@dataclass
class EfficiencyReport:
    """Per-parameter efficiency measures, optionally relative to a baseline."""

    param_names: tuple
    iterations: int
    cost: float
    inefficiency: np.ndarray
    effective_sample_size: np.ndarray
    effective_draws: np.ndarray
    mean_sampling_fraction: float | None = None
    acceptance_rate: float | None = None
    relative_effective_draws: np.ndarray | None = None
    relative_inefficiency: np.ndarray | None = None

    def to_dict(self):
        def listify(v):
            return None if v is None else [float(x) for x in np.atleast_1d(v)]

        return {
            "param_names": list(self.param_names),
            "iterations": int(self.iterations),
            "cost": float(self.cost),
            "inefficiency": listify(self.inefficiency),
            "effective_sample_size": listify(self.effective_sample_size),
            "effective_draws": listify(self.effective_draws),
            "mean_sampling_fraction": (None if self.mean_sampling_fraction is None
                                       else float(self.mean_sampling_fraction)),
            "acceptance_rate": (None if self.acceptance_rate is None
                                else float(self.acceptance_rate)),
            "relative_effective_draws": listify(self.relative_effective_draws),
            "relative_inefficiency": listify(self.relative_inefficiency),
        }


def efficiency_report(draws, cost, param_names=None, baseline=None,
                      mean_sampling_fraction=None, acceptance_rate=None):
    """Assemble IF/ESS/ED per parameter; RED and RIF when a baseline is given."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if cost <= 0.0:
        raise InvalidCostError(f"cost must be positive, got {cost}")
    n, p = draws.shape
    names = tuple(param_names) if param_names else tuple(
        f"theta{i}" for i in range(p))
    inefficiency = np.array([inefficiency_factor(draws[:, j]) for j in range(p)])
    ess = n / inefficiency
    ed = ess / cost
    report = EfficiencyReport(
        param_names=names,
        iterations=n,
        cost=float(cost),
        inefficiency=inefficiency,
        effective_sample_size=ess,
        effective_draws=ed,
        mean_sampling_fraction=mean_sampling_fraction,
        acceptance_rate=acceptance_rate,
    )
    if baseline is not None:
        report.relative_effective_draws = ed / baseline.effective_draws
        report.relative_inefficiency = inefficiency / baseline.inefficiency
    return report


def ks_statistic(a, b):
    """Two-sample Kolmogorov-Smirnov statistic (no p-value machinery)."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def density_table(samples_by_label, n_bins=128):
    """Plot-ready per-parameter kernel density estimates on a shared grid.

    ``samples_by_label`` maps label -> (N, p) draws.  Returns a list of rows
    (param_index, label, grid_value, density).
    """
    rows = []
    arrays = {}
    for k, v in samples_by_label.items():
        arr = np.asarray(v, dtype=float)
        arrays[k] = arr[:, None] if arr.ndim == 1 else arr
    p = next(iter(arrays.values())).shape[1]
    for j in range(p):
        lo = min(a[:, j].min() for a in arrays.values())
        hi = max(a[:, j].max() for a in arrays.values())
        pad = 0.05 * (hi - lo) if hi > lo else 1.0
        grid = np.linspace(lo - pad, hi + pad, n_bins)
        for label, a in arrays.items():
            col = a[:, j]
            if np.ptp(col) == 0.0:
                dens = np.zeros(n_bins)
            else:
                dens = gaussian_kde(col)(grid)
            rows.extend((j, label, float(g), float(d))
                        for g, d in zip(grid, dens))
    return rows


def compare_posteriors(draws_a, draws_b, param_names=None, n_bins=128):
    """Accuracy summary of chain A against baseline chain B.

    Per parameter: mean difference in units of the baseline posterior SD,
    the SD ratio, and the two-sample KS statistic, plus a binned-density
    table ready for plotting.
    """
    a = np.asarray(draws_a, dtype=float)
    b = np.asarray(draws_b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    p = a.shape[1]
    names = tuple(param_names) if param_names else tuple(
        f"theta{i}" for i in range(p))
    mean_diff = np.empty(p)
    sd_ratio = np.empty(p)
    ks = np.empty(p)
    for j in range(p):
        sd_b = b[:, j].std()
        scale = sd_b if sd_b > 0.0 else 1.0
        mean_diff[j] = (a[:, j].mean() - b[:, j].mean()) / scale
        sd_a = a[:, j].std()
        sd_ratio[j] = sd_a / scale if sd_b > 0.0 else (1.0 if sd_a == 0.0 else np.inf)
        ks[j] = ks_statistic(a[:, j], b[:, j])
    table = density_table({"a": a, "b": b}, n_bins=n_bins)
    return {
        "param_names": list(names),
        "mean_diff_sd": mean_diff,
        "sd_ratio": sd_ratio,
        "ks": ks,
        "density_table": table,
    }


def error_scaling_study(model, thetas, m_grid, replications, rng,
                        variates=None, pool=None):
    """Empirical fractional error of the bias-corrected likelihood estimate.

    For each (theta, m) cell, ``replications`` independent subsample draws
    produce bias-corrected estimates.  Two statistics are reported per cell:
    ``error`` = |mean of exp(log estimate - exact) - 1| (the bias on the
    likelihood scale, averaged with a max shift), and ``median_error`` = the
    median over replications of |exp(log estimate - exact) - 1|, whose
    Monte Carlo noise stays small at any variance level and therefore
    carries the monotone-trend and slope checks.  Returns the rows plus
    fitted log-log slopes of both statistics against m, per theta.
    """
    if replications < 100:
        raise InsufficientReplicationError(
            f"need at least 100 replications, got {replications}")
    m_grid = [int(m) for m in m_grid]
    if not m_grid:
        raise InsufficientReplicationError("m_grid must be nonempty")
    provider = variates if variates is not None else ZeroVariates()
    ids = np.arange(model.n) if pool is None else np.asarray(pool)
    n_pool = ids.size

    def fitted_slope(errors):
        positive = [(m, e) for m, e in zip(m_grid, errors) if e > 0.0]
        if len(positive) < 2:
            return 0.0
        lx = np.log([m for m, _ in positive])
        ly = np.log([e for _, e in positive])
        return float(np.polyfit(lx, ly, 1)[0])

    rows = []
    slopes = []
    median_slopes = []
    for t_idx, theta in enumerate(thetas):
        values = provider.evaluate(theta)
        contributions = model.contributions(theta, ids)
        exact = values.total + float(
            np.sum(contributions - values.at(np.arange(n_pool))))
        residual = contributions - values.at(np.arange(n_pool))
        errors = []
        median_errors = []
        for m in m_grid:
            idx = rng.integers(0, n_pool, size=(int(replications), m))
            zeta = residual[idx] * n_pool
            lhat = values.total + zeta.mean(axis=1)
            centered = zeta - zeta.mean(axis=1, keepdims=True)
            sigma2 = np.einsum("ij,ij->i", centered, centered) / (m * (m - 1))
            log_ratio = lhat - 0.5 * sigma2 - exact
            log_mean = logsumexp(log_ratio) - np.log(log_ratio.size)
            err = abs(float(np.expm1(log_mean)))
            med = float(np.median(np.abs(np.expm1(log_ratio))))
            errors.append(err)
            median_errors.append(med)
            rows.append({"theta_index": t_idx, "m": m, "error": err,
                         "median_error": med})
        slopes.append(fitted_slope(errors))
        median_slopes.append(fitted_slope(median_errors))
    return {"rows": rows, "slopes": slopes, "median_slopes": median_slopes,
            "m_grid": m_grid}
