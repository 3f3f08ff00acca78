"""Subsample designs: the auxiliary variable u and its proposals.

Two kinds of subsample are supported.  With-replacement index draws (SRS or
probability-proportional-to-size) feed the inverse-probability estimator
directly.  Binary indicator vectors support the correlated proposal scheme,
where each inclusion indicator evolves as a two-state Markov chain whose
stationary marginal keeps the expected subsample size fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.stats import norm

from .errors import (
    EmptyPopulationError,
    InvalidConfigError,
    InvalidDesignError,
    InvalidParamsError,
)

__all__ = [
    "Subsample",
    "CorrelationParams",
    "draw_srs",
    "draw_pps",
    "draw_indicators",
    "propose_infrequent",
    "propose_correlated_indicators",
    "kappa_from_phi",
    "bivariate_normal_cdf_equal",
]


@dataclass
class Subsample:
    """The auxiliary variable u.

    ``kind`` is either ``"indices"`` (with-replacement draws, aligned
    ``probabilities``) or ``"indicators"`` (length-n inclusion bit vector).
    """

    kind: str
    indices: np.ndarray | None = None
    probabilities: np.ndarray | None = None
    indicators: np.ndarray | None = None
    expected_size: int = 0

    @property
    def size(self):
        if self.kind == "indices":
            return int(self.indices.size)
        return int(np.count_nonzero(self.indicators))

    def as_index_sample(self, n):
        """View an indicator subsample as an SRS-style index list.

        The set bits become the drawn indices with uniform probability 1/n
        and realized size equal to the popcount; an index subsample is
        returned unchanged.
        """
        if self.kind == "indices":
            return self
        idx = np.flatnonzero(self.indicators)
        return Subsample(
            kind="indices",
            indices=idx,
            probabilities=np.full(idx.size, 1.0 / n),
            expected_size=self.expected_size,
        )


@dataclass(frozen=True)
class CorrelationParams:
    """Correlated-indicator proposal parameters.

    ``kappa`` is the stay-included probability, ``fraction`` the stationary
    inclusion probability m*/n, and ``phi`` the Gaussian-copula persistence
    the pair corresponds to (when constructed from one).
    """

    kappa: float
    fraction: float
    phi: float | None = None

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise InvalidParamsError(
                f"fraction must lie in (0, 1), got {self.fraction}"
            )
        if self.kappa < self.fraction - 1e-12 or self.kappa > 1.0 + 1e-12:
            raise InvalidParamsError(
                f"kappa must lie in [fraction, 1], got {self.kappa}"
            )
        stay0 = self.stay_excluded
        if stay0 < -1e-12 or stay0 > 1.0 + 1e-12:
            raise InvalidParamsError(f"stay-0 probability {stay0} outside [0, 1]")

    @property
    def stay_excluded(self):
        """Probability an excluded observation stays excluded."""
        f = self.fraction
        return 1.0 - (1.0 - self.kappa) * f / (1.0 - f)

    @classmethod
    def from_phi(cls, phi, fraction):
        return cls(kappa=kappa_from_phi(phi, fraction), fraction=fraction, phi=phi)


def bivariate_normal_cdf_equal(a, rho):
    """P(X <= a, Y <= a) for standard bivariate normal with correlation rho.

    Uses the tetrachoric representation: the derivative of the CDF in rho is
    the bivariate density, so the CDF equals Phi(a)^2 plus a one-dimensional
    integral.  The substitution r = sin(t) removes the 1/sqrt(1-r^2) endpoint
    singularity, leaving a smooth integrand.
    """
    if rho == 0.0:
        return float(norm.cdf(a)) ** 2
    if rho == 1.0:
        return float(norm.cdf(a))
    upper = math.asin(rho)
    val, _ = quad(lambda t: math.exp(-a * a / (1.0 + math.sin(t))), 0.0, upper,
                  epsabs=1e-14, epsrel=1e-12)
    return float(norm.cdf(a)) ** 2 + val / (2.0 * math.pi)


def kappa_from_phi(phi, fraction):
    """Stay-included probability implied by copula persistence ``phi``.

    kappa = Phi2(a, a | phi) / fraction with a = Phi^{-1}(fraction); exactly
    ``fraction`` at phi = 0 and exactly 1 at phi = 1.
    """
    if not 0.0 <= phi <= 1.0:
        raise InvalidParamsError(f"phi must lie in [0, 1], got {phi}")
    if not 0.0 < fraction < 1.0:
        raise InvalidParamsError(f"fraction must lie in (0, 1), got {fraction}")
    if phi == 0.0:
        return fraction
    if phi == 1.0:
        return 1.0
    a = float(norm.ppf(fraction))
    return min(1.0, bivariate_normal_cdf_equal(a, phi) / fraction)


def draw_srs(n, m, rng):
    """m iid uniform indices over a population of size n (p_k = 1/n)."""
    if n < 1:
        raise EmptyPopulationError("cannot sample from an empty population")
    idx = rng.integers(0, n, size=int(m))
    return Subsample(
        kind="indices",
        indices=idx,
        probabilities=np.full(int(m), 1.0 / n),
        expected_size=int(m),
    )


def draw_pps(weights, m, rng):
    """m iid draws with probability proportional to the given weights.

    The draw uses binary search on the weight prefix sums, so the per-draw
    cost is logarithmic after a linear setup pass (rebuilt whenever the
    weights change).
    """
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise EmptyPopulationError("cannot sample from an empty population")
    if np.any(w < 0.0):
        raise InvalidDesignError("weights must be nonnegative")
    total = w.sum()
    if total <= 0.0:
        raise InvalidDesignError("at least one weight must be positive")
    cumulative = np.cumsum(w)
    u = rng.random(int(m)) * total
    idx = np.searchsorted(cumulative, u, side="right")
    p = w / total
    return Subsample(
        kind="indices",
        indices=idx,
        probabilities=p[idx],
        expected_size=int(m),
    )


def draw_indicators(n, fraction, rng):
    """Stationary indicator draw: each bit independently Bernoulli(fraction)."""
    if n < 1:
        raise EmptyPopulationError("cannot sample from an empty population")
    bits = rng.random(n) < fraction
    return Subsample(
        kind="indicators",
        indicators=bits,
        expected_size=int(round(fraction * n)),
    )


def propose_infrequent(current, omega, fresh_draw, rng):
    """Refresh the subsample with probability omega, else keep it.

    Returns ``(subsample, refreshed)``; a False flag tells the caller that
    the estimate at the current point can be reused rather than recomputed.
    """
    if not 0.0 < omega <= 1.0:
        raise InvalidConfigError(f"omega must lie in (0, 1], got {omega}")
    if rng.random() < omega:
        return fresh_draw(), True
    return current, False


def propose_correlated_indicators(current, params, rng):
    """One Markov transition of every inclusion indicator.

    Included bits stay included with probability kappa; excluded bits stay
    excluded with the complementary probability that preserves the
    stationary marginal fraction exactly.
    """
    if current.kind != "indicators":
        raise InvalidParamsError("correlated proposal requires an indicator subsample")
    bits = current.indicators
    enter = 1.0 - params.stay_excluded
    u = rng.random(bits.size)
    proposed = np.where(bits, u < params.kappa, u < enter)
    return Subsample(
        kind="indicators",
        indicators=proposed,
        expected_size=current.expected_size,
    )
