"""Log-likelihood surface predictors.

A small training set V of observations gets exact contribution evaluations
every iteration; a regression of those values on data space predicts the
contributions of the remaining observations.  All matrices (basis, kernel,
factorizations) are fixed before the chain starts by tuning hyperparameters
at a single reference parameter, so the per-iteration work is two
matrix-vector products.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import InvalidConfigError

__all__ = ["SurfaceFit", "fit_surface", "predict_surface", "thin_plate_basis",
           "squared_exponential_kernel", "SurfaceVariates"]


def thin_plate_basis(points, knots):
    """Thin-plate radial basis r^2 log r between points and knots.

    The value at a knot itself is 0 (the limit of r^2 log r as r -> 0).
    """
    diff = points[:, None, :] - knots[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    out = np.zeros_like(r2)
    pos = r2 > 0.0
    out[pos] = 0.5 * r2[pos] * np.log(r2[pos])
    return out


def squared_exponential_kernel(a, b, lengthscale, signal=1.0):
    diff = a[:, None, :] - b[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return signal**2 * np.exp(-0.5 * sq / lengthscale**2)


@dataclass
class SurfaceFit:
    """Frozen surface regression; per-iteration work is linear in |V|.

    ``predict(l_V)`` maps the training contributions at the current
    parameter to predictions for the held-out observations.  The map is the
    same fixed linear operator throughout a run.
    """

    method: str
    train_indices: np.ndarray
    predict_indices: np.ndarray
    design_train: np.ndarray          # |V| x M basis (or |V| x |V| kernel)
    design_predict: np.ndarray        # rows for the held-out observations
    solve_factor: tuple
    hyperparams: dict
    tuning_error: float
    jitter: float = 0.0
    fallback: str | None = None
    neighbor_of_predict: np.ndarray | None = None
    residual_adjust: bool = False

    def coefficients(self, loglik_train):
        if self.method == "thin-plate":
            return cho_solve(self.solve_factor, self.design_train.T @ loglik_train)
        return cho_solve(self.solve_factor, loglik_train)

    def predict(self, loglik_train):
        loglik_train = np.asarray(loglik_train, dtype=float)
        coef = self.coefficients(loglik_train)
        pred = self.design_predict @ coef
        if self.residual_adjust and self.neighbor_of_predict is not None:
            insample = self.design_train @ coef
            nn = self.neighbor_of_predict
            pred = pred + (loglik_train[nn] - insample[nn])
        return pred


def _nearest_training_neighbor(points, train_idx, predict_idx):
    from scipy.spatial import cKDTree

    tree = cKDTree(points[train_idx])
    _, nn = tree.query(points[predict_idx])
    return nn


def fit_surface(points, train_indices, loglik_at_reference, method="thin-plate",
                hyperparam_grid=None, n_knots=None, rng=None,
                residual_adjust=False):
    """Tune and freeze a surface regression at a single reference parameter.

    Parameters
    ----------
    points : (n, d) array
        Standardized data coordinates.
    train_indices : index array
        The set V whose contributions are computed exactly each iteration.
    loglik_at_reference : (n,) array
        Exact contributions at the reference parameter (typically the
        posterior mode) for every observation; held-out values drive the
        hyperparameter choice.
    method : {"thin-plate", "gaussian-process"}
    hyperparam_grid : sequence, optional
        Ridge factors (thin-plate) or lengthscales (GP) to search.
    n_knots : int, optional
        Thin-plate knot count, placed by k-means on data space.
    rng : numpy Generator, optional
        Drives the k-means initialization.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    train_idx = np.asarray(train_indices, dtype=np.int64)
    predict_idx = np.setdiff1d(np.arange(points.shape[0]), train_idx)
    if train_idx.size == 0 or predict_idx.size == 0:
        raise InvalidConfigError("surface fit needs nonempty training and held-out sets")
    values = np.asarray(loglik_at_reference, dtype=float)
    target = values[predict_idx]
    rng = np.random.default_rng(0) if rng is None else rng

    best = None
    if method == "thin-plate":
        if n_knots is None:
            n_knots = min(train_idx.size, max(4, train_idx.size // 4))
        if n_knots < train_idx.size:
            knots, _ = kmeans2(points[train_idx], n_knots, minit="++", seed=rng)
        else:
            knots = points[train_idx]
        B_train = thin_plate_basis(points[train_idx], knots)
        B_predict = thin_plate_basis(points[predict_idx], knots)
        grid = [0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0] if hyperparam_grid is None else list(hyperparam_grid)
        fallback = None
        for lam in sorted(grid):
            A = B_train.T @ B_train + lam * np.eye(B_train.shape[1])
            try:
                factor = cho_factor(A)
            except LinAlgError:
                fallback = f"singular system at lambda={lam}; skipped"
                continue
            coef = cho_solve(factor, B_train.T @ values[train_idx])
            err = float(np.linalg.norm(target - B_predict @ coef))
            if best is None or err < best["err"]:
                best = {"err": err, "factor": factor, "lam": lam}
        if best is None:
            raise InvalidConfigError("no usable ridge factor in the thin-plate grid")
        fit = SurfaceFit(
            method="thin-plate",
            train_indices=train_idx,
            predict_indices=predict_idx,
            design_train=B_train,
            design_predict=B_predict,
            solve_factor=best["factor"],
            hyperparams={"lambda": best["lam"], "n_knots": int(knots.shape[0])},
            tuning_error=best["err"],
            fallback=fallback,
        )
    elif method == "gaussian-process":
        scale = float(np.median(np.linalg.norm(
            points[train_idx] - points[train_idx].mean(axis=0), axis=1))) or 1.0
        grid = ([0.25 * scale, 0.5 * scale, scale, 2.0 * scale]
                if hyperparam_grid is None else list(hyperparam_grid))
        jitter_used = 0.0
        fallback = None
        for ell in grid:
            K = squared_exponential_kernel(points[train_idx], points[train_idx], ell)
            jitter = 0.0
            try:
                factor = cho_factor(K)
            except LinAlgError:
                jitter = 1e-8 * float(np.mean(np.diag(K)))
                factor = cho_factor(K + jitter * np.eye(K.shape[0]))
                fallback = f"kernel factorization needed jitter {jitter:g}"
            K_predict = squared_exponential_kernel(points[predict_idx], points[train_idx], ell)
            coef = cho_solve(factor, values[train_idx])
            err = float(np.linalg.norm(target - K_predict @ coef))
            if best is None or err < best["err"]:
                best = {"err": err, "factor": factor, "ell": ell,
                        "K_predict": K_predict, "jitter": jitter}
        jitter_used = best["jitter"]
        fit = SurfaceFit(
            method="gaussian-process",
            train_indices=train_idx,
            predict_indices=predict_idx,
            design_train=squared_exponential_kernel(
                points[train_idx], points[train_idx], best["ell"]),
            design_predict=best["K_predict"],
            solve_factor=best["factor"],
            hyperparams={"lengthscale": best["ell"], "signal": 1.0},
            tuning_error=best["err"],
            jitter=jitter_used,
            fallback=fallback,
        )
    else:
        raise InvalidConfigError(f"unknown surface method {method!r}")

    if residual_adjust:
        fit.neighbor_of_predict = _nearest_training_neighbor(points, train_idx, predict_idx)
        fit.residual_adjust = True
    return fit


def predict_surface(fit, loglik_train):
    """Predict held-out contributions from fresh training values."""
    return fit.predict(loglik_train)


class SurfaceVariates:
    """Control variates from a frozen surface fit.

    Each ``evaluate(theta)`` computes the exact contributions on the
    training set (that is the declared cost) and predicts the held-out
    ones.  Index space is positions within the held-out set, which is the
    population the subsample is drawn from; the training set is meant to be
    folded into the always-evaluated exact sum.
    """

    def __init__(self, model, fit, observation_ids=None):
        self.model = model
        self.fit = fit
        ids = np.arange(model.n) if observation_ids is None else np.asarray(observation_ids)
        self.train_ids = ids[fit.train_indices]
        self.predict_ids = ids[fit.predict_indices]

    def evaluate(self, theta):
        from .estimator import _FrozenVariates

        l_train = self.model.contributions(theta, self.train_ids)
        predictions = self.fit.predict(l_train)
        # the training evaluations are billed by the engine's always-evaluated
        # set (the training set is excluded from the sampling pool), so the
        # provider itself declares no extra cost
        return _FrozenVariates(predictions, float(np.sum(predictions)), 0.0)
