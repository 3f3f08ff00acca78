"""Control variates built from local data clusters.

Observations are grouped greedily into epsilon-balls in standardized data
space.  Within each cluster a second-order Taylor expansion of the
log-likelihood contribution in the *data* (not the parameter) approximates
every member from quantities evaluated once at the centroid.  The two
theta-independent pieces per cluster (the summed deviations and the summed
deviation outer products) are precomputed, so the population total of all n
proxies collapses to a sum over clusters.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidConfigError, NumericDomainError

__all__ = [
    "Standardizer",
    "ClusterSet",
    "CentroidSummary",
    "cluster_epsilon_ball",
    "precompute_centroid_statistics",
    "taylor_proxy",
    "proxy_total",
    "GLMSpec",
    "glm_data_gradient_hessian",
    "normal_glm",
    "bernoulli_logit_glm",
    "pps_weights",
    "TaylorVariates",
    "save_cluster_cache",
    "load_cluster_cache",
]


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension z-scoring constants, kept for reuse across runs."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        std = points.std(axis=0)
        std = np.where(std > 0.0, std, 1.0)
        return cls(mean=points.mean(axis=0), std=std)

    def transform(self, points):
        return (np.asarray(points, dtype=float) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


@dataclass
class ClusterSet:
    """Partition of the observations into epsilon-ball clusters.

    ``centroids`` live in the standardized space the clustering ran in;
    ``centroids_raw`` are the matching member means in original units, which
    is where the Taylor machinery evaluates derivatives.  Membership is
    guaranteed within ``epsilon`` of the founding seed point (the centroid
    itself can drift up to epsilon from a member; both radii are reported).
    """

    centroids: np.ndarray
    centroids_raw: np.ndarray
    assignments: np.ndarray
    counts: np.ndarray
    seeds: np.ndarray
    epsilon: float
    max_seed_distance: float = 0.0
    max_centroid_distance: float = 0.0

    @property
    def n_clusters(self):
        return int(self.counts.size)

    @property
    def n(self):
        return int(self.assignments.size)


def _greedy_scan(points, epsilon):
    """Algorithm: scan points in index order; each not-yet-clustered point
    founds a cluster from the not-yet-clustered points within epsilon of it.

    Restricting membership to unclustered points makes the result a
    partition, which the compact per-cluster sums require.
    """
    n = points.shape[0]
    tree = cKDTree(points)
    assignments = np.full(n, -1, dtype=np.int64)
    seeds = []
    for i in range(n):
        if assignments[i] >= 0:
            continue
        members = tree.query_ball_point(points[i], epsilon)
        members = [k for k in members if assignments[k] < 0]
        assignments[members] = len(seeds)
        seeds.append(i)
    return assignments, np.asarray(seeds, dtype=np.int64)


def cluster_epsilon_ball(points, epsilon, raw_points=None, groups=None):
    """Greedy epsilon-ball clustering of standardized data points.

    Parameters
    ----------
    points : (n, d) array
        Standardized coordinates the epsilon radius applies to.
    epsilon : float
        Ball radius; must be positive.
    raw_points : (n, d) array, optional
        Original-unit coordinates for the centroid means (defaults to
        ``points``).
    groups : (n,) array, optional
        Category labels; clustering runs separately within each label so
        clusters never straddle categories (centroids then carry an exact
        category value).
    """
    if epsilon <= 0.0:
        raise InvalidConfigError(f"epsilon must be > 0, got {epsilon}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        raise InvalidConfigError("cannot cluster an empty dataset")
    raw = points if raw_points is None else np.atleast_2d(np.asarray(raw_points, dtype=float))

    n = points.shape[0]
    if groups is None:
        assignments, seeds = _greedy_scan(points, epsilon)
    else:
        groups = np.asarray(groups)
        assignments = np.full(n, -1, dtype=np.int64)
        seeds_list = []
        for g in np.unique(groups):
            sel = np.flatnonzero(groups == g)
            sub_assign, sub_seeds = _greedy_scan(points[sel], epsilon)
            assignments[sel] = sub_assign + len(seeds_list)
            seeds_list.extend(sel[sub_seeds])
        seeds = np.asarray(seeds_list, dtype=np.int64)

    n_clusters = seeds.size
    counts = np.bincount(assignments, minlength=n_clusters)
    d = points.shape[1]
    centroids = np.zeros((n_clusters, d))
    centroids_raw = np.zeros((n_clusters, raw.shape[1]))
    np.add.at(centroids, assignments, points)
    np.add.at(centroids_raw, assignments, raw)
    centroids /= counts[:, None]
    centroids_raw /= counts[:, None]

    seed_dist = np.linalg.norm(points - points[seeds[assignments]], axis=1)
    cent_dist = np.linalg.norm(points - centroids[assignments], axis=1)
    return ClusterSet(
        centroids=centroids,
        centroids_raw=centroids_raw,
        assignments=assignments,
        counts=counts,
        seeds=seeds,
        epsilon=float(epsilon),
        max_seed_distance=float(seed_dist.max()),
        max_centroid_distance=float(cent_dist.max()),
    )


@dataclass
class CentroidSummary:
    """Theta-independent cluster statistics for the compact proxy total.

    ``deviation_sum`` is the summed member deviation from the centroid and
    ``deviation_outer_sum`` the summed outer products of those deviations;
    both depend only on the data and the clustering.  The log-likelihood at
    the centroid is filled in per iteration by the caller.
    """

    count: int
    centroid: np.ndarray
    deviation_sum: np.ndarray
    deviation_outer_sum: np.ndarray
    loglik_at_centroid: float | None = None


def precompute_centroid_statistics(raw_points, clusters):
    """Fill the theta-independent sums for every cluster (one-time cost)."""
    raw = np.atleast_2d(np.asarray(raw_points, dtype=float))
    deviations = raw - clusters.centroids_raw[clusters.assignments]
    d = raw.shape[1]
    n_clusters = clusters.n_clusters
    dev_sum = np.zeros((n_clusters, d))
    np.add.at(dev_sum, clusters.assignments, deviations)
    outer = deviations[:, :, None] * deviations[:, None, :]
    outer_sum = np.zeros((n_clusters, d, d))
    np.add.at(outer_sum, clusters.assignments, outer)
    return [
        CentroidSummary(
            count=int(clusters.counts[j]),
            centroid=clusters.centroids_raw[j],
            deviation_sum=dev_sum[j],
            deviation_outer_sum=outer_sum[j],
        )
        for j in range(n_clusters)
    ]


def taylor_proxy(z, summary, derivatives):
    """Second-order expansion of the contribution around a centroid.

    ``derivatives`` is the triple (value, gradient, hessian) of the
    contribution at ``summary.centroid`` for the current parameter; ``z``
    may be one point or a stack of points assigned to this cluster.
    """
    value, grad, hess = derivatives
    z = np.asarray(z, dtype=float)
    b = z - summary.centroid
    if b.ndim == 1:
        return float(value + grad @ b + 0.5 * b @ hess @ b)
    quad = np.einsum("ij,jk,ik->i", b, hess, b)
    return value + b @ grad + 0.5 * quad


def proxy_total(theta, model, summaries):
    """Population total of the cluster Taylor proxies, from centroid work only.

    Uses the precomputed per-cluster sums: the linear terms contract the
    centroid gradients with the summed deviations, and the quadratic terms
    contract the centroid Hessians elementwise with the summed deviation
    outer products.  Returns the total and the declared evaluation cost
    (one exact contribution per centroid).
    """
    centroids = np.stack([s.centroid for s in summaries])
    values = model.point_loglik(theta, centroids)
    grads, hessians = model.point_derivatives(theta, centroids)
    counts = np.array([s.count for s in summaries], dtype=float)
    dev_sums = np.stack([s.deviation_sum for s in summaries])
    outer_sums = np.stack([s.deviation_outer_sum for s in summaries])
    total = float(
        counts @ values
        + np.einsum("jd,jd->", grads, dev_sums)
        + 0.5 * np.einsum("jde,jde->", hessians, outer_sums)
    )
    return total, float(len(summaries))


@dataclass(frozen=True)
class GLMSpec:
    """Exponential-family pieces p(y|x) = h(y) g(theta) exp(b(theta) T(y))
    with mean parameter theta = kinv(x' beta), plus first and second
    derivatives of every piece."""

    h: callable
    h1: callable
    h2: callable
    g: callable
    g1: callable
    g2: callable
    b: callable
    b1: callable
    b2: callable
    T: callable
    T1: callable
    T2: callable
    kinv: callable
    kinv1: callable
    kinv2: callable


def glm_data_gradient_hessian(z, beta, spec):
    """Gradient and Hessian of the log-density with respect to the data.

    ``z`` stacks (y, x); the derivatives follow from the chain rule through
    a = x' beta and theta = kinv(a).  Categorical entries are treated as
    continuous for the differentiation.
    """
    z = np.asarray(z, dtype=float)
    beta = np.asarray(beta, dtype=float)
    y = z[0]
    x = z[1:]
    a = float(x @ beta)
    theta = spec.kinv(a)
    k1 = spec.kinv1(a)
    k2 = spec.kinv2(a)

    hv = spec.h(y)
    gv = spec.g(theta)
    if hv == 0.0 or gv == 0.0:
        raise NumericDomainError("h(y) or g(theta) vanished at the evaluation point")
    h_ratio = spec.h1(y) / hv
    g_ratio = spec.g1(theta) / gv

    bv = spec.b(theta)
    b1v = spec.b1(theta)
    Tv = spec.T(y)
    T1v = spec.T1(y)

    dl_dtheta = g_ratio + b1v * Tv
    grad = np.empty(z.size)
    grad[0] = h_ratio + bv * T1v
    grad[1:] = dl_dtheta * k1 * beta

    # second derivatives of the theta-dependent factor
    d2l_dtheta2 = (spec.g2(theta) / gv - g_ratio**2) + spec.b2(theta) * Tv
    hess = np.empty((z.size, z.size))
    hess[0, 0] = (spec.h2(y) / hv - h_ratio**2) + bv * spec.T2(y)
    cross = b1v * k1 * T1v
    hess[0, 1:] = cross * beta
    hess[1:, 0] = cross * beta
    hess[1:, 1:] = (d2l_dtheta2 * k1 * k1 + dl_dtheta * k2) * np.outer(beta, beta)
    return grad, hess


def normal_glm(sigma2=1.0):
    """Gaussian response with identity link and known variance."""
    inv = 1.0 / sigma2
    norm_c = 1.0 / np.sqrt(2.0 * np.pi * sigma2)
    return GLMSpec(
        h=lambda y: norm_c * np.exp(-0.5 * inv * y * y),
        h1=lambda y: norm_c * np.exp(-0.5 * inv * y * y) * (-inv * y),
        h2=lambda y: norm_c * np.exp(-0.5 * inv * y * y) * (inv * inv * y * y - inv),
        g=lambda t: np.exp(-0.5 * inv * t * t),
        g1=lambda t: np.exp(-0.5 * inv * t * t) * (-inv * t),
        g2=lambda t: np.exp(-0.5 * inv * t * t) * (inv * inv * t * t - inv),
        b=lambda t: inv * t,
        b1=lambda t: inv,
        b2=lambda t: 0.0,
        T=lambda y: y,
        T1=lambda y: 1.0,
        T2=lambda y: 0.0,
        kinv=lambda a: a,
        kinv1=lambda a: 1.0,
        kinv2=lambda a: 0.0,
    )


def bernoulli_logit_glm():
    """Bernoulli response with canonical logit link (mean parameter)."""

    def sigmoid(a):
        return 1.0 / (1.0 + np.exp(-a))

    return GLMSpec(
        h=lambda y: 1.0,
        h1=lambda y: 0.0,
        h2=lambda y: 0.0,
        g=lambda t: 1.0 - t,
        g1=lambda t: -1.0,
        g2=lambda t: 0.0,
        b=lambda t: np.log(t / (1.0 - t)),
        b1=lambda t: 1.0 / (t * (1.0 - t)),
        b2=lambda t: (2.0 * t - 1.0) / (t * t * (1.0 - t) ** 2),
        T=lambda y: y,
        T1=lambda y: 1.0,
        T2=lambda y: 0.0,
        kinv=sigmoid,
        kinv1=lambda a: sigmoid(a) * (1.0 - sigmoid(a)),
        kinv2=lambda a: sigmoid(a) * (1.0 - sigmoid(a)) * (1.0 - 2.0 * sigmoid(a)),
    )


def pps_weights(values, floor_ratio=1e-12):
    """Sampling weights |values| with zeros floored to a fraction of the max."""
    w = np.abs(np.asarray(values, dtype=float))
    top = w.max()
    if top <= 0.0:
        return np.full_like(w, 1.0)
    return np.maximum(w, floor_ratio * top)


class TaylorVariates:
    """Per-iteration control variates from cluster Taylor expansions.

    Built once from a model's proxy points (optionally restricted to a
    subset of observations); each ``evaluate(theta)`` performs the centroid
    evaluations and exposes the compact total plus cheap per-observation
    proxy values for the sampled indices.  Indices are positions within the
    subset the provider was built over.

    ``hessian_mode="fixed"`` evaluates the quadratic term once at a
    reference parameter and reuses it (a good approximation for log-concave
    contributions); the default recomputes it every iteration.
    """

    def __init__(self, model, epsilon, subset=None, hessian_mode="recompute",
                 theta_ref=None, clusters=None):
        if hessian_mode not in ("recompute", "fixed"):
            raise InvalidConfigError(f"unknown hessian_mode {hessian_mode!r}")
        if hessian_mode == "fixed" and theta_ref is None:
            raise InvalidConfigError("fixed hessian_mode needs theta_ref")
        points = model.proxy_points()
        groups = model.cluster_groups() if hasattr(model, "cluster_groups") else None
        if subset is not None:
            subset = np.asarray(subset)
            points = points[subset]
            if groups is not None:
                groups = groups[subset]
        self.standardizer = Standardizer.fit(points)
        if clusters is None:
            clusters = cluster_epsilon_ball(
                self.standardizer.transform(points), epsilon,
                raw_points=points, groups=groups,
            )
        self.clusters = clusters
        self.summaries = precompute_centroid_statistics(points, clusters)
        self.model = model
        self.points = points
        self.deviations = points - clusters.centroids_raw[clusters.assignments]
        self._counts = clusters.counts.astype(float)
        self._dev_sums = np.stack([s.deviation_sum for s in self.summaries])
        self._outer_sums = np.stack([s.deviation_outer_sum for s in self.summaries])
        self.hessian_mode = hessian_mode
        self._fixed_hessians = None
        if hessian_mode == "fixed":
            _, self._fixed_hessians = model.point_derivatives(
                theta_ref, clusters.centroids_raw)

    @property
    def n_clusters(self):
        return self.clusters.n_clusters

    def evaluate(self, theta):
        centroids = self.clusters.centroids_raw
        values = self.model.point_loglik(theta, centroids)
        grads, hessians = self.model.point_derivatives(theta, centroids)
        if self.hessian_mode == "fixed":
            hessians = self._fixed_hessians
        total = float(
            self._counts @ values
            + np.einsum("jd,jd->", grads, self._dev_sums)
            + 0.5 * np.einsum("jde,jde->", hessians, self._outer_sums)
        )
        return _TaylorValues(self, values, grads, hessians, total)


class _TaylorValues:
    """Taylor proxy values pinned at one theta."""

    def __init__(self, parent, values, grads, hessians, total):
        self._parent = parent
        self._values = values
        self._grads = grads
        self._hessians = hessians
        self.total = total
        self.cost = float(parent.n_clusters)

    def at(self, indices):
        parent = self._parent
        idx = np.asarray(indices)
        a = parent.clusters.assignments[idx]
        b = parent.deviations[idx]
        quad = np.einsum("ij,ijk,ik->i", b, self._hessians[a], b)
        return self._values[a] + np.einsum("ij,ij->i", self._grads[a], b) + 0.5 * quad


def _cluster_key(data_hash, epsilon):
    return f"{data_hash}:{epsilon!r}"


def dataset_content_hash(points):
    """Stable content hash of a data matrix (drives the cluster cache key)."""
    arr = np.ascontiguousarray(np.asarray(points, dtype=float))
    digest = hashlib.sha256()
    digest.update(str(arr.shape).encode())
    digest.update(arr.tobytes())
    return digest.hexdigest()


def save_cluster_cache(path, clusters, points):
    """Persist a clustering keyed by dataset content hash and epsilon."""
    np.savez_compressed(
        path,
        key=np.array(_cluster_key(dataset_content_hash(points), clusters.epsilon)),
        centroids=clusters.centroids,
        centroids_raw=clusters.centroids_raw,
        assignments=clusters.assignments,
        counts=clusters.counts,
        seeds=clusters.seeds,
        epsilon=np.array(clusters.epsilon),
        max_seed_distance=np.array(clusters.max_seed_distance),
        max_centroid_distance=np.array(clusters.max_centroid_distance),
    )


def load_cluster_cache(path, points, epsilon):
    """Load a cached clustering; returns None on any key mismatch."""
    try:
        with np.load(path, allow_pickle=False) as payload:
            key = str(payload["key"])
            if key != _cluster_key(dataset_content_hash(points), float(epsilon)):
                return None
            return ClusterSet(
                centroids=payload["centroids"],
                centroids_raw=payload["centroids_raw"],
                assignments=payload["assignments"],
                counts=payload["counts"],
                seeds=payload["seeds"],
                epsilon=float(payload["epsilon"]),
                max_seed_distance=float(payload["max_seed_distance"]),
                max_centroid_distance=float(payload["max_centroid_distance"]),
            )
    except (OSError, KeyError):
        return None
