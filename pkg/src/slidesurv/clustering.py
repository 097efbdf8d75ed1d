"""K-means seeding, diagonal Gaussian mixtures, and EM responsibilities.

Corpus-level fitting (k-means over sampled patches, then EM refinement)
is separated from per-bag scoring (``responsibilities``), so one fitted
mixture can score every bag in a cohort.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .dataio import read_matrix_block, write_matrix_block
from .errors import DimensionError

VAR_FLOOR = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class Centroids:
    vectors: np.ndarray  # (C_h, d)
    degenerate: bool = False  # all input points identical

    @property
    def count(self) -> int:
        return self.vectors.shape[0]


@dataclass
class GmmModel:
    weights: np.ndarray  # (C_h,), simplex
    means: np.ndarray    # (C_h, d)
    variances: np.ndarray  # (C_h, d), diagonal covariances, floored

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def validate(self):
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {self.weights.sum()!r}")
        if (self.variances < VAR_FLOOR * (1 - 1e-12)).any():
            raise ValueError("variance below floor")


@dataclass
class Responsibilities:
    gamma: np.ndarray      # (N_p, C_h), rows sum to 1
    argmax: np.ndarray     # (N_p,) most responsible component
    max_posterior: np.ndarray  # (N_p,)


def _pairwise_sq_dists(points, centers):
    # (N, C) squared euclidean distances
    return (np.sum(points**2, axis=1)[:, None]
            - 2.0 * points @ centers.T
            + np.sum(centers**2, axis=1)[None, :])


def _kmeans_pp_init(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.maximum(_pairwise_sq_dists(points, centers[0:1])[:, 0], 0.0)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i:] = centers[0]
            break
        centers[i] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.maximum(
            _pairwise_sq_dists(points, centers[i:i + 1])[:, 0], 0.0))
    return centers


def kmeans_objective(points, centers) -> float:
    return float(np.maximum(_pairwise_sq_dists(points, centers), 0.0).min(axis=1).sum())


def kmeans(points: np.ndarray, n_clusters: int, seed: int = 0,
           max_iters: int = 100) -> Centroids:
    """Lloyd iterations from k-means++ seeding, deterministic per seed."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < n_clusters:
        raise DimensionError(
            f"{points.shape[0]} points cannot form {n_clusters} clusters")
    if np.allclose(points, points[0]):
        return Centroids(np.repeat(points[0:1], n_clusters, axis=0), degenerate=True)

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(points, n_clusters, rng)
    labels = None
    for _ in range(max_iters):
        new_labels = np.maximum(_pairwise_sq_dists(points, centers), 0.0).argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(n_clusters):
            mask = labels == c
            if mask.any():
                centers[c] = points[mask].mean(axis=0)
    return Centroids(centers)


def assign_to_centroids(points: np.ndarray, centroids: Centroids) -> np.ndarray:
    return np.maximum(_pairwise_sq_dists(points, centroids.vectors), 0.0).argmin(axis=1)


def gmm_from_centroids(points: np.ndarray, centroids: Centroids) -> GmmModel:
    """One M-step applied to the hard k-means assignment."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[1] != centroids.vectors.shape[1]:
        raise DimensionError(
            f"points d={points.shape[1]} vs centroids d={centroids.vectors.shape[1]}")
    k = centroids.count
    labels = assign_to_centroids(points, centroids)
    global_var = np.maximum(points.var(axis=0), VAR_FLOOR)
    weights = np.empty(k)
    means = centroids.vectors.copy()
    variances = np.empty((k, points.shape[1]))
    for c in range(k):
        mask = labels == c
        n_c = int(mask.sum())
        if n_c == 0:
            weights[c] = 1.0 / (10.0 * k)
            variances[c] = global_var
        else:
            weights[c] = n_c / points.shape[0]
            variances[c] = np.maximum(points[mask].var(axis=0), VAR_FLOOR)
    weights /= weights.sum()
    return GmmModel(weights, means, variances)


def _log_joint(points, model: GmmModel) -> np.ndarray:
    """log(pi_c) + log N(z_i; mu_c, Sigma_c), shape (N, C)."""
    diff = points[:, None, :] - model.means[None, :, :]  # (N, C, d)
    inv_var = 1.0 / model.variances
    quad = np.einsum("ncd,cd->nc", diff * diff, inv_var)
    log_det = np.log(model.variances).sum(axis=1)
    log_norm = -0.5 * (points.shape[1] * _LOG_2PI + log_det)
    # tiny floor keeps dead components at -inf-like log weight without warnings
    return (np.log(np.maximum(model.weights, 1e-300))[None, :]
            + log_norm[None, :] - 0.5 * quad)


def log_likelihood(points: np.ndarray, model: GmmModel) -> float:
    return float(logsumexp(_log_joint(points, model), axis=1).sum())


def responsibilities(points: np.ndarray, model: GmmModel) -> Responsibilities:
    """Posterior component probabilities per point, computed in log space."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[1] != model.d:
        raise DimensionError(f"points d={points.shape[1]} vs model d={model.d}")
    lj = _log_joint(points, model)
    gamma = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    arg = gamma.argmax(axis=1)
    return Responsibilities(gamma, arg, gamma[np.arange(len(arg)), arg])


def em_fit(points: np.ndarray, model: GmmModel, iters: int = 10) -> GmmModel:
    """Standard diagonal-GMM EM; ``iters=0`` returns the model unchanged."""
    points = np.asarray(points, dtype=np.float64)
    weights = model.weights.copy()
    means = model.means.copy()
    variances = model.variances.copy()
    n = points.shape[0]
    for _ in range(iters):
        current = GmmModel(weights, means, variances)
        gamma = responsibilities(points, current).gamma
        nk = gamma.sum(axis=0)  # (C,)
        safe_nk = np.maximum(nk, 1e-12)
        weights = nk / n
        means = (gamma.T @ points) / safe_nk[:, None]
        diff = points[:, None, :] - means[None, :, :]
        variances = np.einsum("nc,ncd->cd", gamma, diff * diff) / safe_nk[:, None]
        variances = np.maximum(variances, VAR_FLOOR)
    return GmmModel(weights, means, variances)


# ---------------------------------------------------------------------------
# serialization (three matrix blocks in one file: weights, means, variances)


def save_gmm(path, model: GmmModel):
    with open(path, "wb") as fh:
        write_matrix_block(fh, model.weights.reshape(1, -1))
        write_matrix_block(fh, model.means)
        write_matrix_block(fh, model.variances)


def load_gmm(path) -> GmmModel:
    with open(path, "rb") as fh:
        weights = read_matrix_block(fh)[0]
        means = read_matrix_block(fh)
        variances = read_matrix_block(fh)
    weights = weights / weights.sum()  # re-normalize float32 round-off
    return GmmModel(weights, means, np.maximum(variances, VAR_FLOOR))
