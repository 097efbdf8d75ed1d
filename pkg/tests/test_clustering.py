import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slidesurv.clustering import (
    Centroids,
    GmmModel,
    em_fit,
    gmm_from_centroids,
    kmeans,
    kmeans_objective,
    load_gmm,
    log_likelihood,
    responsibilities,
    save_gmm,
)
from slidesurv.errors import DimensionError

# frozen 1-D two-component posterior at z=1 for pi=(0.3,0.7), mu=(0,4),
# var=(1,1), computed with 50-digit arithmetic
GAMMA_1D = (0.95901506169594646536, 0.040984938304053534636)


def two_blobs(rng, n_per=100, d=4, sep=10.0, scale=1.0):
    a = rng.normal(0.0, scale, size=(n_per, d))
    b = rng.normal(0.0, scale, size=(n_per, d)) + sep
    return np.vstack([a, b])


def naive_log_likelihood(points, model):
    """Direct density evaluation, no log-space tricks."""
    total = 0.0
    for z in points:
        dens = 0.0
        for c in range(model.n_components):
            var = model.variances[c]
            norm = np.prod(1.0 / np.sqrt(2.0 * np.pi * var))
            quad = np.sum((z - model.means[c]) ** 2 / var)
            dens += model.weights[c] * norm * np.exp(-0.5 * quad)
        total += np.log(dens)
    return total


class TestKmeans:
    def test_two_blob_centroids(self):
        rng = np.random.default_rng(0)
        points = two_blobs(rng)
        cents = kmeans(points, 2, seed=1)
        got = cents.vectors[np.argsort(cents.vectors[:, 0])]
        blob_means = np.vstack([points[:100].mean(axis=0),
                                points[100:].mean(axis=0)])
        assert np.abs(got - blob_means).max() < 0.1 * 1.0  # within 0.1 sigma
        assert not cents.degenerate

    def test_all_identical_points_flagged_degenerate(self):
        points = np.ones((20, 3))
        cents = kmeans(points, 4, seed=0)
        assert cents.degenerate
        assert cents.vectors.shape == (4, 3)
        assert np.array_equal(cents.vectors, np.ones((4, 3)))

    def test_more_clusters_than_points(self):
        with pytest.raises(DimensionError):
            kmeans(np.zeros((3, 2)), 5)

    def test_objective_never_increases_with_iterations(self):
        rng = np.random.default_rng(2)
        points = rng.normal(size=(200, 5))
        objectives = [kmeans_objective(points, kmeans(points, 6, seed=3,
                                                      max_iters=it).vectors)
                      for it in range(1, 8)]
        for earlier, later in zip(objectives, objectives[1:]):
            assert later <= earlier + 1e-8

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(4)
        points = rng.normal(size=(100, 3))
        a = kmeans(points, 5, seed=7)
        b = kmeans(points, 5, seed=7)
        assert np.array_equal(a.vectors, b.vectors)


class TestGmmFromCentroids:
    def test_two_blob_weights_and_means(self):
        rng = np.random.default_rng(5)
        points = two_blobs(rng)
        model = gmm_from_centroids(points, kmeans(points, 2, seed=0))
        assert np.allclose(model.weights, [0.5, 0.5], atol=0.05)
        model.validate()

    def test_empty_component_gets_small_weight(self):
        points = np.random.default_rng(6).normal(size=(50, 3))
        far = Centroids(np.vstack([points.mean(axis=0), np.full(3, 1e6)]))
        model = gmm_from_centroids(points, far)
        assert model.weights[1] < model.weights[0]
        assert model.weights.sum() == pytest.approx(1.0)
        assert (model.variances[1] > 0).all()

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            gmm_from_centroids(np.zeros((5, 3)), Centroids(np.zeros((2, 4))))


class TestResponsibilities:
    def test_single_component_is_all_ones(self):
        model = GmmModel(np.array([1.0]), np.zeros((1, 3)), np.ones((1, 3)))
        resp = responsibilities(np.random.default_rng(0).normal(size=(10, 3)), model)
        assert np.allclose(resp.gamma, 1.0, atol=1e-15)

    def test_midpoint_of_equal_components_is_half(self):
        model = GmmModel(np.array([0.5, 0.5]),
                         np.array([[0.0], [4.0]]), np.ones((2, 1)))
        resp = responsibilities(np.array([[2.0]]), model)
        assert np.allclose(resp.gamma, 0.5, atol=1e-12)

    def test_frozen_1d_oracle(self):
        model = GmmModel(np.array([0.3, 0.7]),
                         np.array([[0.0], [4.0]]), np.ones((2, 1)))
        gamma = responsibilities(np.array([[1.0]]), model).gamma[0]
        assert abs(gamma[0] - GAMMA_1D[0]) < 1e-10
        assert abs(gamma[1] - GAMMA_1D[1]) < 1e-10

    def test_matches_naive_density_ratio(self):
        rng = np.random.default_rng(7)
        model = GmmModel(np.array([0.2, 0.5, 0.3]),
                         rng.normal(size=(3, 4)),
                         rng.uniform(0.5, 2.0, size=(3, 4)))
        points = rng.normal(size=(20, 4))
        resp = responsibilities(points, model)
        for i, z in enumerate(points):
            dens = np.array([
                model.weights[c]
                * np.prod(1.0 / np.sqrt(2.0 * np.pi * model.variances[c]))
                * np.exp(-0.5 * np.sum((z - model.means[c]) ** 2
                                       / model.variances[c]))
                for c in range(3)])
            assert np.allclose(resp.gamma[i], dens / dens.sum(), rtol=1e-10)

    def test_extreme_point_stays_finite(self):
        model = GmmModel(np.array([0.5, 0.5]),
                         np.array([[0.0], [4.0]]), np.ones((2, 1)))
        resp = responsibilities(np.array([[1e4]]), model)
        assert np.isfinite(resp.gamma).all()
        assert resp.gamma.sum() == pytest.approx(1.0)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_rows_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        model = GmmModel(np.array([0.25, 0.25, 0.5]),
                         rng.normal(0, 3, size=(3, 2)),
                         rng.uniform(0.1, 4.0, size=(3, 2)))
        resp = responsibilities(rng.normal(0, 5, size=(8, 2)), model)
        assert np.abs(resp.gamma.sum(axis=1) - 1.0).max() <= 1e-9

    def test_argmax_unchanged_by_weight_scaling_before_normalization(self):
        # responsibilities only depend on weights through their ratios
        rng = np.random.default_rng(8)
        means = rng.normal(0, 3, size=(3, 2))
        var = np.ones((3, 2))
        w = np.array([0.2, 0.3, 0.5])
        points = rng.normal(0, 3, size=(15, 2))
        a = responsibilities(points, GmmModel(w, means, var))
        b = responsibilities(points, GmmModel(w.copy(), means.copy(), var.copy()))
        assert np.array_equal(a.argmax, b.argmax)
        assert np.allclose(a.gamma, b.gamma)


class TestEmFit:
    def test_zero_iters_is_identity(self):
        rng = np.random.default_rng(9)
        points = two_blobs(rng)
        model = gmm_from_centroids(points, kmeans(points, 2, seed=0))
        out = em_fit(points, model, iters=0)
        assert np.array_equal(out.means, model.means)
        assert np.array_equal(out.weights, model.weights)

    def test_log_likelihood_non_decreasing(self):
        rng = np.random.default_rng(10)
        points = rng.normal(size=(150, 3)) + rng.choice(
            [0.0, 6.0], size=(150, 1))
        model = gmm_from_centroids(points, kmeans(points, 4, seed=1))
        lls = [log_likelihood(points, model)]
        for _ in range(8):
            model = em_fit(points, model, iters=1)
            lls.append(log_likelihood(points, model))
        for earlier, later in zip(lls, lls[1:]):
            assert later >= earlier - 1e-8

    def test_log_likelihood_matches_naive_oracle(self):
        rng = np.random.default_rng(11)
        points = rng.normal(size=(30, 3))
        model = gmm_from_centroids(points, kmeans(points, 3, seed=2))
        model = em_fit(points, model, iters=3)
        assert log_likelihood(points, model) == pytest.approx(
            naive_log_likelihood(points, model), rel=1e-10)

    def test_recovers_two_blob_means(self):
        rng = np.random.default_rng(12)
        points = two_blobs(rng, n_per=200)
        model = em_fit(points, gmm_from_centroids(points, kmeans(points, 2, seed=0)),
                       iters=10)
        got = model.means[np.argsort(model.means[:, 0])]
        blob_means = np.vstack([points[:200].mean(axis=0),
                                points[200:].mean(axis=0)])
        assert np.abs(got - blob_means).max() < 0.1

    def test_fixpoint_when_converged(self):
        rng = np.random.default_rng(13)
        points = two_blobs(rng)
        model = em_fit(points, gmm_from_centroids(points, kmeans(points, 2, seed=0)),
                       iters=50)
        again = em_fit(points, model, iters=1)
        assert np.allclose(again.means, model.means, atol=1e-8)
        assert np.allclose(again.weights, model.weights, atol=1e-10)

    def test_variance_floor_enforced(self):
        points = np.repeat(np.eye(2), 10, axis=0)  # two exact point-masses
        model = gmm_from_centroids(points, Centroids(np.eye(2)))
        model = em_fit(points, model, iters=5)
        assert (model.variances >= 1e-6 * (1 - 1e-12)).all()


class TestGmmSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        points = two_blobs(rng)
        model = em_fit(points, gmm_from_centroids(points, kmeans(points, 2, seed=0)),
                       iters=5)
        save_gmm(tmp_path / "m.gmm", model)
        loaded = load_gmm(tmp_path / "m.gmm")
        loaded.validate()
        assert np.allclose(loaded.means, model.means, atol=1e-5)
        assert np.allclose(loaded.weights, model.weights, atol=1e-6)
        assert np.allclose(loaded.variances, model.variances, rtol=1e-5)
