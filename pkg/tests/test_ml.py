import numpy as np
import pytest

from crystalfold.config import make_rng
from crystalfold.embed import build_embedding
from crystalfold.ml import (
    GPSampler,
    InvariantKernel,
    approximate_kernel,
    gp_distributional_params,
    gp_sample,
    gp_sample_grid,
    gram,
    init_mlp_weights,
    kernel_eval,
    mlp_forward,
    rbf_base_kernel,
    svm_dual_objective,
    svm_predict,
    svm_train,
    threshold_dataset,
)
from crystalfold.polytope import sample_points
from crystalfold.quotient import build_context
from crystalfold.registry import get_group, list_groups


@pytest.fixture(scope="module")
def kernel(p1_embedding):
    return InvariantKernel(p1_embedding, 0.3)


@pytest.fixture(scope="module")
def sampler(p1_embedding):
    return GPSampler.from_seed(p1_embedding, 0.3, features=512, seed=11)


def projected_gradient_oracle(K, labels, C, iterations=5000):
    """Dual SVM solution by accelerated projected gradient ascent.

    Maximises ``sum(a) - 1/2 (a y)' K (a y)`` over ``0 <= a <= C`` with
    ``a . y = 0``; the projection is found by bisection on the multiplier.
    """
    Q = (labels[:, None] * labels[None, :]) * K
    step = 1.0 / np.linalg.eigvalsh(Q).max()

    def project(a):
        lo, hi = -10.0 * C - 10.0, 10.0 * C + 10.0
        for _ in range(100):
            mu = (lo + hi) / 2.0
            if np.clip(a - mu * labels, 0.0, C) @ labels > 0:
                lo = mu
            else:
                hi = mu
        return np.clip(a - mu * labels, 0.0, C)

    alpha = np.zeros(len(labels))
    momentum, t = alpha.copy(), 1.0
    for _ in range(iterations):
        nxt = project(momentum + step * (1.0 - Q @ momentum))
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        momentum = nxt + ((t - 1.0) / t_next) * (nxt - alpha)
        alpha, t = nxt, t_next
    return alpha


class TestKernel:
    def test_rbf_base_kernel(self):
        k = rbf_base_kernel(0.5)
        assert k([[0.0, 0.0]], [[0.5, 0.0]])[0, 0] == pytest.approx(
            np.exp(-0.5)
        )

    def test_rejects_non_positive_lengthscale(self):
        with pytest.raises(ValueError, match="lengthscale"):
            rbf_base_kernel(0.0)

    def test_rejects_unknown_base(self, p1_embedding):
        with pytest.raises(ValueError, match="Unknown base kernel"):
            InvariantKernel(p1_embedding, 0.3, base="matern")

    def test_invariant_in_both_arguments(self, kernel, p1_ctx):
        x, y = np.array([0.2, 0.3]), np.array([0.7, 0.9])
        value = kernel(x, y)
        for phi in p1_ctx.local_group.elements[:6]:
            assert kernel(phi(x), y) == pytest.approx(value, abs=1e-9)
            assert kernel(x, phi(y)) == pytest.approx(value, abs=1e-9)

    def test_diagonal_is_one(self, kernel):
        assert kernel_eval(kernel, [0.4, 0.4], [1.4, -0.6]) == pytest.approx(
            1.0
        )

    def test_gram_is_positive_semidefinite(self, kernel, p1_ctx):
        points = sample_points(p1_ctx.polytope, 80, make_rng(0))
        matrix = gram(kernel, points)
        np.testing.assert_allclose(matrix, matrix.T)
        assert np.linalg.eigvalsh(matrix).min() >= -1e-8

    @pytest.mark.slow
    @pytest.mark.parametrize("name", list_groups())
    def test_gram_is_positive_semidefinite_for_every_group(self, name):
        ctx = build_context(get_group(name))
        embedding = build_embedding(ctx, 0.15 if ctx.dimension == 3 else 0.1)
        kernel = InvariantKernel(embedding, 0.3)
        points = sample_points(ctx.polytope, 60, make_rng(1))
        matrix = gram(kernel, points)
        np.testing.assert_allclose(matrix, matrix.T)
        np.testing.assert_allclose(np.diag(matrix), 1.0)
        assert np.linalg.eigvalsh(matrix).min() >= -1e-8


class TestGPSampler:
    def test_same_seed_same_sample(self, p1_embedding):
        a = GPSampler.from_seed(p1_embedding, 0.3, features=64, seed=5)
        b = GPSampler.from_seed(p1_embedding, 0.3, features=64, seed=5)
        points = make_rng(1).uniform(size=(10, 2))
        np.testing.assert_array_equal(a(points), b(points))

    def test_different_seeds_differ(self, p1_embedding):
        a = GPSampler.from_seed(p1_embedding, 0.3, features=64, seed=5)
        b = GPSampler.from_seed(p1_embedding, 0.3, features=64, seed=6)
        points = make_rng(1).uniform(size=(10, 2))
        assert not np.allclose(a(points), b(points))

    def test_invariant(self, sampler, p1_ctx):
        x = np.array([0.35, 0.8])
        for phi in p1_ctx.local_group.elements[:6]:
            assert gp_sample(sampler, phi(x)) == pytest.approx(
                gp_sample(sampler, x), abs=1e-9
            )

    def test_grid_matches_pointwise(self, sampler):
        points = np.array([[0.1, 0.2], [0.6, 0.9]])
        grid = gp_sample_grid(sampler, points)
        assert grid[1] == pytest.approx(gp_sample(sampler, points[1]))

    def test_rejects_bad_settings(self, p1_embedding):
        with pytest.raises(ValueError, match="must be positive"):
            GPSampler.from_seed(p1_embedding, 0.3, features=0)

    def test_random_features_approximate_kernel(self, p1_embedding):
        lengthscale = 2.0
        sampler = GPSampler.from_seed(
            p1_embedding, lengthscale, features=4096, seed=3
        )
        kernel = InvariantKernel(p1_embedding, lengthscale)
        points = make_rng(2).uniform(size=(15, 2))
        error = np.abs(
            approximate_kernel(sampler, points, points)
            - kernel.cross(points, points)
        )
        assert error.max() <= 0.05

    def test_sample_covariance_matches_kernel(self, p1_embedding):
        points = np.array([[0.2, 0.3], [0.35, 0.4], [0.8, 0.1]])
        samples = np.array(
            [
                GPSampler.from_seed(p1_embedding, 0.3, 256, seed)(points)
                for seed in range(200)
            ]
        )
        covariance = samples.T @ samples / len(samples)
        kernel = InvariantKernel(p1_embedding, 0.3)
        error = np.abs(covariance - kernel.cross(points, points))
        assert error.max() <= 0.35
        assert np.abs(samples.mean(axis=0)).max() <= 0.3


class TestSVM:
    @pytest.fixture(scope="class")
    def dataset(self, sampler, p1_ctx):
        return threshold_dataset(sampler, p1_ctx, 40, seed=4)

    def test_two_point_problem(self, kernel):
        x = np.array([[0.2, 0.2], [0.6, 0.7]])
        y = np.array([1.0, -1.0])
        k = kernel(x[0], x[1])
        model = svm_train(kernel, x, y, C=100.0, tol=1e-9)
        np.testing.assert_allclose(
            model.coefficients, [1.0 / (1.0 - k), -1.0 / (1.0 - k)], rtol=1e-6
        )
        assert model.bias == pytest.approx(0.0, abs=1e-6)
        assert svm_predict(model, x[0]) == pytest.approx(1.0, rel=1e-6)
        assert svm_predict(model, x[1]) == pytest.approx(-1.0, rel=1e-6)

    def test_matches_projected_gradient(self, kernel, dataset):
        points, labels = dataset
        model = svm_train(kernel, points, labels, C=1.0, tol=1e-6)
        assert model.converged
        alpha = projected_gradient_oracle(model.gram, labels, 1.0)
        oracle = np.sum(alpha) - 0.5 * (alpha * labels) @ model.gram @ (
            alpha * labels
        )
        assert svm_dual_objective(model) == pytest.approx(oracle, abs=1e-3)

    def test_box_and_equality_constraints(self, kernel, dataset):
        points, labels = dataset
        model = svm_train(kernel, points, labels, C=0.5)
        assert np.all(model.alphas >= 0.0)
        assert np.all(model.alphas <= 0.5 + 1e-12)
        assert model.alphas @ labels == pytest.approx(0.0, abs=1e-9)

    def test_predictions_are_invariant(self, kernel, dataset, p1_ctx):
        points, labels = dataset
        model = svm_train(kernel, points, labels)
        queries = make_rng(5).uniform(size=(10, 2))
        for phi in p1_ctx.local_group.elements[:4]:
            np.testing.assert_allclose(
                svm_predict(model, phi(queries)),
                svm_predict(model, queries),
                atol=1e-9,
            )

    def test_fits_training_data(self, kernel, dataset):
        points, labels = dataset
        model = svm_train(kernel, points, labels, C=10.0)
        accuracy = np.mean(np.sign(svm_predict(model, points)) == labels)
        assert accuracy >= 0.9

    def test_iteration_cap(self, kernel, dataset):
        points, labels = dataset
        model = svm_train(kernel, points, labels, tol=1e-12, max_passes=2)
        assert not model.converged

    @pytest.mark.parametrize(
        "labels, message",
        [
            ([1.0, 2.0], "must be -1 or \\+1"),
            ([1.0, 1.0], "both classes"),
        ],
    )
    def test_rejects_bad_labels(self, kernel, labels, message):
        with pytest.raises(ValueError, match=message):
            svm_train(kernel, [[0.1, 0.1], [0.5, 0.5]], labels)

    def test_rejects_non_positive_c(self, kernel):
        with pytest.raises(ValueError, match="C must be positive"):
            svm_train(kernel, [[0.1, 0.1], [0.5, 0.5]], [1.0, -1.0], C=0.0)


class TestThresholdDataset:
    def test_balanced_labels(self, sampler, p1_ctx):
        points, labels = threshold_dataset(sampler, p1_ctx, 60, seed=1)
        assert points.shape == (60, 2)
        assert set(np.unique(labels)) == {-1.0, 1.0}
        assert 15 <= np.sum(labels > 0) <= 45

    def test_margin_too_large(self, sampler, p1_ctx):
        with pytest.raises(ValueError, match="margin too large"):
            threshold_dataset(sampler, p1_ctx, 60, margin=100.0)


class TestMLP:
    def test_layer_shapes(self):
        weights = init_mlp_weights(4, seed=0)
        shapes = [matrix.shape for matrix, _ in weights]
        assert shapes == [(4, 10), (10, 10), (10, 10), (10, 1)]

    def test_invariant_output(self, p1_embedding, p1_ctx):
        weights = init_mlp_weights(p1_embedding.dimension, seed=1)
        x = np.array([[0.15, 0.85], [0.5, 0.25]])
        for phi in p1_ctx.local_group.elements[:6]:
            np.testing.assert_allclose(
                mlp_forward(p1_embedding, weights, phi(x)),
                mlp_forward(p1_embedding, weights, x),
                atol=1e-9,
            )

    def test_scalar_for_single_point(self, p1_embedding):
        weights = init_mlp_weights(p1_embedding.dimension, seed=1)
        assert isinstance(
            mlp_forward(p1_embedding, weights, [0.3, 0.3]), float
        )

    def test_rejects_wrong_input_size(self, p1_embedding):
        weights = init_mlp_weights(p1_embedding.dimension + 1, seed=1)
        with pytest.raises(ValueError, match="wrong input size"):
            mlp_forward(p1_embedding, weights, [0.3, 0.3])

    def test_rejects_several_outputs(self, p1_embedding):
        weights = [
            (np.ones((p1_embedding.dimension, 2)), np.zeros(2)),
        ]
        with pytest.raises(ValueError, match="single output"):
            mlp_forward(p1_embedding, weights, [0.3, 0.3])


def test_distributional_params(p1_embedding, p1_ctx):
    mean, covariance = gp_distributional_params(
        p1_embedding, lambda z: z[:, 0], rbf_base_kernel(0.5)
    )
    x, y = np.array([0.2, 0.6]), np.array([0.9, 0.1])
    shift = p1_ctx.local_group[3]
    assert mean(shift(x)) == pytest.approx(mean(x), abs=1e-9)
    assert covariance(x, shift(y)) == pytest.approx(covariance(x, y), abs=1e-9)
    assert covariance(x, x) == pytest.approx(1.0)
    assert mean(np.stack([x, y])).shape == (2,)
