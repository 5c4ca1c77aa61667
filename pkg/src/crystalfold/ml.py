"""Kernels, Gaussian-process samples, SVMs and MLPs that factor through
an orbifold embedding and are therefore invariant under the group."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .config import (
    MLP_HIDDEN,
    SMO_MAX_PASSES,
    SMO_TOL,
    make_rng,
    spawn_rngs,
)
from .polytope import sample_points

logger = logging.getLogger(__name__)

BASE_KERNELS = ("rbf",)


def rbf_base_kernel(lengthscale):
    """RBF kernel on embedding space, evaluated between row sets."""
    if lengthscale <= 0:
        logger.error(f"Non-positive lengthscale {lengthscale}")
        raise ValueError(f"lengthscale must be positive, got {lengthscale}")

    def kernel(a, b):
        squared = cdist(np.atleast_2d(a), np.atleast_2d(b), "sqeuclidean")
        return np.exp(-squared / (2.0 * lengthscale**2))

    return kernel


class InvariantKernel:
    """A base kernel pulled back through the embedding map rho."""

    def __init__(self, embedding, lengthscale, base="rbf"):
        if base not in BASE_KERNELS:
            logger.error(f"Unknown base kernel {base!r}")
            raise ValueError(
                f"Unknown base kernel {base!r}; choose from {BASE_KERNELS}"
            )
        self.embedding = embedding
        self.lengthscale = float(lengthscale)
        self.base = base
        self.base_kernel = rbf_base_kernel(self.lengthscale)

    def __call__(self, x, y):
        return kernel_eval(self, x, y)

    def cross(self, x, y):
        """Kernel matrix between two point sets."""
        return self.base_kernel(
            self.embedding.rho(np.atleast_2d(x)),
            self.embedding.rho(np.atleast_2d(y)),
        )


def kernel_eval(kernel, x, y):
    return float(kernel.cross(x, y)[0, 0])


def gram(kernel, points):
    """Symmetric Gram matrix of a point set."""
    matrix = kernel.cross(points, points)
    return (matrix + matrix.T) / 2.0


@dataclass(frozen=True, eq=False)
class GPSampler:
    """Random-feature sample of an invariant Gaussian process.

    ``F(x) = sqrt(2 / m) * sum_j w_j cos(omega_j . rho(x) + b_j)``.
    """

    embedding: object
    lengthscale: float
    features: int
    frequencies: np.ndarray
    phases: np.ndarray
    weights: np.ndarray
    seed: int

    @classmethod
    def from_seed(cls, embedding, lengthscale, features=1024, seed=0):
        if lengthscale <= 0 or features < 1:
            logger.error(
                f"Invalid sampler settings: lengthscale={lengthscale}, "
                f"features={features}"
            )
            raise ValueError("lengthscale and features must be positive")
        frequency_rng, phase_rng, weight_rng = spawn_rngs(seed, 3)
        frequencies = frequency_rng.normal(
            0.0, 1.0 / lengthscale, size=(features, embedding.dimension)
        )
        phases = phase_rng.uniform(0.0, 2.0 * np.pi, size=features)
        weights = weight_rng.standard_normal(features)
        return cls(
            embedding,
            float(lengthscale),
            int(features),
            frequencies,
            phases,
            weights,
            int(seed),
        )

    def feature_map(self, x):
        z = self.embedding.rho(np.atleast_2d(x))
        return np.sqrt(2.0 / self.features) * np.cos(
            z @ self.frequencies.T + self.phases
        )

    def __call__(self, x):
        return self.feature_map(x) @ self.weights


def gp_sample(sampler, x):
    return float(sampler(np.asarray(x, dtype=float)[None, :])[0])


def gp_sample_grid(sampler, points):
    return sampler(points)


def approximate_kernel(sampler, x, y):
    """Random-feature estimate of the kernel between two point sets."""
    return sampler.feature_map(x) @ sampler.feature_map(y).T


@dataclass(frozen=True, eq=False)
class SVMModel:
    """Soft-margin kernel SVM; ``coefficients`` are alpha_i * y_i."""

    points: np.ndarray
    labels: np.ndarray
    alphas: np.ndarray
    bias: float
    C: float
    kernel: InvariantKernel
    gram: np.ndarray
    converged: bool

    @property
    def coefficients(self):
        return self.alphas * self.labels

    @property
    def support(self):
        return np.flatnonzero(self.alphas > 1e-12)


def _select_pair(yg, beta, lower, upper):
    up = beta < upper - 1e-12
    low = beta > lower + 1e-12
    i = np.flatnonzero(up)[np.argmax(yg[up])]
    j = np.flatnonzero(low)[np.argmin(yg[low])]
    return i, j, yg[i] - yg[j]


def svm_train(kernel, points, labels, C=1.0, tol=SMO_TOL, max_passes=None):
    """Trains an SVM by SMO with maximal-violating-pair selection.

    Args:
        kernel: The invariant kernel.
        points: Training points, one per row.
        labels: Labels in {-1, +1}.
        C: Box constraint.
        tol: KKT violation tolerance.
        max_passes: Iteration cap; the returned model is flagged
            ``converged=False`` when it is reached.

    Returns:
        An SVMModel.

    Raises:
        ValueError: On bad labels, a single class, or non-positive C.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    labels = np.asarray(labels, dtype=float).ravel()
    max_passes = SMO_MAX_PASSES if max_passes is None else max_passes
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        logger.error("SVM labels must be -1 or +1")
        raise ValueError("SVM labels must be -1 or +1")
    if len(np.unique(labels)) < 2:
        logger.error("SVM training data has a single class")
        raise ValueError("SVM training needs both classes")
    if C <= 0:
        logger.error(f"Non-positive C {C}")
        raise ValueError(f"C must be positive, got {C}")
    if len(points) != len(labels):
        logger.error(f"{len(points)} points but {len(labels)} labels")
        raise ValueError("points and labels differ in length")

    K = gram(kernel, points)
    lower = np.minimum(0.0, labels * C)
    upper = np.maximum(0.0, labels * C)
    beta = np.zeros(len(labels))
    yg = labels.copy()
    converged = False
    for _ in range(max_passes):
        i, j, gap = _select_pair(yg, beta, lower, upper)
        if gap <= tol:
            converged = True
            break
        curvature = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        step = min(upper[i] - beta[i], beta[j] - lower[j], gap / curvature)
        beta[i] += step
        beta[j] -= step
        yg -= step * (K[:, i] - K[:, j])
    if not converged:
        logger.warning(
            f"SMO stopped after {max_passes} iterations with KKT gap "
            f"{gap:.2e}"
        )

    free = (beta > lower + 1e-12) & (beta < upper - 1e-12)
    if np.any(free):
        bias = float(np.mean(yg[free]))
    else:
        i, j, _ = _select_pair(yg, beta, lower, upper)
        bias = float((yg[i] + yg[j]) / 2.0)
    alphas = np.abs(beta)
    logger.info(
        f"SVM trained on {len(labels)} points: "
        f"{int(np.sum(alphas > 1e-12))} support vectors, bias {bias:.4f}, "
        f"converged={converged}"
    )
    return SVMModel(
        points, labels, alphas, bias, float(C), kernel, K, converged
    )


def svm_predict(model, x):
    """Decision values; a scalar for a single point."""
    x = np.asarray(x, dtype=float)
    support = model.support
    values = (
        model.coefficients[support]
        @ model.kernel.cross(model.points[support], np.atleast_2d(x))
        + model.bias
    )
    return float(values[0]) if x.ndim == 1 else values


def svm_dual_objective(model):
    """``sum(alpha) - 1/2 beta' K beta`` with ``beta = alpha * y``."""
    beta = model.coefficients
    return float(np.sum(model.alphas) - 0.5 * beta @ model.gram @ beta)


def threshold_dataset(sampler, ctx, count, seed=0, margin=0.0):
    """Labelled points from a thresholded GP sample.

    Points are uniform in the polytope; labels are the sign of the sample
    minus its median. Points within ``margin`` standard deviations of the
    threshold are dropped.

    Returns:
        A tuple ``(points, labels)``.
    """
    rng = make_rng(seed)
    pool = sample_points(ctx.polytope, max(4 * count, 64), rng)
    values = sampler(pool)
    centre = float(np.median(values))
    spread = float(np.std(values))
    keep = np.abs(values - centre) >= margin * spread
    points, values = pool[keep][:count], values[keep][:count]
    if len(points) < count:
        logger.error(
            f"Only {len(points)} of {count} points clear margin {margin}"
        )
        raise ValueError("margin too large for the requested point count")
    labels = np.where(values > centre, 1.0, -1.0)
    return points, labels


def init_mlp_weights(dimension, seed=0, hidden=MLP_HIDDEN):
    """He-initialised layers ``(W, b)`` for ``dimension -> hidden -> 1``."""
    rng = make_rng(seed)
    sizes = (int(dimension),) + tuple(hidden) + (1,)
    return [
        (
            rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)),
            np.zeros(fan_out),
        )
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
    ]


def mlp_forward(embedding, weights, x):
    """ReLU network evaluated on rho(x).

    Raises:
        ValueError: If the layer shapes do not chain from the embedding
            dimension to a single output.
    """
    expected = embedding.dimension
    for index, (matrix, bias) in enumerate(weights):
        matrix, bias = np.asarray(matrix), np.asarray(bias)
        if matrix.ndim != 2 or matrix.shape[0] != expected:
            logger.error(
                f"Layer {index} has shape {matrix.shape}, expected input "
                f"{expected}"
            )
            raise ValueError(f"Layer {index} has the wrong input size")
        if bias.shape != (matrix.shape[1],):
            logger.error(f"Layer {index} bias has shape {bias.shape}")
            raise ValueError(f"Layer {index} bias has the wrong size")
        expected = matrix.shape[1]
    if expected != 1:
        logger.error(f"Network ends with {expected} outputs")
        raise ValueError("Network must end with a single output")

    x = np.asarray(x, dtype=float)
    hidden = embedding.rho(np.atleast_2d(x))
    for matrix, bias in weights[:-1]:
        hidden = np.maximum(hidden @ matrix + bias, 0.0)
    matrix, bias = weights[-1]
    output = (hidden @ matrix + bias)[:, 0]
    return float(output[0]) if x.ndim == 1 else output


def gp_distributional_params(embedding, mean, base_kernel):
    """Mean and covariance on R^n of a GP pulled back through rho.

    Args:
        embedding: The orbifold embedding.
        mean: Callable on rows of embedding space.
        base_kernel: Callable ``(A, B) -> matrix`` on embedding space.

    Returns:
        A tuple ``(mean_fn, kernel_fn)`` of invariant callables on R^n.
    """

    def pulled_mean(x):
        x = np.asarray(x, dtype=float)
        values = np.asarray(mean(embedding.rho(np.atleast_2d(x))), float)
        values = np.broadcast_to(values, (len(np.atleast_2d(x)),))
        return float(values[0]) if x.ndim == 1 else values.copy()

    def pulled_kernel(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        matrix = base_kernel(
            embedding.rho(np.atleast_2d(x)), embedding.rho(np.atleast_2d(y))
        )
        return float(matrix[0, 0]) if x.ndim == y.ndim == 1 else matrix

    return pulled_mean, pulled_kernel
