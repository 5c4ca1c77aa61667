import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
from numpy.polynomial.legendre import leggauss
from scipy.sparse import coo_matrix, diags, identity
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from scipy.spatial import cKDTree

from .config import (
    CHECK_RESOLUTION,
    CLUSTER_GAP,
    DENSE_EIGEN_LIMIT,
    FD_STEP_FACTOR,
    GALERKIN_CENTERS,
    GALERKIN_REGULARIZER,
    KEY_DECIMALS,
    QUADRATURE_RESOLUTION,
    max_workers,
)
from .interpolation import NetInterpolator
from .orbitgraph import build_net, zero_distance_clusters
from .polytope import diameter, quadrature_grid, raster, volume
from .quotient import project_many

logger = logging.getLogger(__name__)

SHIFT_INVERT_SIGMA = -1e-4


def laplacian(graph, epsilon=None):
    """Random-walk Laplacian ``I - D^-1 W`` of an orbit graph.

    Edge weights are ``exp(-d^2 / (2 epsilon^2))``.

    Returns:
        A tuple ``(L, W)`` of sparse matrices.

    Raises:
        ValueError: If some vertex has no edges.
    """
    epsilon = graph.epsilon if epsilon is None else epsilon
    size = len(graph.vertices)
    kernel = np.exp(-(graph.weights**2) / (2.0 * epsilon**2))
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    weights = coo_matrix(
        (np.r_[kernel, kernel], (np.r_[i, j], np.r_[j, i])),
        shape=(size, size),
    ).tocsr()
    degrees = np.asarray(weights.sum(axis=1)).ravel()
    if np.any(degrees <= 0):
        isolated = np.flatnonzero(degrees <= 0)
        logger.error(f"Vertices {isolated[:10].tolist()} have no edges")
        raise ValueError(f"Orbit graph has {len(isolated)} isolated vertices")
    walk = diags(1.0 / degrees) @ weights
    return identity(size, format="csr") - walk, weights


def eigen_clusters(values, gap=CLUSTER_GAP):
    """Groups indices of sorted eigenvalues whose relative gap is small."""
    values = np.asarray(values, dtype=float)
    clusters = [[0]] if len(values) else []
    for index in range(1, len(values)):
        previous, current = values[index - 1], values[index]
        scale = max(abs(current), abs(previous), 1e-12)
        if previous > 1e-9 * scale and (current - previous) / scale < gap:
            clusters[-1].append(index)
        else:
            clusters.append([index])
    return clusters


def _fix_signs(vectors):
    """Flips columns so that their largest-magnitude entry is positive."""
    rows = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[rows, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return signs


@dataclass(frozen=True)
class GalerkinConfig:
    """Trial space and quadrature of the Galerkin eigen-solver."""

    centers: np.ndarray
    embedded_centers: np.ndarray
    width: float
    nodes: np.ndarray
    weights: np.ndarray
    step: float

    def __post_init__(self):
        if np.any(np.asarray(self.weights) <= 0):
            logger.error("Quadrature weights must be positive")
            raise ValueError("Quadrature weights must be positive")
        if self.width <= 0:
            logger.error(f"Non-positive RBF width {self.width}")
            raise ValueError(f"RBF width must be positive, got {self.width}")

    @classmethod
    def default(cls, ctx, embedding, count=GALERKIN_CENTERS, resolution=None):
        """Centers on a net with at least ``count`` distinct orbits."""
        n = ctx.dimension
        vol = volume(ctx.polytope)
        spacing = (vol / count) ** (1.0 / n) * np.sqrt(n)
        while True:
            centers = build_net(ctx.polytope, spacing)
            reduced = project_many(ctx, centers)
            _, unique = np.unique(
                np.round(reduced, KEY_DECIMALS) + 0.0,
                axis=0,
                return_index=True,
            )
            if len(unique) >= count:
                centers = centers[np.sort(unique)]
                break
            spacing *= 0.95
        embedded = embedding.smooth_rho(centers)
        distances, _ = cKDTree(embedded).query(embedded, k=2)
        width = float(np.median(distances[:, 1]))
        nodes, weights = quadrature_grid(
            ctx.polytope, resolution or QUADRATURE_RESOLUTION[n]
        )
        logger.info(
            f"Galerkin trial space: {len(centers)} centers, width "
            f"{width:.4f}, {len(nodes)} quadrature nodes"
        )
        return cls(
            centers,
            embedded,
            width,
            nodes,
            weights,
            FD_STEP_FACTOR * diameter(ctx.polytope),
        )


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Invariant eigenfunctions of the Laplacian, ascending eigenvalues.

    For ``method="spectral"`` ``vectors`` holds values per graph vertex;
    for ``method="galerkin"`` it holds coefficients over the trial
    functions, the constant function first.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    method: str
    context: object
    clusters: list = field(default_factory=list)
    raw_eigenvalues: np.ndarray = None
    scale: float = 1.0
    calibration: float = 1.0
    graph: object = None
    config: GalerkinConfig = None
    embedding: object = None

    def __len__(self):
        return len(self.eigenvalues)

    @cached_property
    def interpolator(self):
        return NetInterpolator(
            self.context,
            self.graph.vertices[: self.graph.n_base],
            self.graph.epsilon / np.sqrt(self.context.dimension),
        )

    def evaluate(self, x):
        """All basis functions at the rows of x, shape (m, k)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.method == "spectral":
            return self.interpolator.idw(
                x, self.vectors[: self.graph.n_base]
            )
        return trial_functions(self.config, self.embedding, x) @ self.vectors

    def to_dict(self):
        data = {
            "group": self.context.group.name,
            "method": self.method,
            "eigenvalues": self.eigenvalues.tolist(),
            "raw_eigenvalues": (
                None
                if self.raw_eigenvalues is None
                else self.raw_eigenvalues.tolist()
            ),
            "scale": float(self.scale),
            "calibration": float(self.calibration),
            "clusters": [list(map(int, c)) for c in self.clusters],
            "vectors": self.vectors.tolist(),
        }
        if self.graph is not None:
            data["graph"] = self.graph.to_dict()
        if self.config is not None:
            data["galerkin"] = {
                "centers": self.config.centers.tolist(),
                "embedded_centers": self.config.embedded_centers.tolist(),
                "width": self.config.width,
                "nodes": self.config.nodes.tolist(),
                "weights": self.config.weights.tolist(),
                "step": self.config.step,
            }
        return data


def evaluate(basis, x):
    return basis.evaluate(x)


def interpolate(ctx, basis, i, x):
    """Value of basis function ``i`` (0-based) at a single point."""
    if not 0 <= i < len(basis):
        logger.error(f"Basis index {i} out of range 0..{len(basis) - 1}")
        raise ValueError(f"Basis index {i} out of range")
    return float(basis.evaluate(np.asarray(x, dtype=float)[None, :])[0, i])


def _solve_symmetric(matrix, k):
    size = matrix.shape[0]
    if size <= DENSE_EIGEN_LIMIT:
        values, vectors = scipy.linalg.eigh(
            matrix.toarray(), subset_by_index=[0, k - 1]
        )
        return values, vectors
    try:
        values, vectors = eigsh(
            matrix, k=k, sigma=SHIFT_INVERT_SIGMA, which="LM"
        )
    except ArpackNoConvergence as error:
        logger.error(f"Lanczos solve did not converge: {error}")
        raise RuntimeError("Eigen-solver failed to converge")
    order = np.argsort(values)
    return values[order], vectors[:, order]


def eigenbasis_spectral(ctx, graph, k):
    """Laplacian eigenbasis of an orbit graph.

    Vertices at quotient distance zero, and constraint pairs, are merged
    before the solve. Eigenvalues are rescaled by ``2 / epsilon`` times a
    calibration factor matching the random walk's diffusion constant;
    eigenvectors are orthonormal for degree-proportional quadrature
    weights summing to the polytope volume.

    Raises:
        ValueError: If k exceeds the number of distinct vertices.
    """
    labels = zero_distance_clusters(graph)
    merged = int(labels.max()) + 1
    if not 1 <= k <= merged:
        logger.error(f"Requested {k} eigenpairs of a {merged}-vertex graph")
        raise ValueError(f"k must be in 1..{merged}, got {k}")
    _, weights = laplacian(graph)

    sizes = np.bincount(labels, minlength=merged).astype(float)
    averaging = coo_matrix(
        (1.0 / sizes[labels], (np.arange(len(labels)), labels)),
        shape=(len(labels), merged),
    ).tocsr()
    merged_weights = (averaging.T @ weights @ averaging).tolil()
    merged_weights.setdiag(0.0)
    merged_weights = merged_weights.tocsr()
    degrees = np.asarray(merged_weights.sum(axis=1)).ravel()
    if np.any(degrees <= 0):
        logger.error("Merged orbit graph has isolated vertices")
        raise ValueError("Merged orbit graph has isolated vertices")
    inv_sqrt = diags(1.0 / np.sqrt(degrees))
    normalised = inv_sqrt @ merged_weights @ inv_sqrt
    symmetric = identity(merged, format="csr") - normalised
    logger.info(
        f"Solving for {k} eigenpairs on {merged} merged vertices "
        f"({len(graph.vertices)} graph vertices)"
    )
    raw, vectors = _solve_symmetric(symmetric, k)
    raw = np.maximum(raw, 0.0)

    # Weighted second moment of edge lengths between distinct clusters.
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    distinct = labels[i] != labels[j]
    kernel = np.exp(-(graph.weights**2) / (2.0 * graph.epsilon**2))
    moment = np.sum(kernel[distinct] * graph.weights[distinct] ** 2) / np.sum(
        kernel[distinct]
    )
    n = ctx.dimension
    scale = 2.0 / graph.epsilon
    calibration = n * graph.epsilon / moment

    values = vectors / np.sqrt(degrees)[:, None]
    values *= np.sqrt(degrees.sum() / volume(ctx.polytope))
    values *= _fix_signs(values)
    eigenvalues = scale * calibration * raw
    clusters = eigen_clusters(eigenvalues)
    logger.info(
        f"Spectral eigenvalues for {ctx.group.name}: "
        f"{np.round(eigenvalues[: min(k, 8)], 3).tolist()}"
    )
    return EigenBasis(
        eigenvalues,
        values[labels],
        "spectral",
        ctx,
        clusters,
        raw,
        scale,
        calibration,
        graph=graph,
    )


def trial_functions(config, embedding, x):
    """Constant plus Gaussian bumps in embedding space, shape (m, 1 + c)."""
    embedded = embedding.smooth_rho(x)
    squared = (
        np.sum(embedded**2, axis=1)[:, None]
        - 2.0 * embedded @ config.embedded_centers.T
        + np.sum(config.embedded_centers**2, axis=1)[None, :]
    )
    bumps = np.exp(-np.maximum(squared, 0.0) / (2.0 * config.width**2))
    return np.column_stack([np.ones(len(x)), bumps])


def _trial_gradients(config, embedding, nodes):
    """Central finite-difference gradients, one (q, m) block per axis."""
    n = nodes.shape[1]
    shifts = [
        sign * config.step * np.eye(n)[axis]
        for axis in range(n)
        for sign in (1.0, -1.0)
    ]
    def evaluate(shift):
        return trial_functions(config, embedding, nodes + shift)

    with ThreadPoolExecutor(max_workers=max_workers()) as executor:
        values = list(executor.map(evaluate, shifts))
    return [
        (values[2 * axis] - values[2 * axis + 1]) / (2.0 * config.step)
        for axis in range(n)
    ]


def eigenbasis_galerkin(ctx, embedding, config=None, k=10):
    """Galerkin eigenbasis from the generalized problem ``A c = lambda B c``.

    Args:
        ctx: The quotient context.
        embedding: Orbifold embedding supplying the smooth map rho.
        config: Trial space and quadrature; defaults to
            ``GalerkinConfig.default``.
        k: Number of eigenpairs.

    Returns:
        An EigenBasis with ``method="galerkin"``.

    Raises:
        ValueError: On dimension mismatches, too small a trial space, or a
            numerically singular mass matrix.
    """
    if config is None:
        config = GalerkinConfig.default(ctx, embedding)
    if config.embedded_centers.shape[1] != embedding.dimension:
        logger.error(
            f"Centers live in {config.embedded_centers.shape[1]} dimensions, "
            f"embedding in {embedding.dimension}"
        )
        raise ValueError("Galerkin centers do not match the embedding")
    if config.nodes.shape[1] != ctx.dimension:
        logger.error("Quadrature nodes do not match the group dimension")
        raise ValueError("Quadrature nodes do not match the group dimension")
    size = len(config.centers) + 1
    if not 1 <= k <= size:
        logger.error(f"Requested {k} eigenpairs from {size} trial functions")
        raise ValueError(f"k must be in 1..{size}, got {k}")

    chi = trial_functions(config, embedding, config.nodes)
    gradients = _trial_gradients(config, embedding, config.nodes)
    w = config.weights[:, None]
    stiffness = sum(g.T @ (w * g) for g in gradients)
    mass = chi.T @ (w * chi) + GALERKIN_REGULARIZER * np.eye(size)
    stiffness = (stiffness + stiffness.T) / 2.0
    mass = (mass + mass.T) / 2.0
    try:
        values, coeffs = scipy.linalg.eigh(
            stiffness, mass, subset_by_index=[0, k - 1]
        )
    except np.linalg.LinAlgError as error:
        logger.error(f"Galerkin mass matrix is singular: {error}")
        raise ValueError(f"Galerkin mass matrix is singular: {error}")
    values = np.maximum(values, 0.0)
    coeffs *= _fix_signs(chi @ coeffs)
    logger.info(
        f"Galerkin eigenvalues for {ctx.group.name}: "
        f"{np.round(values[: min(k, 8)], 3).tolist()}"
    )
    return EigenBasis(
        values,
        coeffs,
        "galerkin",
        ctx,
        eigen_clusters(values),
        values.copy(),
        config=config,
        embedding=embedding,
    )


def _facet_rules(ctx, order):
    """Quadrature nodes, weights and outward normals on every facet."""
    polytope = ctx.polytope
    n = polytope.dimension
    rules = []
    for index, vertex_ids in enumerate(polytope.facet_vertices):
        normal = polytope.normals[index]
        corners = polytope.vertices[list(vertex_ids)]
        if n == 1:
            rules.append((corners, np.ones(1), normal))
            continue
        t, w = leggauss(order)
        if n == 2:
            a, b = corners[0], corners[-1]
            u = (t + 1.0) / 2.0
            nodes = a + u[:, None] * (b - a)
            rules.append((nodes, w * np.linalg.norm(b - a) / 2.0, normal))
            continue
        # Order the facet polygon around its centre, then fan it.
        centre = corners.mean(axis=0)
        axis_u = corners[0] - centre
        axis_u /= np.linalg.norm(axis_u)
        axis_v = np.cross(normal, axis_u)
        rel = corners - centre
        ring = corners[np.argsort(np.arctan2(rel @ axis_v, rel @ axis_u))]
        u = (t + 1.0) / 2.0
        uu, vv = np.meshgrid(u, u, indexing="ij")
        ww = np.outer(w, w) / 4.0
        for b, c in zip(ring[1:-1], ring[2:]):
            a = ring[0]
            area2 = np.linalg.norm(np.cross(b - a, c - a))
            nodes = (
                a
                + uu.ravel()[:, None] * (b - a)
                + (uu * vv).ravel()[:, None] * (c - b)
            )
            rules.append((nodes, (ww * uu).ravel() * area2, normal))
    return rules


def boundary_integrals(ctx, vector_field, order=16):
    """Flux of a vector field through the polytope boundary.

    Returns:
        A tuple ``(flux, total)`` where ``total`` integrates ``|F|`` over
        the boundary and serves as a scale for the flux.
    """
    flux, total = 0.0, 0.0
    for nodes, weights, normal in _facet_rules(ctx, order):
        values = np.atleast_2d(vector_field(nodes))
        flux += float(np.sum(weights * (values @ normal)))
        total += float(np.sum(weights * np.linalg.norm(values, axis=1)))
    return flux, total


def boundary_flux(ctx, vector_field, order=16):
    return boundary_integrals(ctx, vector_field, order)[0]


def _central_gradient(function, nodes, step):
    n = nodes.shape[1]
    return np.stack(
        [
            (function(nodes + step * e) - function(nodes - step * e))
            / (2.0 * step)
            for e in np.eye(n)
        ],
        axis=1,
    )


def energy_form(ctx, f, h, resolution=None, step=None):
    """Integral over the polytope of the dot product of two gradients."""
    n = ctx.dimension
    nodes, weights = quadrature_grid(
        ctx.polytope, resolution or QUADRATURE_RESOLUTION[n]
    )
    step = step or FD_STEP_FACTOR * diameter(ctx.polytope)
    grad_f = _central_gradient(f, nodes, step)
    grad_h = _central_gradient(h, nodes, step)
    return float(np.sum(weights * np.einsum("qi,qi->q", grad_f, grad_h)))


def orthonormality_check(ctx, basis, resolution=None):
    """Largest deviation of the quadrature Gram matrix from the identity."""
    nodes, weights = quadrature_grid(
        ctx.polytope, resolution or CHECK_RESOLUTION[ctx.dimension]
    )
    values = basis.evaluate(nodes)
    gram = values.T @ (weights[:, None] * values)
    deviation = float(np.max(np.abs(gram - np.eye(len(basis)))))
    logger.info(
        f"Orthonormality deviation of {basis.method} basis: {deviation:.2e}"
    )
    return deviation


def raster_points(ctx, resolution):
    """Raster of the polytope on which basis functions are exported."""
    return raster(ctx.polytope, resolution)


def basis_raster(basis, resolution):
    """Raster points and the values of every basis function on them."""
    points = raster_points(basis.context, resolution)
    return points, basis.evaluate(points)
