import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import dijkstra
from scipy.sparse.linalg import eigsh
from scipy.spatial.distance import pdist, squareform

from .config import (
    DENSE_EIGEN_LIMIT,
    ISOMETRY_TOL,
    MAX_EMBED_DIM,
    STRESS_TOL,
    TINY_WEIGHT,
    max_workers,
)
from .interpolation import NetInterpolator
from .orbitgraph import (
    OrbitGraph,
    build_orbit_graph,
    mirror_augment,
    mirror_reflections,
    zero_distance_clusters,
)
from .quotient import build_context

logger = logging.getLogger(__name__)

SOURCE_CHUNK = 256


def geodesic_distances(graph):
    """Squared shortest-path lengths between all pairs of graph vertices.

    Raises:
        ValueError: If the graph is disconnected.
    """
    adjacency = graph.adjacency()
    size = adjacency.shape[0]
    chunks = [
        np.arange(start, min(start + SOURCE_CHUNK, size))
        for start in range(0, size, SOURCE_CHUNK)
    ]
    with ThreadPoolExecutor(max_workers=max_workers()) as executor:
        rows = list(
            executor.map(
                lambda sources: dijkstra(
                    adjacency, directed=False, indices=sources
                ),
                chunks,
            )
        )
    distances = np.vstack(rows)
    if not np.all(np.isfinite(distances)):
        logger.error("Geodesic distances are infinite: graph disconnected")
        raise ValueError("Orbit graph is disconnected")
    squared = distances**2
    squared = (squared + squared.T) / 2.0
    np.fill_diagonal(squared, 0.0)
    logger.info(f"Computed geodesic distances between {size} vertices")
    return squared


@dataclass(frozen=True)
class MDSResult:
    coordinates: np.ndarray
    dimension: int
    eigenvalues: np.ndarray
    strain: float
    strains: np.ndarray


def _double_center(squared):
    row = squared.mean(axis=0)
    return -0.5 * (squared - row[None, :] - row[:, None] + row.mean())


def _spectrum(centered, count):
    """Descending eigenpairs and the total positive eigenvalue energy."""
    size = len(centered)
    if size <= DENSE_EIGEN_LIMIT:
        values, vectors = scipy.linalg.eigh(centered)
        order = np.argsort(values)[::-1]
        values, vectors = values[order], vectors[:, order]
        positive = values[values > 0]
        return values, vectors, float(np.sum(positive**2))
    top, vectors = eigsh(centered, k=count, which="LA")
    order = np.argsort(top)[::-1]
    bottom = eigsh(centered, k=count, which="SA", return_eigenvectors=False)
    negative = bottom[bottom < 0]
    # The Frobenius norm carries the whole spectrum.
    energy = float(np.sum(centered**2) - np.sum(negative**2))
    logger.info(
        f"Positive eigenvalue energy estimated from {count} extreme pairs"
    )
    return top[order], vectors[:, order], energy


def classical_mds(
    squared, max_dim=MAX_EMBED_DIM, stress_tol=STRESS_TOL, min_dim=1
):
    """Classical multidimensional scaling of squared distances.

    The dimension is the smallest ``N >= min_dim`` whose strain, the share
    of positive eigenvalue energy left in coordinates beyond ``N``, is at
    most ``stress_tol``; it is capped at ``max_dim``.

    Args:
        squared: Symmetric matrix of squared distances, zero diagonal.
        max_dim: Largest dimension considered.
        stress_tol: Strain threshold.
        min_dim: Smallest dimension considered.

    Returns:
        An MDSResult with coordinates ``sqrt(delta_j) v_j``.

    Raises:
        ValueError: If the matrix is not square or has no positive
            eigenvalue.
    """
    squared = np.asarray(squared, dtype=float)
    if squared.ndim != 2 or squared.shape[0] != squared.shape[1]:
        logger.error(f"Distance matrix has shape {squared.shape}")
        raise ValueError("Distance matrix must be square")
    centered = _double_center(squared)
    values, vectors, energy = _spectrum(
        centered, min(max_dim + 10, len(squared) - 1)
    )
    positive = int(np.sum(values > 0))
    if positive == 0 or energy <= 0:
        logger.error("Double-centred matrix has no positive eigenvalue")
        raise ValueError("MDS input is degenerate: no positive eigenvalues")
    captured = np.cumsum(np.where(values > 0, values, 0.0) ** 2)
    strains = np.clip(1.0 - captured / energy, 0.0, 1.0)
    limit = min(max_dim, positive)
    dimension = limit
    for candidate in range(max(1, min_dim), limit + 1):
        if strains[candidate - 1] <= stress_tol:
            dimension = candidate
            break
    else:
        logger.warning(
            f"MDS strain {strains[limit - 1]:.4f} above {stress_tol} at the "
            f"cap of {limit} dimensions"
        )
    coordinates = vectors[:, :dimension] * np.sqrt(values[:dimension])
    logger.info(
        f"MDS on {len(squared)} points: dimension {dimension}, strain "
        f"{strains[dimension - 1]:.4f}"
    )
    return MDSResult(
        coordinates,
        dimension,
        values,
        float(strains[dimension - 1]),
        strains[:limit],
    )


def distance_stress(coordinates, squared):
    """Relative Frobenius error of chordal against given distances."""
    chordal = squareform(pdist(coordinates))
    target = np.sqrt(np.maximum(squared, 0.0))
    return float(np.linalg.norm(chordal - target) / np.linalg.norm(target))


def dimension_bound(ctx, graph):
    """The range ``(n, 2 (n + max |Stab|))`` for the embedding dimension."""
    n = ctx.dimension
    base = graph.vertices[: graph.n_base]
    moved = np.linalg.norm(ctx.local_group.images(base) - base, axis=-1)
    largest = int(np.max(np.sum(moved <= ISOMETRY_TOL, axis=0)))
    return n, 2 * (n + largest)


def _zero_pairs(graph):
    zero = graph.edges[graph.weights <= TINY_WEIGHT]
    return np.concatenate([zero, graph.constraint_pairs])


@dataclass(frozen=True, eq=False)
class Embedding:
    """Orbifold embedding of a quotient space.

    ``coordinates`` has one row per graph vertex, mirror twins included;
    ``stress`` is the selection strain of the MDS dimension.
    """

    context: object
    graph: OrbitGraph
    coordinates: np.ndarray
    dimension: int
    mds_eigenvalues: np.ndarray
    stress: float
    gluing_residual: float
    epsilon: float

    @cached_property
    def vertex_coordinates(self):
        """Coordinates per base vertex, averaged over zero-distance twins."""
        labels = zero_distance_clusters(self.graph)
        sums = np.zeros((labels.max() + 1, self.dimension))
        np.add.at(sums, labels, self.coordinates)
        counts = np.bincount(labels)[:, None]
        return (sums / counts)[labels[: self.graph.n_base]]

    @cached_property
    def interpolator(self):
        return NetInterpolator(
            self.context,
            self.graph.vertices[: self.graph.n_base],
            self.epsilon / np.sqrt(self.context.dimension),
        )

    def rho(self, x):
        """Embedded coordinates of points, by invariant IDW."""
        x = np.asarray(x, dtype=float)
        values = self.interpolator.idw(
            np.atleast_2d(x), self.vertex_coordinates
        )
        return values[0] if x.ndim == 1 else values

    def smooth_rho(self, x):
        """Embedded coordinates by moving least squares; smooth in x."""
        x = np.asarray(x, dtype=float)
        values = self.interpolator.mls(
            np.atleast_2d(x), self.vertex_coordinates
        )
        return values[0] if x.ndim == 1 else values

    def to_dict(self):
        return {
            "group": self.context.group.name,
            "dimension": int(self.dimension),
            "coordinates": self.coordinates.tolist(),
            "mds_eigenvalues": self.mds_eigenvalues.tolist(),
            "stress": float(self.stress),
            "gluing_residual": float(self.gluing_residual),
            "epsilon": float(self.epsilon),
            "polytope": self.context.polytope.to_dict(),
            "rebased": bool(self.context.rebased),
            "graph": self.graph.to_dict(),
        }


def build_embedding(
    ctx,
    epsilon,
    delta=None,
    stress_tol=STRESS_TOL,
    max_dim=MAX_EMBED_DIM,
    allow_inexact=False,
):
    """Embeds the quotient space by classical MDS of graph geodesics.

    Args:
        ctx: The quotient context.
        epsilon: Net covering radius.
        delta: Edge threshold; defaults to the automatic choice.
        stress_tol: Strain threshold for the dimension choice.
        max_dim: Dimension cap.
        allow_inexact: Keep a non-exact polytope instead of re-basing.

    Returns:
        An Embedding whose ``context`` may be a re-based one.
    """
    if not ctx.exact and not allow_inexact:
        logger.warning(
            f"Polytope of {ctx.group.name} is not exact; embedding on a "
            "Dirichlet domain"
        )
        ctx = build_context(ctx.group, ctx.polytope, rebase=True)
    graph = build_orbit_graph(ctx, epsilon, delta)
    if mirror_reflections(ctx):
        graph = mirror_augment(ctx, graph)
    squared = geodesic_distances(graph)
    result = classical_mds(squared, max_dim, stress_tol, min_dim=ctx.dimension)

    pairs = _zero_pairs(graph)
    residual = 0.0
    if len(pairs):
        coords = result.coordinates
        gaps = coords[pairs[:, 0]] - coords[pairs[:, 1]]
        residual = float(np.max(np.linalg.norm(gaps, axis=1)))
    lower, upper = dimension_bound(ctx, graph)
    if result.dimension >= upper:
        logger.warning(
            f"Embedding dimension {result.dimension} for {ctx.group.name} "
            f"reaches the bound {upper}"
        )
    logger.info(
        f"Embedding of {ctx.group.name}: dimension {result.dimension}, "
        f"strain {result.strain:.4f}, gluing residual {residual:.2e}"
    )
    return Embedding(
        ctx,
        graph,
        result.coordinates,
        result.dimension,
        result.eigenvalues,
        result.strain,
        residual,
        epsilon,
    )


def rho(ctx, embedding, x):
    """Embedded coordinates of x.

    The embedding's own context is used; ``ctx`` may be None or the
    context the embedding was requested for, which differs from the
    embedding's one after re-basing.
    """
    if ctx is not None and ctx.group.name != embedding.context.group.name:
        logger.error(
            f"Context of {ctx.group.name} does not match embedding of "
            f"{embedding.context.group.name}"
        )
        raise ValueError("Context and embedding belong to different groups")
    return embedding.rho(x)


def embedding_distortion(embedding, graph=None):
    """Distance diagnostics of an embedding.

    Returns:
        A dict with the chordal-against-geodesic ``stress``, the
        ``gluing_residual``, the selection ``strain``, the share of
        positive eigenvalue energy per retained dimension, and the share
        of eigenvalue magnitude that is negative and therefore discarded.
    """
    graph = embedding.graph if graph is None else graph
    squared = geodesic_distances(graph)
    values = embedding.mds_eigenvalues
    positive = np.sum(values[values > 0] ** 2)
    report = {
        "stress": distance_stress(embedding.coordinates, squared),
        "gluing_residual": float(embedding.gluing_residual),
        "strain": float(embedding.stress),
        "dimension_mass": (
            values[: embedding.dimension] ** 2 / positive
        ).tolist(),
        "discarded_mass": float(
            np.sum(np.abs(values[values < 0])) / np.sum(np.abs(values))
        ),
    }
    if report["discarded_mass"] > STRESS_TOL:
        logger.warning(
            f"MDS discarded {report['discarded_mass']:.2%} of the eigenvalue "
            "magnitude as negative"
        )
    return report
