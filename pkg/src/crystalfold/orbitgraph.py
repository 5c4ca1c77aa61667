import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from tqdm.auto import tqdm

from .config import (
    AUTO_DELTA_FACTOR,
    FACE_TOL,
    SNAP_FRACTION,
    TINY_WEIGHT,
    make_rng,
    max_workers,
)
from .group import stabilizer
from .polytope import contains, sample_points

logger = logging.getLogger(__name__)

DYKSTRA_ITERATIONS = 200
COVERAGE_SAMPLES = 2000


@dataclass(frozen=True, eq=False)
class OrbitGraph:
    """An epsilon-net of the polytope with quotient-distance edges.

    Rows ``n_base:`` of ``vertices`` are mirror images added by
    ``mirror_augment``; ``constraint_pairs`` ties each to its original.
    """

    vertices: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    epsilon: float
    delta: float
    constraint_pairs: np.ndarray = None
    n_base: int = None

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        pairs = self.constraint_pairs
        pairs = np.zeros((0, 2), dtype=int) if pairs is None else pairs
        object.__setattr__(self, "vertices", np.asarray(self.vertices, float))
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", np.asarray(self.weights, float))
        object.__setattr__(
            self,
            "constraint_pairs",
            np.asarray(pairs, dtype=int).reshape(-1, 2),
        )
        if self.n_base is None:
            object.__setattr__(self, "n_base", len(self.vertices))

    def __len__(self):
        return len(self.vertices)

    @property
    def dimension(self):
        return self.vertices.shape[1]

    def adjacency(self, zero_weight=TINY_WEIGHT):
        """Symmetric sparse matrix of edge lengths.

        Zero lengths are replaced by ``zero_weight`` because sparse graph
        routines treat stored zeros as missing edges.
        """
        weights = np.where(self.weights > 0, self.weights, zero_weight)
        i, j = self.edges[:, 0], self.edges[:, 1]
        size = len(self.vertices)
        return coo_matrix(
            (np.concatenate([weights, weights]), (np.r_[i, j], np.r_[j, i])),
            shape=(size, size),
        ).tocsr()

    def to_dict(self):
        return {
            "vertices": self.vertices.tolist(),
            "edges": self.edges.tolist(),
            "weights": self.weights.tolist(),
            "epsilon": float(self.epsilon),
            "delta": float(self.delta),
            "constraint_pairs": self.constraint_pairs.tolist(),
            "n_base": int(self.n_base),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            np.array(data["vertices"], dtype=float),
            np.array(data["edges"], dtype=int),
            np.array(data["weights"], dtype=float),
            data["epsilon"],
            data["delta"],
            np.array(data.get("constraint_pairs", []), dtype=int),
            data.get("n_base"),
        )


def auto_delta(epsilon, dimension):
    """Default edge threshold: 1.5 grid spacings."""
    return AUTO_DELTA_FACTOR * epsilon / np.sqrt(dimension)


def _nearest_in_polytope(polytope, points):
    """Euclidean projection onto the polytope by Dykstra's algorithm."""
    x = np.array(points, dtype=float)
    increments = np.zeros((len(polytope.offsets),) + x.shape)
    for _ in range(DYKSTRA_ITERATIONS):
        for i, (normal, offset) in enumerate(
            zip(polytope.normals, polytope.offsets)
        ):
            z = x + increments[i]
            excess = np.maximum(z @ normal - offset, 0.0)
            x = z - excess[:, None] * normal
            increments[i] = z - x
    # Dykstra leaves round-off outside; finish with plain projections.
    for _ in range(10):
        for normal, offset in zip(polytope.normals, polytope.offsets):
            excess = np.maximum(x @ normal - offset, 0.0)
            x = x - excess[:, None] * normal
    return x


def build_net(polytope, epsilon):
    """Grid-based epsilon-net of a polytope with points snapped to facets.

    Args:
        polytope: The polytope to cover.
        epsilon: Covering radius.

    Returns:
        An array of net points, sorted lexicographically. The polytope's
        vertices are always included, so the net is never empty.

    Raises:
        ValueError: If epsilon is not positive.
        RuntimeError: If random sampling finds a point farther than epsilon
            from the net.
    """
    if epsilon <= 0:
        logger.error(f"Non-positive epsilon {epsilon}")
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    n = polytope.dimension
    spacing = epsilon / np.sqrt(n)
    lo = polytope.vertices.min(axis=0)
    hi = polytope.vertices.max(axis=0)
    axes = [
        np.linspace(a, b, int(np.ceil((b - a) / spacing)) + 1)
        for a, b in zip(lo, hi)
    ]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)

    slack = grid @ polytope.normals.T - polytope.offsets
    snap_radius = SNAP_FRACTION * epsilon
    inside = np.all(slack <= FACE_TOL, axis=1)
    # Points outside within half a cell diagonal move to the nearest point
    # of the polytope; inside points near a facet drop onto it.
    outside = ~inside & (np.max(slack, axis=1) <= epsilon / 2.0)
    near = inside & (np.min(np.abs(slack), axis=1) <= snap_radius)
    nearest_facet = np.argmin(np.abs(slack), axis=1)
    snapped = grid.copy()
    snapped[near] -= (
        slack[near, nearest_facet[near]][:, None]
        * polytope.normals[nearest_facet[near]]
    )
    moved = near | outside
    snapped[moved] = _nearest_in_polytope(polytope, snapped[moved])
    keep = inside | outside
    net = np.concatenate([snapped[keep], polytope.vertices])
    net = net[contains(polytope, net)]
    net = np.unique(np.round(net, 10) + 0.0, axis=0)

    samples = sample_points(polytope, COVERAGE_SAMPLES, make_rng(0))
    gap = float(np.max(cKDTree(net).query(samples)[0]))
    if gap > epsilon * (1.0 + 1e-9):
        logger.error(f"Net leaves a gap of {gap:.4f} > epsilon {epsilon}")
        raise RuntimeError(f"Net is not an epsilon-net: gap {gap:.4f}")
    logger.info(
        f"Built net with {len(net)} points (epsilon={epsilon}, "
        f"spacing={spacing:.4f}, sampled gap={gap:.4f})"
    )
    return net


def _edges_for(tree, points, phi, delta):
    images = phi(points)
    found = tree.sparse_distance_matrix(
        cKDTree(images), delta, output_type="ndarray"
    )
    found = found[(found["v"] < delta) & (found["i"] != found["j"])]
    return pd.DataFrame(
        {
            "i": np.minimum(found["i"], found["j"]),
            "j": np.maximum(found["i"], found["j"]),
            "d": found["v"],
        }
    )


def orbit_edges(local_group, points, delta, progress=True):
    """Pairs of points at quotient distance below delta.

    Returns:
        A tuple ``(edges, weights)`` with ``edges[:, 0] < edges[:, 1]``
        and the minimal distance over the local group as weight.
    """
    tree = cKDTree(points)
    with ThreadPoolExecutor(max_workers=max_workers()) as executor:
        futures = [
            executor.submit(_edges_for, tree, points, phi, delta)
            for phi in local_group
        ]
        frames = [
            future.result()
            for future in tqdm(
                futures,
                desc="orbit edges",
                disable=not progress or len(futures) < 200,
            )
        ]
    edges = (
        pd.concat(frames, ignore_index=True)
        .groupby(["i", "j"], as_index=False)["d"]
        .min()
        .sort_values(["i", "j"])
    )
    return (
        edges[["i", "j"]].to_numpy(dtype=int),
        edges["d"].to_numpy(dtype=float),
    )


def _require_connected(graph):
    count, _ = connected_components(graph.adjacency(), directed=False)
    if count > 1:
        logger.error(
            f"Orbit graph has {count} components (delta={graph.delta})"
        )
        raise ValueError(
            f"Orbit graph is disconnected ({count} components); increase "
            f"delta above {graph.delta}"
        )


def build_orbit_graph(ctx, epsilon, delta=None):
    """Orbit graph of an epsilon-net of the context's polytope.

    Args:
        ctx: The quotient context.
        epsilon: Net covering radius.
        delta: Edge threshold; defaults to ``auto_delta``.

    Returns:
        A connected OrbitGraph.

    Raises:
        ValueError: If delta is not positive or the graph is disconnected.
    """
    if delta is None:
        delta = auto_delta(epsilon, ctx.dimension)
    if delta <= 0:
        logger.error(f"Non-positive delta {delta}")
        raise ValueError(f"delta must be positive, got {delta}")
    vertices = build_net(ctx.polytope, epsilon)
    edges, weights = orbit_edges(ctx.local_group, vertices, delta)
    graph = OrbitGraph(vertices, edges, weights, epsilon, delta)
    _require_connected(graph)
    logger.info(
        f"Orbit graph for {ctx.group.name}: {len(vertices)} vertices, "
        f"{len(edges)} edges, delta={delta:.4f}"
    )
    return graph


def mirror_reflections(ctx, tol=FACE_TOL):
    """(facet index, reflection) pairs for facets lying in mirrors."""
    result = []
    for index, vertex_ids in enumerate(ctx.polytope.facet_vertices):
        corners = ctx.polytope.vertices[list(vertex_ids)]
        for phi in stabilizer(ctx.local_group, corners.mean(axis=0)):
            if phi.determinant < 0 and np.all(
                np.linalg.norm(phi(corners) - corners, axis=1) <= tol
            ):
                result.append((index, phi))
                break
    return result


def mirror_augment(ctx, graph):
    """Adds reflected twins of vertices near mirror facets.

    Each vertex within delta of a mirror, but not on it, gains a copy
    reflected across the mirror. Edges are recomputed with every twin at
    its original's position, so twins sit at quotient distance zero.
    """
    reflections = mirror_reflections(ctx)
    if not reflections:
        return graph
    base = graph.vertices[: graph.n_base]
    ghosts, originals = [], []
    for index, sigma in reflections:
        normal = ctx.polytope.normals[index]
        offset = ctx.polytope.offsets[index]
        gap = np.abs(base @ normal - offset)
        chosen = np.flatnonzero((gap > FACE_TOL) & (gap < graph.delta))
        ghosts.append(sigma(base[chosen]))
        originals.append(chosen)
    ghosts = np.concatenate(ghosts)
    originals = np.concatenate(originals)
    pairs = np.column_stack(
        [originals, len(base) + np.arange(len(originals))]
    )
    reduced = np.concatenate([base, base[originals]])
    edges, weights = orbit_edges(ctx.local_group, reduced, graph.delta)
    augmented = OrbitGraph(
        np.concatenate([base, ghosts]),
        edges,
        weights,
        graph.epsilon,
        graph.delta,
        pairs,
        len(base),
    )
    logger.info(
        f"Mirror augmentation for {ctx.group.name}: {len(reflections)} "
        f"mirrors, {len(ghosts)} twins added"
    )
    return augmented


def zero_distance_clusters(graph):
    """Component labels of vertices joined by zero-length edges or pairs."""
    zero = graph.edges[graph.weights <= TINY_WEIGHT]
    links = np.concatenate([zero, graph.constraint_pairs])
    size = len(graph.vertices)
    matrix = coo_matrix(
        (np.ones(len(links)), (links[:, 0], links[:, 1])), shape=(size, size)
    )
    _, labels = connected_components(matrix, directed=False)
    return labels


def graph_summary(graph):
    degrees = np.bincount(graph.edges.ravel(), minlength=len(graph.vertices))
    return {
        "vertices": int(len(graph.vertices)),
        "base_vertices": int(graph.n_base),
        "edges": int(len(graph.edges)),
        "zero_weight_edges": int(np.sum(graph.weights <= TINY_WEIGHT)),
        "min_degree": int(degrees.min()),
        "max_degree": int(degrees.max()),
        "constraint_pairs": int(len(graph.constraint_pairs)),
        "epsilon": float(graph.epsilon),
        "delta": float(graph.delta),
    }
