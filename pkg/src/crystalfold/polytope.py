import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.spatial.distance import cdist, pdist

from .config import FACE_TOL, ISOMETRY_TOL

logger = logging.getLogger(__name__)

MAX_POLYTOPE_DIM = 3
# Nearest bisectors used to seed the Dirichlet cutting-plane loop.
DIRICHLET_SEED = 30
DIRICHLET_ROUNDS = 8


def _hessian_normal(normals, offsets):
    """Scales halfspace rows to unit normals."""
    norms = np.linalg.norm(normals, axis=1)
    if np.any(norms <= 1e-12):
        logger.error("Halfspace with a zero normal")
        raise ValueError("Halfspace normals must be non-zero")
    return normals / norms[:, None], offsets / norms


@dataclass(frozen=True)
class Face:
    """A face of a polytope given by its vertex indices.

    ``facets`` holds the indices of the facets containing the face; the
    full polytope has an empty facet set.
    """

    dimension: int
    vertices: tuple
    facets: frozenset
    centroid: np.ndarray = field(compare=False, repr=False)

    @property
    def key(self):
        return frozenset(self.vertices)


@dataclass(frozen=True, eq=False)
class ConvexPolytope:
    """A bounded, full-dimensional convex polytope.

    Stored both as vertices and as halfspaces ``normals @ x <= offsets``
    with unit outward normals. Facet ``i`` is the set of vertices on
    hyperplane ``i``.
    """

    vertices: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float)
        normals = np.array(self.normals, dtype=float)
        offsets = np.array(self.offsets, dtype=float).ravel()
        if vertices.ndim != 2 or normals.ndim != 2:
            logger.error("Polytope arrays have the wrong rank")
            raise ValueError("vertices and normals must be 2-d arrays")
        n = vertices.shape[1]
        if normals.shape[1] != n or normals.shape[0] != offsets.shape[0]:
            logger.error(
                f"Inconsistent polytope shapes: vertices {vertices.shape}, "
                f"normals {normals.shape}, offsets {offsets.shape}"
            )
            raise ValueError("Inconsistent polytope array shapes")
        normals, offsets = _hessian_normal(normals, offsets)
        slack = vertices @ normals.T - offsets
        if np.max(slack) > ISOMETRY_TOL * max(1.0, np.max(np.abs(offsets))):
            logger.error(
                f"Vertices violate halfspaces by {np.max(slack):.3e}"
            )
            raise ValueError("Every vertex must satisfy every halfspace")
        if np.linalg.matrix_rank(vertices[1:] - vertices[0], tol=1e-9) < n:
            logger.error(f"Polytope with {len(vertices)} vertices is flat")
            raise ValueError("Polytope must be full-dimensional")
        for name, array in (
            ("vertices", vertices),
            ("normals", normals),
            ("offsets", offsets),
        ):
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @classmethod
    def from_vertices(cls, vertices):
        """Builds the convex hull of a point set.

        Raises:
            ValueError: If the points are flat or the dimension exceeds 3.
        """
        points = np.array(vertices, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        n = points.shape[1]
        if n > MAX_POLYTOPE_DIM:
            logger.error(f"Polytope dimension {n} is not supported")
            raise ValueError(
                f"Polytopes of dimension {n} > {MAX_POLYTOPE_DIM} are not "
                "supported"
            )
        if n == 1:
            lo, hi = float(points.min()), float(points.max())
            if hi - lo <= ISOMETRY_TOL:
                logger.error("Degenerate interval")
                raise ValueError("Interval must have positive length")
            return cls([[lo], [hi]], [[-1.0], [1.0]], [-lo, hi])
        try:
            hull = ConvexHull(points)
        except QhullError as error:
            logger.error(f"Convex hull failed: {error}")
            raise ValueError("Points do not span a full-dimensional hull")
        extreme = points[np.sort(hull.vertices)]
        # Qhull triangulates facets; keep one plane per vertex set.
        planes, seen = [], set()
        for row in hull.equations:
            slack = np.abs(extreme @ row[:n] + row[n])
            on = frozenset(np.flatnonzero(slack <= FACE_TOL).tolist())
            if on not in seen:
                seen.add(on)
                planes.append(row)
        planes = np.array(planes)
        planes = planes[np.lexsort(np.round(planes, 9).T[::-1])]
        return cls(extreme, planes[:, :n], -planes[:, n])

    @property
    def dimension(self):
        return self.vertices.shape[1]

    @cached_property
    def centroid(self):
        """Vertex mean; always an interior point."""
        return self.vertices.mean(axis=0)

    @cached_property
    def facet_vertices(self):
        slack = np.abs(self.vertices @ self.normals.T - self.offsets)
        return tuple(
            tuple(np.flatnonzero(slack[:, i] <= FACE_TOL).tolist())
            for i in range(len(self.offsets))
        )

    @cached_property
    def faces(self):
        """All faces, ordered by dimension then vertex indices."""
        n = self.dimension
        if n > MAX_POLYTOPE_DIM:
            raise ValueError(f"Face lattice of dimension {n} not supported")
        facet_sets = [frozenset(v) for v in self.facet_vertices]
        known = set(facet_sets)
        frontier = set(facet_sets)
        while frontier:
            found = set()
            for current in frontier:
                for other in facet_sets:
                    meet = current & other
                    if meet and meet not in known:
                        found.add(meet)
            known |= found
            frontier = found
        known.add(frozenset(range(len(self.vertices))))

        faces = []
        for vertex_set in known:
            indices = tuple(sorted(vertex_set))
            points = self.vertices[list(indices)]
            rank = (
                np.linalg.matrix_rank(points[1:] - points[0], tol=1e-9)
                if len(indices) > 1
                else 0
            )
            containing = frozenset(
                i for i, s in enumerate(facet_sets) if vertex_set <= s
            )
            faces.append(Face(int(rank), indices, containing, points.mean(0)))
        faces.sort(key=lambda f: (f.dimension, f.vertices))
        return tuple(faces)

    @cached_property
    def _face_lookup(self):
        return {face.key: i for i, face in enumerate(self.faces)}

    def face_index(self, vertex_set):
        return self._face_lookup.get(frozenset(vertex_set))

    def transformed(self, phi):
        """Image of the polytope under an isometry, facets in order."""
        normals = self.normals @ phi.matrix.T
        return ConvexPolytope(
            self.vertices @ phi.matrix.T + phi.translation,
            normals,
            self.offsets + normals @ phi.translation,
        )

    def match_vertices(self, points, tol=FACE_TOL):
        """Indices of the vertices at the given points, or None."""
        points = np.atleast_2d(points)
        distances = cdist(points, self.vertices)
        nearest = np.argmin(distances, axis=1)
        if np.any(distances[np.arange(len(points)), nearest] > tol):
            return None
        return nearest

    def to_dict(self):
        return {
            "dimension": int(self.dimension),
            "vertices": self.vertices.tolist(),
            "normals": self.normals.tolist(),
            "offsets": self.offsets.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["vertices"], data["normals"], data["offsets"])


def diameter(polytope):
    return float(np.max(pdist(polytope.vertices)))


def volume(polytope):
    if polytope.dimension == 1:
        return float(np.ptp(polytope.vertices))
    return float(ConvexHull(polytope.vertices).volume)


def centroid(polytope):
    return polytope.centroid


def faces(polytope):
    return polytope.faces


def facets(polytope):
    """(normal, offset, vertex indices) for every facet."""
    return [
        (polytope.normals[i], float(polytope.offsets[i]), vertices)
        for i, vertices in enumerate(polytope.facet_vertices)
    ]


def contains(polytope, x, tol=FACE_TOL):
    """Membership test, batched over the last axis of x."""
    x = np.asarray(x, dtype=float)
    return np.all(x @ polytope.normals.T <= polytope.offsets + tol, axis=-1)


def classify_points(polytope, x, tol=FACE_TOL):
    """Face index per row of x, or -1 for rows outside the polytope.

    A point lies in the relative interior of the face cut out by the
    facets it is active on.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    slack = x @ polytope.normals.T - polytope.offsets
    result = np.full(len(x), -1, dtype=int)
    patterns = {}
    for row in np.flatnonzero(np.all(slack <= tol, axis=1)):
        active = tuple(np.flatnonzero(np.abs(slack[row]) <= tol).tolist())
        if active not in patterns:
            vertex_set = frozenset(range(len(polytope.vertices)))
            for i in active:
                vertex_set &= frozenset(polytope.facet_vertices[i])
            index = polytope.face_index(vertex_set)
            if index is None:
                logger.error(f"Active facets {active} match no face")
                raise RuntimeError(f"Point {x[row].tolist()} matches no face")
            patterns[active] = index
        result[row] = patterns[active]
    return result


def classify_point(polytope, x, tol=FACE_TOL):
    """Index of the face whose relative interior contains x.

    Raises:
        ValueError: If x lies outside the polytope.
    """
    index = int(classify_points(polytope, x, tol)[0])
    if index < 0:
        logger.error(f"Point {np.asarray(x).tolist()} is outside the polytope")
        raise ValueError(
            f"Point {np.asarray(x).tolist()} is outside the polytope"
        )
    return index


def _simplex_distance(simplex):
    """Distance from the origin to the convex hull of a few points."""
    best = np.inf
    for size in range(1, len(simplex) + 1):
        for subset in combinations(range(len(simplex)), size):
            points = simplex[list(subset)]
            if size == 1:
                best = min(best, float(np.linalg.norm(points[0])))
                continue
            base = points[0]
            spans = (points[1:] - base).T
            coeffs, *_ = np.linalg.lstsq(spans, -base, rcond=None)
            if np.all(coeffs >= -1e-12) and coeffs.sum() <= 1 + 1e-12:
                best = min(best, float(np.linalg.norm(base + spans @ coeffs)))
    return best


def polytope_distance(first, second):
    """Minimum Euclidean distance between two convex polytopes."""
    if first.dimension == 1:
        a_lo, a_hi = first.vertices.min(), first.vertices.max()
        b_lo, b_hi = second.vertices.min(), second.vertices.max()
        return float(max(0.0, b_lo - a_hi, a_lo - b_hi))
    difference = (
        first.vertices[:, None, :] - second.vertices[None, :, :]
    ).reshape(-1, first.dimension)
    hull = ConvexHull(difference)
    # Equations are normal . x + c <= 0 inside; the origin gives c.
    visible = np.flatnonzero(hull.equations[:, -1] > FACE_TOL * 1e-2)
    if len(visible) == 0:
        return 0.0
    return min(
        _simplex_distance(difference[hull.simplices[i]]) for i in visible
    )


@dataclass(frozen=True, eq=False)
class Transversal:
    """One face per equivalence class of faces of the polytope.

    ``self_maps`` lists, per face, the non-identity elements mapping the
    face onto itself; inside a selected face only the lexicographically
    smallest point of each such orbit belongs to the transversal.
    """

    polytope: ConvexPolytope
    selected_faces: tuple
    classes: tuple
    self_maps: dict

    def contains(self, x, tol=FACE_TOL):
        """Membership, batched over the rows of x."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        labels = classify_points(self.polytope, x, tol)
        result = np.isin(labels, self.selected_faces)
        for row in np.flatnonzero(result):
            face = labels[row]
            if face not in self.self_maps:
                continue
            result[row] = all(
                _lex_not_greater(x[row], phi(x[row]))
                for phi in self.self_maps.get(face, ())
            )
        return result


def _lex_not_greater(a, b, tol=ISOMETRY_TOL):
    for u, v in zip(a, b):
        if u < v - tol:
            return True
        if u > v + tol:
            return False
    return True


def _face_images(polytope, local_group):
    """Yields (face index, image face index, element) for face matches.

    Images are matched by vertex sets; images that land inside the
    polytope without being one of its faces are counted and reported.
    """
    partial = 0
    for phi in local_group:
        images = phi(polytope.vertices)
        for i, face in enumerate(polytope.faces):
            corners = images[list(face.vertices)]
            hits = polytope.match_vertices(corners)
            target = None if hits is None else polytope.face_index(hits)
            if target is not None:
                yield i, target, phi
            elif np.all(contains(polytope, corners)):
                partial += 1
    if partial:
        logger.warning(
            f"{partial} face images lie in the polytope without being "
            "faces; the tiling is not face-to-face"
        )


def compute_transversal(group, polytope, local_group):
    """Selects one face per equivalence class of faces.

    Faces are identified when some local-group element maps one onto the
    other. The representative of each class is the face with the
    lexicographically smallest centroid.

    Raises:
        ValueError: If a face is carried onto a face by an element whose
            inverse is missing from the local group, so that the reverse
            image lies outside the local-group radius.
    """
    from .group import inverse, is_identity, isometry_equal

    count = len(polytope.faces)
    parent = list(range(count))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    self_maps = {}
    for source, target, phi in _face_images(polytope, local_group):
        back = inverse(phi)
        if local_group.index_of(back) is None and not any(
            isometry_equal(back, psi) for psi in local_group
        ):
            logger.error(
                f"Face {target} of {group.name} maps back to face {source} "
                f"outside the local-group radius {local_group.radius:.4f}"
            )
            raise ValueError(
                "Face image leaves the local-group radius; enumerate the "
                "local group with a larger margin"
            )
        if source == target:
            if not is_identity(phi):
                self_maps.setdefault(source, []).append(phi)
            continue
        root_a, root_b = find(source), find(target)
        if root_a != root_b:
            parent[root_b] = root_a

    members = {}
    for i in range(count):
        members.setdefault(find(i), []).append(i)
    classes = tuple(tuple(v) for v in members.values())
    selected = tuple(
        sorted(
            min(
                cls,
                key=lambda i: tuple(
                    np.round(polytope.faces[i].centroid, 9) + 0.0
                ),
            )
            for cls in classes
        )
    )
    logger.info(
        f"Transversal for {group.name}: {count} faces in "
        f"{len(classes)} classes"
    )
    return Transversal(
        polytope,
        selected,
        classes,
        {k: tuple(v) for k, v in self_maps.items()},
    )


def is_exact(group, polytope, local_group):
    """Checks that every facet is the image of a facet under some element.

    Returns:
        A tuple ``(exact, witnesses)`` where witnesses maps each facet index
        to an element carrying a facet onto it.
    """
    from .group import is_identity

    n = polytope.dimension
    facet_faces = {
        polytope.face_index(v): i
        for i, v in enumerate(polytope.facet_vertices)
    }
    witnesses = {}
    for source, target, phi in _face_images(polytope, local_group):
        if (
            target in facet_faces
            and source in facet_faces
            and polytope.faces[target].dimension == n - 1
            and not is_identity(phi)
        ):
            witnesses.setdefault(facet_faces[target], phi)
    exact = len(witnesses) == len(polytope.facet_vertices)
    logger.info(
        f"Exactness of polytope for {group.name}: {exact} "
        f"({len(witnesses)}/{len(polytope.facet_vertices)} facets matched)"
    )
    return exact, witnesses


def _recession_direction(normals):
    """A non-zero d with normals @ d <= 0, or None if there is none."""
    n = normals.shape[1]
    for axis in range(n):
        for sign in (1.0, -1.0):
            cost = np.zeros(n)
            cost[axis] = -sign
            result = linprog(
                cost,
                A_ub=normals,
                b_ub=np.zeros(len(normals)),
                bounds=[(-1.0, 1.0)] * n,
                method="highs",
            )
            if result.status == 0 and -result.fun > 1e-9:
                return result.x
    return None


def _merge_close(points, tol=1e-8):
    """Drops points within tol of an earlier kept point."""
    keep = np.ones(len(points), dtype=bool)
    for i, j in sorted(cKDTree(points).query_pairs(tol)):
        if keep[i]:
            keep[j] = False
    return points[keep]


def halfspace_intersection(halfspaces):
    """Vertex enumeration of ``{x : normal . x <= offset}``.

    Args:
        halfspaces: Rows ``[normal..., offset]``.

    Returns:
        The bounded ConvexPolytope they cut out.

    Raises:
        ValueError: If the dimension exceeds 3 or the intersection is
            unbounded, empty or flat.
    """
    rows = np.atleast_2d(np.array(halfspaces, dtype=float))
    n = rows.shape[1] - 1
    if n < 1 or n > MAX_POLYTOPE_DIM:
        logger.error(f"Halfspace dimension {n} is not supported")
        raise ValueError(f"Halfspace dimension must be 1..3, got {n}")
    normals, offsets = _hessian_normal(rows[:, :n], rows[:, n])
    direction = _recession_direction(normals)
    if direction is not None:
        logger.error(
            f"Halfspace intersection unbounded along {direction.tolist()}"
        )
        raise ValueError("Halfspace intersection is unbounded")

    subsets = np.array(list(combinations(range(len(normals)), n)))
    if len(subsets) == 0:
        logger.error("Too few halfspaces for a bounded intersection")
        raise ValueError("Halfspace intersection is unbounded")
    systems = normals[subsets]
    regular = np.abs(np.linalg.det(systems)) > 1e-12
    solutions = np.linalg.solve(
        systems[regular], offsets[subsets[regular]][..., None]
    )[..., 0]
    slack_tol = 1e-9 * max(1.0, np.abs(offsets).max())
    feasible = np.all(solutions @ normals.T <= offsets + slack_tol, axis=1)
    vertices = solutions[feasible]
    if len(vertices) == 0:
        logger.error(f"Empty intersection of {len(normals)} halfspaces")
        raise ValueError("Halfspace intersection is empty")
    vertices = _merge_close(np.unique(np.round(vertices, 10) + 0.0, axis=0))
    try:
        return ConvexPolytope.from_vertices(vertices)
    except ValueError:
        logger.error("Halfspace intersection is not full-dimensional")
        raise ValueError("Halfspace intersection is empty or flat")


def _bisectors(x, images):
    gaps = images - x
    lengths = np.linalg.norm(gaps, axis=1)
    normals = gaps / lengths[:, None]
    offsets = np.einsum("ij,ij->i", normals, (images + x) / 2.0)
    return np.column_stack([normals, offsets]), lengths


def _cell_rows(x, local_group):
    from .group import is_identity

    others = [phi for phi in local_group if not is_identity(phi)]
    return _bisectors(x, np.stack([phi(x) for phi in others]))


def _cut_cell(x, rows, lengths, local_group):
    """Intersects the bisector halfspaces by adding violated rows."""
    order = np.argsort(lengths, kind="stable")
    active = list(order[: min(DIRICHLET_SEED, len(order))])
    while True:
        try:
            cell = halfspace_intersection(rows[active])
        except ValueError:
            if len(active) == len(order):
                logger.error(
                    f"Dirichlet cell of {x.tolist()} is unbounded for "
                    f"{len(local_group)} local elements"
                )
                raise ValueError(
                    "Dirichlet cell is unbounded; enumerate the local group "
                    "with a larger margin"
                )
            active = list(order[: min(2 * len(active), len(order))])
            continue
        slack = cell.vertices @ rows[:, :-1].T - rows[:, -1]
        violated = np.flatnonzero(np.any(slack > 1e-9, axis=0))
        if len(violated) == 0:
            return cell
        active = sorted(set(active) | set(violated.tolist()))


def dirichlet_domain(group, local_group, x):
    """Cell of points at least as near x as any other orbit point.

    The cell is cut from the bisectors of ``local_group``, then re-cut
    with every element whose image of x lies within twice the cell's
    reach from x, until no further bisector cuts it.

    Args:
        group: The crystallographic group.
        local_group: A local group enumerated with margin at least 1.
        x: Base point with trivial stabilizer.

    Returns:
        The cell as a ConvexPolytope, verified to be exact.

    Raises:
        ValueError: If x has a non-trivial stabilizer or the cell is
            unbounded for this local group.
        RuntimeError: If the cell does not settle or fails the exactness
            check.
    """
    from .group import enumerate_local_group, stabilizer

    x = np.asarray(x, dtype=float)
    if len(stabilizer(local_group, x)) > 1:
        logger.error(f"Base point {x.tolist()} has a non-trivial stabilizer")
        raise ValueError(
            f"Dirichlet base point {x.tolist()} is fixed by a non-identity "
            "element"
        )
    rows, lengths = _cell_rows(x, local_group)
    cell = _cut_cell(x, rows, lengths, local_group)

    for _ in range(DIRICHLET_ROUNDS):
        reach = float(np.max(np.linalg.norm(cell.vertices - x, axis=1)))
        margin = max(0.0, 2.0 * reach / diameter(cell) - 1.0)
        around = enumerate_local_group(group, cell, margin=margin)
        rows, lengths = _cell_rows(x, around)
        slack = cell.vertices @ rows[:, :-1].T - rows[:, -1]
        if not np.any(slack > 1e-9):
            break
        logger.info(
            f"Dirichlet cell at {x.tolist()} re-cut with {len(around)} "
            "local elements"
        )
        cell = _cut_cell(x, rows, lengths, around)
    else:
        logger.error(
            f"Dirichlet cell at {x.tolist()} did not settle in "
            f"{DIRICHLET_ROUNDS} rounds"
        )
        raise RuntimeError("Dirichlet cell did not settle")

    logger.info(
        f"Dirichlet cell of {group.name} at {x.tolist()}: "
        f"{len(cell.vertices)} vertices, {len(cell.offsets)} facets"
    )
    exact, _ = is_exact(group, cell, enumerate_local_group(group, cell))
    if not exact:
        logger.error(f"Dirichlet cell at {x.tolist()} is not exact")
        raise RuntimeError("Dirichlet cell failed the exactness check")
    return cell


def dirichlet_domain_json(polytope, base_point=None):
    data = polytope.to_dict()
    if base_point is not None:
        data["base_point"] = np.asarray(base_point, dtype=float).tolist()
    return json.dumps(data, indent=2)


def sample_points(polytope, count, rng):
    """Uniform samples by rejection from the bounding box."""
    lo = polytope.vertices.min(axis=0)
    hi = polytope.vertices.max(axis=0)
    ratio = volume(polytope) / float(np.prod(hi - lo))
    chunks, total = [], 0
    while total < count:
        size = (int((count - total) / ratio) + 16, len(lo))
        batch = rng.uniform(lo, hi, size=size)
        batch = batch[contains(polytope, batch, tol=0.0)]
        chunks.append(batch)
        total += len(batch)
    return np.concatenate(chunks)[:count]


def raster(polytope, resolution):
    """Grid points of the bounding box that fall inside the polytope."""
    lo = polytope.vertices.min(axis=0)
    hi = polytope.vertices.max(axis=0)
    axes = [np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    grid = grid.reshape(-1, polytope.dimension)
    return grid[contains(polytope, grid)]


def quadrature_grid(polytope, resolution, subsamples=4):
    """Midpoint rule over the bounding-box cells clipped to the polytope.

    Each cell carries ``subsamples`` points per axis; its node is
    the mean of those inside and its weight the inside fraction of
    the cell volume. Weights are rescaled to sum to the exact volume.

    Returns:
        A tuple ``(nodes, weights)``.
    """
    n = polytope.dimension
    lo = polytope.vertices.min(axis=0)
    hi = polytope.vertices.max(axis=0)
    step = (hi - lo) / resolution
    corners = np.stack(
        np.meshgrid(*[np.arange(resolution)] * n, indexing="ij"), axis=-1
    ).reshape(-1, n)
    offsets = (np.arange(subsamples) + 0.5) / subsamples
    subgrid = np.stack(
        np.meshgrid(*[offsets] * n, indexing="ij"), axis=-1
    ).reshape(-1, n)
    points = lo + (corners[:, None, :] + subgrid[None, :, :]) * step
    inside = contains(polytope, points, tol=0.0)
    fraction = inside.mean(axis=1)
    keep = fraction > 0
    counts = inside[keep].sum(axis=1)
    nodes = (
        np.sum(points[keep] * inside[keep][..., None], axis=1)
        / counts[:, None]
    )
    weights = fraction[keep] * float(np.prod(step))
    weights *= volume(polytope) / weights.sum()
    return nodes, weights
