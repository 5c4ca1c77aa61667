import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from tqdm.auto import tqdm

from .config import (
    FACE_TOL,
    ISOMETRY_TOL,
    KEY_DECIMALS,
    MAX_WORD_LENGTH,
)

logger = logging.getLogger(__name__)


def _frozen_array(values, ndim):
    array = np.array(values, dtype=float)
    if array.ndim != ndim:
        raise ValueError(f"Expected a {ndim}-d array, got shape {array.shape}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Isometry:
    """A rigid motion x -> matrix @ x + translation.

    ``word`` records how the element was reached from the generators of its
    group: entry ``+(i + 1)`` is generator ``i``, ``-(i + 1)`` its inverse,
    read left to right as a product.
    """

    matrix: np.ndarray
    translation: np.ndarray
    word: tuple = ()

    def __post_init__(self):
        matrix = np.atleast_2d(np.array(self.matrix, dtype=float))
        translation = np.atleast_1d(np.array(self.translation, dtype=float))
        n = translation.shape[0]
        if matrix.shape != (n, n):
            logger.error(
                f"Isometry matrix shape {matrix.shape} does not match "
                f"translation length {n}"
            )
            raise ValueError(
                f"Isometry matrix must be {n}x{n}, got {matrix.shape}"
            )
        gram = matrix.T @ matrix
        if np.max(np.abs(gram - np.eye(n))) > ISOMETRY_TOL:
            logger.error(f"Matrix is not orthogonal: {matrix.tolist()}")
            raise ValueError("Isometry matrix must be orthogonal")
        object.__setattr__(self, "matrix", _frozen_array(matrix, 2))
        object.__setattr__(self, "translation", _frozen_array(translation, 1))
        object.__setattr__(self, "word", tuple(int(w) for w in self.word))

    @property
    def dimension(self):
        return self.translation.shape[0]

    @cached_property
    def determinant(self):
        return float(np.round(np.linalg.det(self.matrix)))

    @cached_property
    def key(self):
        """Hashable rounding of (matrix, translation) used for dedup."""
        parts = np.concatenate([self.matrix.ravel(), self.translation])
        return tuple(np.round(parts, KEY_DECIMALS) + 0.0)

    def __call__(self, x):
        return apply(self, x)

    def __repr__(self):
        return (
            f"Isometry(matrix={self.matrix.tolist()}, "
            f"translation={self.translation.tolist()}, word={self.word})"
        )


def identity(n):
    return Isometry(np.eye(n), np.zeros(n))


def translation(vector):
    vector = np.atleast_1d(np.asarray(vector, dtype=float))
    return Isometry(np.eye(vector.shape[0]), vector)


def isometry_equal(phi, psi, tol=ISOMETRY_TOL):
    if phi.dimension != psi.dimension:
        return False
    return bool(
        np.max(np.abs(phi.matrix - psi.matrix)) <= tol
        and np.max(np.abs(phi.translation - psi.translation)) <= tol
    )


def is_identity(phi, tol=ISOMETRY_TOL):
    return isometry_equal(phi, identity(phi.dimension), tol)


def is_pure_shift(phi, tol=ISOMETRY_TOL):
    return bool(np.max(np.abs(phi.matrix - np.eye(phi.dimension))) <= tol)


def _check_dimensions(n, m, what):
    if n != m:
        logger.error(f"Dimension mismatch in {what}: {n} vs {m}")
        raise ValueError(f"Dimension mismatch in {what}: {n} vs {m}")


def compose(phi, psi):
    """Returns the isometry x -> phi(psi(x)).

    Args:
        phi: The isometry applied second.
        psi: The isometry applied first.

    Returns:
        The composition, whose word is ``phi.word + psi.word``.

    Raises:
        ValueError: If the dimensions differ.
    """
    _check_dimensions(phi.dimension, psi.dimension, "compose")
    return Isometry(
        phi.matrix @ psi.matrix,
        phi.matrix @ psi.translation + phi.translation,
        phi.word + psi.word,
    )


def inverse(phi):
    matrix = phi.matrix.T
    return Isometry(
        matrix,
        -matrix @ phi.translation,
        tuple(-w for w in reversed(phi.word)),
    )


def apply(phi, x):
    """Applies an isometry to one point or to an (m, n) array of points."""
    x = np.asarray(x, dtype=float)
    _check_dimensions(phi.dimension, x.shape[-1], "apply")
    return x @ phi.matrix.T + phi.translation


def apply_many(isometries, x):
    """Images of x under each isometry, stacked along a new first axis."""
    isometries = list(isometries)
    if not isometries:
        logger.error("apply_many needs at least one isometry")
        raise ValueError("apply_many needs at least one isometry")
    return np.stack([apply(phi, x) for phi in isometries])


@dataclass(frozen=True, eq=False)
class CrystalGroup:
    """A finitely generated crystallographic group.

    The fundamental polytope is declared either by its vertices or by
    halfspaces ``normal . x <= offset`` stored as rows
    ``[normal..., offset]``.
    """

    name: str
    dimension: int
    generators: tuple
    lattice_basis: np.ndarray
    polytope_vertices: np.ndarray = None
    polytope_halfspaces: np.ndarray = None
    tolerance: float = ISOMETRY_TOL
    aliases: tuple = field(default=())

    def __post_init__(self):
        n = int(self.dimension)
        if n < 1:
            logger.error(f"Group {self.name}: dimension {n} is not positive")
            raise ValueError(f"Group dimension must be positive, got {n}")
        generators = tuple(self.generators)
        for index, generator in enumerate(generators):
            if generator.dimension != n:
                logger.error(
                    f"Group {self.name}: generator {index} has dimension "
                    f"{generator.dimension}, expected {n}"
                )
                raise ValueError(
                    f"Generator {index} of {self.name} has dimension "
                    f"{generator.dimension}, expected {n}"
                )
        generators = tuple(
            Isometry(g.matrix, g.translation, (index + 1,))
            for index, g in enumerate(generators)
        )
        object.__setattr__(self, "generators", generators)

        lattice = np.array(self.lattice_basis, dtype=float).reshape(-1, n)
        if lattice.shape[0] != n:
            logger.error(
                f"Group {self.name}: lattice basis has {lattice.shape[0]} "
                f"vectors, expected {n}"
            )
            raise ValueError(
                f"Lattice basis of {self.name} needs {n} vectors, "
                f"got {lattice.shape[0]}"
            )
        if abs(np.linalg.det(lattice)) <= 1e-12:
            logger.error(f"Group {self.name}: lattice basis is singular")
            raise ValueError(
                f"Lattice basis of {self.name} is not linearly independent"
            )
        object.__setattr__(self, "lattice_basis", _frozen_array(lattice, 2))

        if self.polytope_vertices is not None:
            vertices = np.array(self.polytope_vertices, dtype=float)
            object.__setattr__(
                self, "polytope_vertices", _frozen_array(vertices, 2)
            )
        if self.polytope_halfspaces is not None:
            halfspaces = np.array(self.polytope_halfspaces, dtype=float)
            object.__setattr__(
                self, "polytope_halfspaces", _frozen_array(halfspaces, 2)
            )
        object.__setattr__(self, "aliases", tuple(self.aliases))
        self._check_lattice_reachable()
        logger.info(
            f"Constructed group {self.name} (n={n}, "
            f"{len(generators)} generators)"
        )

    def _check_lattice_reachable(self):
        """Every lattice vector must be a word in the generators."""
        n = self.dimension
        targets = {translation(v).key: v for v in self.lattice_basis}
        reach = 2.0 * (
            max(np.linalg.norm(v) for v in self.lattice_basis)
            + max(
                (np.linalg.norm(g.translation) for g in self.generators),
                default=0.0,
            )
        ) + 1.0
        found = set()

        def accept(phi):
            return np.linalg.norm(phi.translation) <= reach

        for phi in _word_search(
            self.generators, identity(n), accept, MAX_WORD_LENGTH
        ):
            if phi.key in targets:
                found.add(phi.key)
                if len(found) == len(targets):
                    return
        missing = [targets[k].tolist() for k in targets if k not in found]
        logger.error(
            f"Group {self.name}: lattice vectors {missing} are not "
            "products of the generators"
        )
        raise ValueError(
            f"Lattice vectors {missing} of {self.name} are not reachable "
            "from its generators"
        )

    def polytope(self):
        """Returns the declared fundamental polytope."""
        from .polytope import ConvexPolytope, halfspace_intersection

        if self.polytope_vertices is not None:
            return ConvexPolytope.from_vertices(self.polytope_vertices)
        if self.polytope_halfspaces is not None:
            return halfspace_intersection(self.polytope_halfspaces)
        logger.error(f"Group {self.name} declares no fundamental polytope")
        raise ValueError(f"Group {self.name} declares no fundamental polytope")


def _word_search(generators, start, accept, max_word_length):
    """Breadth-first walk over generator words.

    Yields every accepted element once, in order of word length. Elements
    rejected by ``accept`` are not expanded.

    Raises:
        RuntimeError: If new elements keep appearing beyond
            ``max_word_length``.
    """
    moves = list(generators) + [inverse(g) for g in generators]
    seen = {start.key}
    frontier = deque([start])
    yield start
    depth = 0
    while frontier:
        if depth >= max_word_length:
            logger.error(
                f"Word search did not close within {max_word_length} letters"
            )
            raise RuntimeError(
                f"Group enumeration exceeded word length {max_word_length}; "
                "the generators may not define a discrete group"
            )
        next_frontier = deque()
        for phi in frontier:
            for move in moves:
                psi = compose(phi, move)
                if psi.key in seen:
                    continue
                seen.add(psi.key)
                if not accept(psi):
                    continue
                next_frontier.append(psi)
                yield psi
        frontier = next_frontier
        depth += 1


@dataclass(frozen=True, eq=False)
class LocalGroup:
    """The group elements whose tiles lie near the fundamental polytope."""

    elements: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        if not any(is_identity(phi) for phi in self.elements):
            logger.error("Local group does not contain the identity")
            raise ValueError("Local group must contain the identity")

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def __getitem__(self, index):
        return self.elements[index]

    @property
    def dimension(self):
        return self.elements[0].dimension

    @cached_property
    def matrices(self):
        return np.stack([phi.matrix for phi in self.elements])

    @cached_property
    def translations(self):
        return np.stack([phi.translation for phi in self.elements])

    @cached_property
    def _index(self):
        return {phi.key: i for i, phi in enumerate(self.elements)}

    def index_of(self, phi):
        return self._index.get(phi.key)

    def images(self, x):
        """All images of points x, shape (len(self), m, n) or (len, n)."""
        x = np.asarray(x, dtype=float)
        return (
            np.einsum("kij,...j->k...i", self.matrices, x)
            + self.translations.reshape(
                (len(self),) + (1,) * (x.ndim - 1) + (self.dimension,)
            )
        )


def enumerate_local_group(
    group, polytope, margin=0.0, max_word_length=MAX_WORD_LENGTH
):
    """Collects every element whose tile lies near the polytope.

    Args:
        group: The crystallographic group.
        polytope: Its fundamental polytope.
        margin: Relative enlargement; tiles within
            ``diameter * (1 + margin)`` of the polytope are kept.
        max_word_length: Guard against non-discrete generator sets.

    Returns:
        A LocalGroup in breadth-first order, identity first.

    Raises:
        ValueError: If margin is negative.
        RuntimeError: If the word search does not close.
    """
    from .polytope import diameter, polytope_distance

    if margin < 0:
        logger.error(f"Negative margin {margin}")
        raise ValueError(f"margin must be non-negative, got {margin}")
    n = group.dimension
    diam = diameter(polytope)
    radius = diam * (1.0 + margin)
    center = polytope.centroid
    spread = float(np.max(np.linalg.norm(polytope.vertices - center, axis=1)))
    moves = list(group.generators) + [inverse(g) for g in group.generators]
    step = max(
        (float(np.linalg.norm(apply(g, center) - center)) for g in moves),
        default=0.0,
    )
    ball = radius + 2.0 * spread + 2.0 * step
    prefilter = radius + 2.0 * spread + ISOMETRY_TOL

    logger.info(
        f"Enumerating local group of {group.name}: radius={radius:.4f}, "
        f"search ball={ball:.4f}"
    )

    def accept(phi):
        return np.linalg.norm(apply(phi, center) - center) <= ball

    candidates = [
        phi
        for phi in _word_search(
            group.generators, identity(n), accept, max_word_length
        )
        if np.linalg.norm(apply(phi, center) - center) <= prefilter
    ]
    elements = []
    for phi in tqdm(
        candidates,
        desc=f"local group {group.name}",
        disable=len(candidates) < 500,
    ):
        image = polytope.transformed(phi)
        if polytope_distance(polytope, image) <= radius + FACE_TOL:
            elements.append(phi)
    logger.info(
        f"Local group of {group.name}: {len(elements)} of "
        f"{len(candidates)} candidates within radius"
    )
    return LocalGroup(tuple(elements), radius)


def stabilizer(local_group, x, tol=ISOMETRY_TOL):
    """Elements of the local group fixing x, identity first.

    Raises:
        RuntimeError: If the fixing elements are not closed under
            composition, which means the local group is too small.
    """
    x = np.asarray(x, dtype=float)
    images = local_group.images(x)
    moved = np.linalg.norm(images - x, axis=-1)
    fixing = [local_group[i] for i in np.flatnonzero(moved <= tol)]
    keys = {phi.key for phi in fixing}
    for phi in fixing:
        for psi in fixing:
            if compose(phi, psi).key not in keys:
                logger.error(
                    f"Stabilizer of {x.tolist()} is not closed under "
                    "composition"
                )
                raise RuntimeError(
                    f"Stabilizer of {x.tolist()} is not closed; enlarge the "
                    "local group"
                )
    return fixing


class InvariantBump:
    """Smooth invariant test function built from Gaussian bumps.

    f(x) = sum over the local group of exp(-|phi x - center|^2 / (2 w^2)).
    For narrow bumps centred in the fundamental polytope the truncation to
    the local group is invisible at points of the polytope and its
    neighbouring tiles.
    """

    def __init__(self, local_group, center, width):
        if width <= 0:
            logger.error(f"Non-positive bump width {width}")
            raise ValueError(f"width must be positive, got {width}")
        self.local_group = local_group
        self.center = np.asarray(center, dtype=float)
        self.width = float(width)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        diff = self.local_group.images(x) - self.center
        sq = np.sum(diff**2, axis=-1)
        return np.sum(np.exp(-sq / (2.0 * self.width**2)), axis=0)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        diff = self.local_group.images(x) - self.center
        sq = np.sum(diff**2, axis=-1)
        weight = np.exp(-sq / (2.0 * self.width**2)) / self.width**2
        # d/dx of phi x is the transpose of the rotation part.
        pulled = np.einsum(
            "kji,k...j->k...i", self.local_group.matrices, diff
        )
        return -np.sum(weight[..., None] * pulled, axis=0)


def invariant_bump(local_group, center, width):
    return InvariantBump(local_group, center, width)
