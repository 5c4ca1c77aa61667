import logging
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .config import (
    EQUIVALENCE_TOL,
    KEY_DECIMALS,
    PROJECT_DECIMALS,
)
from .group import enumerate_local_group, stabilizer
from .polytope import (
    ConvexPolytope,
    Transversal,
    compute_transversal,
    diameter,
    dirichlet_domain,
    is_exact,
)

logger = logging.getLogger(__name__)

# Step used to move a Dirichlet base point off fixed points.
PERTURBATION = np.array([0.0731, 0.0417, 0.0293])


@dataclass(frozen=True, eq=False)
class QuotientContext:
    """Everything needed to compute in the quotient space of a group.

    ``basis_change`` has the lattice vectors as columns and maps shift
    coordinates to standard coordinates.
    """

    group: object
    polytope: ConvexPolytope
    local_group: object
    projection_group: object
    transversal: Transversal
    basis_change: np.ndarray
    basis_inverse: np.ndarray
    exact: bool
    witnesses: dict = field(default_factory=dict)
    rebased: bool = False

    @property
    def dimension(self):
        return self.group.dimension

    @property
    def diameter(self):
        return diameter(self.polytope)


def _cell_reach(basis_change):
    """Largest distance from the centre of a lattice cell to its corners."""
    n = basis_change.shape[0]
    corners = np.array(list(product((-0.5, 0.5), repeat=n)))
    return float(np.max(np.linalg.norm(corners @ basis_change.T, axis=1)))


def dirichlet_base(group, local_group, polytope):
    base = polytope.centroid.copy()
    step = PERTURBATION[: group.dimension] * diameter(polytope)
    for _ in range(16):
        if len(stabilizer(local_group, base)) == 1:
            return base
        base = base + step
    logger.error(f"No free base point found near {polytope.centroid}")
    raise RuntimeError("Could not find a base point with trivial stabilizer")


def build_context(group, polytope=None, rebase=True):
    """Assembles the quotient context of a group.

    Args:
        group: The crystallographic group.
        polytope: Fundamental polytope; defaults to the group's own.
        rebase: Replace a non-exact polytope by a Dirichlet domain.

    Returns:
        A QuotientContext. ``rebased`` is set when the polytope was
        replaced.
    """
    if polytope is None:
        polytope = group.polytope()
    local_group = enumerate_local_group(group, polytope)
    exact, witnesses = is_exact(group, polytope, local_group)
    if not exact and rebase:
        logger.warning(
            f"Polytope of {group.name} is not exact; re-basing onto a "
            "Dirichlet domain"
        )
        wide = enumerate_local_group(group, polytope, margin=1.0)
        base = dirichlet_base(group, wide, polytope)
        cell = dirichlet_domain(group, wide, base)
        context = build_context(group, cell, rebase=False)
        return QuotientContext(
            context.group,
            context.polytope,
            context.local_group,
            context.projection_group,
            context.transversal,
            context.basis_change,
            context.basis_inverse,
            context.exact,
            context.witnesses,
            rebased=True,
        )
    if not exact:
        logger.warning(
            f"Polytope of {group.name} is not exact; the transversal is "
            "approximate on its boundary"
        )

    basis_change = np.array(group.lattice_basis, dtype=float).T
    basis_inverse = np.linalg.inv(basis_change)
    reach = _cell_reach(basis_change)
    margin = max(0.0, reach / diameter(polytope) - 1.0)
    projection_group = enumerate_local_group(group, polytope, margin=margin)
    transversal = compute_transversal(group, polytope, local_group)
    logger.info(
        f"Quotient context for {group.name}: |L|={len(local_group)}, "
        f"|L_proj|={len(projection_group)}, exact={exact}"
    )
    return QuotientContext(
        group,
        polytope,
        local_group,
        projection_group,
        transversal,
        basis_change,
        basis_inverse,
        exact,
        witnesses,
    )


def project_many(ctx, points):
    """Transversal representatives of the orbits of many points.

    Raises:
        RuntimeError: If some point has no image in the transversal.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != ctx.dimension:
        logger.error(
            f"Points of dimension {points.shape[1]} for a "
            f"{ctx.dimension}-d group"
        )
        raise ValueError(
            f"Expected points of dimension {ctx.dimension}, got "
            f"{points.shape[1]}"
        )
    # Reduce into the lattice cell centred on the polytope centroid.
    start = ctx.basis_inverse @ ctx.polytope.centroid - 0.5
    shift = points @ ctx.basis_inverse.T
    reduced = (start + np.mod(shift - start, 1.0)) @ ctx.basis_change.T

    result = np.full_like(reduced, np.nan)
    pending = np.arange(len(reduced))
    for phi in ctx.projection_group:
        if len(pending) == 0:
            break
        images = phi(reduced[pending])
        hits = ctx.transversal.contains(images)
        result[pending[hits]] = images[hits]
        pending = pending[~hits]
    if len(pending):
        logger.error(
            f"{len(pending)} points have no image in the transversal, "
            f"first {points[pending[0]].tolist()}"
        )
        raise RuntimeError(
            f"No local-group element maps {points[pending[0]].tolist()} "
            "into the transversal"
        )
    return np.round(result, PROJECT_DECIMALS) + 0.0


def project(ctx, x):
    """Transversal representative of the orbit of x."""
    return project_many(ctx, np.asarray(x, dtype=float)[None, :])[0]


def quotient_distance_many(ctx, x, y, reduce=True):
    """Row-wise quotient distances between two arrays of points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if reduce:
        x, y = project_many(ctx, x), project_many(ctx, y)
    images = ctx.local_group.images(y)
    return np.min(np.linalg.norm(images - x[None], axis=-1), axis=0)


def quotient_distance(ctx, x, y, reduce=True):
    """Distance between the orbits of x and y.

    Args:
        ctx: The quotient context.
        x: A point.
        y: A point.
        reduce: Project both points first; set to False when they are
            already in the polytope.

    Returns:
        The minimum over the local group of ``|x - phi(y)|``.
    """
    return float(quotient_distance_many(ctx, [x], [y], reduce)[0])


def equivalent(ctx, x, y, tol=EQUIVALENCE_TOL):
    return quotient_distance(ctx, x, y) <= tol


def orbit_points(ctx, x):
    """Distinct images of x under the local group."""
    images = ctx.local_group.images(np.asarray(x, dtype=float))
    _, first = np.unique(
        np.round(images, KEY_DECIMALS) + 0.0, axis=0, return_index=True
    )
    return images[np.sort(first)]
