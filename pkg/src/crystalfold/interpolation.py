import logging
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .config import (
    IDW_NEIGHBOURS,
    IDW_POWER,
    KEY_DECIMALS,
    MLS_RADIUS_FACTOR,
)
from .quotient import project_many

logger = logging.getLogger(__name__)

# Neighbour caps for the moving least-squares fit per dimension.
MLS_NEIGHBOURS = {1: 12, 2: 48, 3: 96}
MLS_REGULARIZER = 1e-10
CHUNK = 4096


class NetInterpolator:
    """Invariant interpolation of values sampled on a net.

    The net is unfolded by the local group: every image ``phi(v)`` carries
    the label of ``v``. Queries are first projected to the transversal,
    so every interpolant is constant on orbits.
    """

    def __init__(self, ctx, vertices, spacing):
        self.ctx = ctx
        self.vertices = np.asarray(vertices, dtype=float)
        self.spacing = float(spacing)
        images = ctx.local_group.images(self.vertices)
        labels = np.tile(np.arange(len(self.vertices)), len(images))
        points = images.reshape(-1, ctx.dimension)
        _, first = np.unique(
            np.round(points, KEY_DECIMALS) + 0.0, axis=0, return_index=True
        )
        first = np.sort(first)
        self.points = points[first]
        self.labels = labels[first]
        logger.info(
            f"Unfolded {len(self.vertices)} net points into "
            f"{len(self.points)} images"
        )

    @cached_property
    def tree(self):
        return cKDTree(self.points)

    def idw(self, x, values, neighbours=IDW_NEIGHBOURS, power=IDW_POWER):
        """Inverse-distance weighting over the nearest distinct vertices.

        Exact at net vertices. ``values`` has one row per vertex and may
        carry extra columns.
        """
        values = np.asarray(values, dtype=float)
        x = project_many(self.ctx, x)
        k = min(4 * neighbours, len(self.points))
        result = []
        for start in range(0, len(x), CHUNK):
            distances, index = self.tree.query(x[start : start + CHUNK], k=k)
            distances = distances.reshape(len(index), -1)
            labels = self.labels[index.reshape(len(index), -1)]
            # Keep the nearest copy of each vertex.
            earlier = np.tril(np.ones((k, k), dtype=bool), -1)
            repeated = np.any(
                (labels[:, :, None] == labels[:, None, :]) & earlier, axis=2
            )
            order = np.argsort(repeated, axis=1, kind="stable")[
                :, :neighbours
            ]
            rows = np.arange(len(labels))[:, None]
            distances = distances[rows, order]
            labels = labels[rows, order]
            valid = ~repeated[rows, order]
            weights = np.where(
                valid, 1.0 / np.maximum(distances, 1e-300) ** power, 0.0
            )
            exact = distances[:, 0] <= 1e-12
            weights[exact] = 0.0
            weights[exact, 0] = 1.0
            weights /= weights.sum(axis=1, keepdims=True)
            result.append(np.einsum("mk,mk...->m...", weights, values[labels]))
        return np.concatenate(result)

    def mls(self, x, values):
        """Local-linear moving least squares with Wendland weights.

        The fit radius is fixed, so the interpolant is smooth in x; it is
        used where derivatives are needed.
        """
        values = np.asarray(values, dtype=float)
        x = project_many(self.ctx, x)
        n = self.ctx.dimension
        radius = MLS_RADIUS_FACTOR * self.spacing
        k = min(MLS_NEIGHBOURS[n], len(self.points))
        result = []
        for start in range(0, len(x), CHUNK):
            block = x[start : start + CHUNK]
            distances, index = self.tree.query(
                block, k=k, distance_upper_bound=radius
            )
            distances = distances.reshape(len(block), -1)
            index = index.reshape(len(block), -1)
            found = np.isfinite(distances)
            index = np.where(found, index, 0)
            r = np.where(found, distances / radius, 1.0)
            weights = (1.0 - r) ** 4 * (4.0 * r + 1.0)
            offsets = self.points[index] - block[:, None, :]
            design = np.concatenate(
                [np.ones(offsets.shape[:2] + (1,)), offsets], axis=2
            )
            normal = np.einsum("mk,mki,mkj->mij", weights, design, design)
            normal += MLS_REGULARIZER * np.eye(n + 1)
            samples = values[self.labels[index]]
            rhs = np.einsum(
                "mk,mki,mk...->m...i", weights, design, samples
            )
            if samples.ndim == 2:
                coeffs = np.linalg.solve(normal, rhs[..., None])[..., 0]
                result.append(coeffs[:, 0])
            else:
                coeffs = np.linalg.solve(normal, np.swapaxes(rhs, 1, 2))
                result.append(coeffs[:, 0, :])
        return np.concatenate(result)
