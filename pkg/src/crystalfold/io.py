"""Reading and writing of crystalfold artifacts.

JSON artifacts carry the group definition and polytope they were built
on, so that loading one rebuilds the quotient context it refers to.
Rasters are CSV files with the fixed column order ``x, y[, z], value``.
"""

import dataclasses
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .embed import Embedding
from .orbitgraph import OrbitGraph
from .polytope import ConvexPolytope, dirichlet_domain_json
from .quotient import build_context
from .registry import group_from_dict, group_to_dict
from .spectral import EigenBasis, GalerkinConfig

logger = logging.getLogger(__name__)

AXES = ("x", "y", "z")


def _prepare(path, force):
    path = Path(path)
    if path.exists() and not force:
        logger.error(f"Refusing to overwrite {path}")
        raise FileExistsError(f"{path} exists; pass force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def save_json(data, path, force=False):
    path = _prepare(path, force)
    path.write_text(json.dumps(data, indent=2), encoding="utf8")
    logger.info(f"Wrote {path}")
    return path


def load_json(path):
    path = Path(path)
    if not path.exists():
        logger.error(f"Artifact {path} not found")
        raise FileNotFoundError(f"Artifact {path} not found")
    with open(path, "r", encoding="utf8") as f:
        data = json.load(f)
    logger.info(f"Read {path}")
    return data


def context_to_dict(ctx):
    return {
        "group": group_to_dict(ctx.group),
        "polytope": ctx.polytope.to_dict(),
        "rebased": bool(ctx.rebased),
    }


def context_from_dict(data):
    """Rebuilds a context on the stored polytope, without re-basing."""
    group = group_from_dict(data["group"])
    polytope = ConvexPolytope.from_dict(data["polytope"])
    ctx = build_context(group, polytope, rebase=False)
    return dataclasses.replace(ctx, rebased=bool(data["rebased"]))


def save_graph(graph, path, ctx=None, force=False):
    data = {"graph": graph.to_dict()}
    if ctx is not None:
        data["context"] = context_to_dict(ctx)
    return save_json(data, path, force)


def load_graph(path):
    return OrbitGraph.from_dict(load_json(path)["graph"])


def embedding_to_dict(embedding):
    data = embedding.to_dict()
    data["context"] = context_to_dict(embedding.context)
    return data


def embedding_from_dict(data, ctx=None):
    ctx = context_from_dict(data["context"]) if ctx is None else ctx
    return Embedding(
        ctx,
        OrbitGraph.from_dict(data["graph"]),
        np.array(data["coordinates"], dtype=float),
        int(data["dimension"]),
        np.array(data["mds_eigenvalues"], dtype=float),
        float(data["stress"]),
        float(data["gluing_residual"]),
        float(data["epsilon"]),
    )


def save_embedding(embedding, path, force=False):
    return save_json(embedding_to_dict(embedding), path, force)


def load_embedding(path):
    return embedding_from_dict(load_json(path))


def save_basis(basis, path, force=False):
    data = basis.to_dict()
    data["context"] = context_to_dict(basis.context)
    if basis.embedding is not None:
        data["embedding"] = embedding_to_dict(basis.embedding)
    return save_json(data, path, force)


def load_basis(path):
    """Reads an eigenbasis, with its embedding for Galerkin bases."""
    data = load_json(path)
    ctx = context_from_dict(data["context"])
    graph = config = embedding = None
    if "graph" in data:
        graph = OrbitGraph.from_dict(data["graph"])
    if "embedding" in data:
        embedding = embedding_from_dict(data["embedding"])
    if "galerkin" in data:
        settings = data["galerkin"]
        config = GalerkinConfig(
            np.array(settings["centers"], dtype=float),
            np.array(settings["embedded_centers"], dtype=float),
            float(settings["width"]),
            np.array(settings["nodes"], dtype=float),
            np.array(settings["weights"], dtype=float),
            float(settings["step"]),
        )
    raw = data.get("raw_eigenvalues")
    return EigenBasis(
        np.array(data["eigenvalues"], dtype=float),
        np.array(data["vectors"], dtype=float),
        data["method"],
        ctx,
        [list(cluster) for cluster in data["clusters"]],
        None if raw is None else np.array(raw, dtype=float),
        float(data["scale"]),
        float(data["calibration"]),
        graph=graph,
        config=config,
        embedding=embedding,
    )


def save_dirichlet(polytope, path, base_point=None, force=False):
    path = _prepare(path, force)
    path.write_text(dirichlet_domain_json(polytope, base_point), "utf8")
    logger.info(f"Wrote Dirichlet domain to {path}")
    return path


def load_dirichlet(path):
    return ConvexPolytope.from_dict(load_json(path))


def raster_frame(points, values, names=None):
    """A raster as a DataFrame with columns ``x, y[, z]`` then values.

    Args:
        points: Raster points, one per row.
        values: One value per point, or one column per field.
        names: Value column names; ``["value"]`` for a single field and
            ``value_0, value_1, ...`` otherwise.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float).reshape(len(points), -1)
    if names is None:
        names = (
            ["value"]
            if values.shape[1] == 1
            else [f"value_{i}" for i in range(values.shape[1])]
        )
    frame = pd.DataFrame(points, columns=list(AXES[: points.shape[1]]))
    for name, column in zip(names, values.T):
        frame[name] = column
    return frame


def save_raster(points, values, path, names=None, force=False):
    path = _prepare(path, force)
    frame = raster_frame(points, values, names)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {len(frame)} raster rows to {path}")
    return path


def read_labelled_points(path):
    """Points and labels from a CSV with columns ``x, y[, z], label``.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If the label column or coordinate columns are missing.
    """
    path = Path(path)
    if not path.exists():
        logger.error(f"Point file {path} not found")
        raise FileNotFoundError(f"Point file {path} not found")
    frame = pd.read_csv(path)
    if "label" not in frame.columns:
        logger.error(f"Point file {path} has no label column")
        raise ValueError(f"Point file {path} has no 'label' column")
    axes = [axis for axis in AXES if axis in frame.columns]
    if not axes or axes != list(AXES[: len(axes)]):
        logger.error(f"Point file {path} has columns {list(frame.columns)}")
        raise ValueError(f"Point file {path} needs columns x, y[, z]")
    logger.info(f"Read {len(frame)} labelled points from {path}")
    return (
        frame[axes].to_numpy(dtype=float),
        frame["label"].to_numpy(dtype=float),
    )


def write_off(coordinates, edges, path, force=False):
    """OFF mesh of points joined by edges, stored as two-vertex faces.

    Only the first three coordinates are written; lower-dimensional
    points are padded with zeros.
    """
    path = _prepare(path, force)
    coordinates = np.atleast_2d(np.asarray(coordinates, dtype=float))
    padded = np.zeros((len(coordinates), 3))
    width = min(3, coordinates.shape[1])
    padded[:, :width] = coordinates[:, :width]
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    lines = ["OFF", f"{len(padded)} {len(edges)} 0"]
    lines += [" ".join(f"{v:.12g}" for v in row) for row in padded]
    lines += [f"2 {i} {j}" for i, j in edges]
    path.write_text("\n".join(lines) + "\n", encoding="utf8")
    logger.info(
        f"Wrote OFF mesh with {len(padded)} vertices and {len(edges)} edges "
        f"to {path}"
    )
    return path
