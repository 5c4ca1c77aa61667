"""Command-line interface.

Every command that writes an artifact ``out.ext`` also writes
``out.yml`` with the resolved run configuration.
"""

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd
from yaml import safe_dump, safe_load

from . import io
from .embed import build_embedding
from .group import enumerate_local_group
from .ml import (
    GPSampler,
    InvariantKernel,
    gp_sample_grid,
    svm_predict,
    svm_train,
    threshold_dataset,
)
from .orbitgraph import auto_delta, build_orbit_graph, graph_summary
from .polytope import dirichlet_domain, is_exact, raster
from .quotient import (
    build_context,
    dirichlet_base,
    project,
    quotient_distance,
)
from .registry import get_group, list_groups, resolve_group
from .spectral import basis_raster, eigenbasis_galerkin, eigenbasis_spectral

logger = logging.getLogger(__name__)

METHODS = ("spectral", "galerkin")


@dataclass
class RunConfig:
    """Resolved settings of one CLI run."""

    command: str
    group: str = "p1"
    epsilon: float = 0.05
    delta: str = "auto"
    method: str = "galerkin"
    k: int = 10
    out: str = None
    seed: int = 0
    raster: int = 64
    lengthscale: float = 0.1
    features: int = 1024
    C: float = 1.0
    data: str = None
    x: str = None
    y: str = None
    points: int = 40
    force: bool = False

    @classmethod
    def from_args(cls, args):
        names = {f.name for f in fields(cls)}
        values = {
            key: value
            for key, value in vars(args).items()
            if key in names and value is not None
        }
        return cls(**values)

    def resolved_delta(self, dimension):
        if str(self.delta) == "auto":
            return auto_delta(self.epsilon, dimension)
        try:
            value = float(self.delta)
        except ValueError:
            logger.error(f"Invalid delta {self.delta!r}")
            raise ValueError("delta must be 'auto' or a number")
        if value <= 0:
            logger.error(f"Non-positive delta {value}")
            raise ValueError(f"delta must be positive, got {value}")
        return value

    def settings_dict(self):
        """Returns the settings as plain YAML-friendly values."""
        settings = asdict(self)
        settings["delta"] = str(self.delta)
        return settings

    def save(self, path):
        path = Path(path)
        if path.exists() and not self.force:
            logger.error(f"Refusing to overwrite {path}")
            raise FileExistsError(f"{path} exists; pass --force to overwrite")
        logger.info(f"Saving run configuration to {path}")
        with open(path, "w", encoding="utf8") as f:
            safe_dump(data=self.settings_dict(), stream=f)
        return path

    @classmethod
    def load(cls, settings_path):
        """Reads a configuration written by ``save``.

        Raises:
            FileNotFoundError: If the file does not exist.
            ValueError: If it holds unknown settings.
        """
        settings_path = Path(settings_path)
        if not settings_path.exists():
            logger.error(f"Configuration {settings_path} not found")
            raise FileNotFoundError(f"Configuration {settings_path} not found")
        with open(settings_path, "r", encoding="utf8") as f:
            settings = safe_load(f)
        unknown = set(settings) - {f.name for f in fields(cls)}
        if unknown:
            logger.error(f"Unknown settings {sorted(unknown)}")
            raise ValueError(f"Unknown settings: {', '.join(sorted(unknown))}")
        logger.info(f"Loaded run configuration from {settings_path}")
        return cls(**settings)


def from_yml(yml_path):
    return RunConfig.load(yml_path)


def parse_point(text):
    try:
        return np.array([float(v) for v in str(text).split(",")])
    except ValueError:
        logger.error(f"Invalid point {text!r}")
        raise ValueError(
            f"Invalid point {text!r}; use comma-separated numbers"
        )


def format_point(point):
    return ",".join(f"{v:.12g}" for v in point)


def _output(config, default):
    return Path(config.out or default)


def _warn_rebased(ctx):
    if ctx.rebased:
        print(
            f"warning: polytope of {ctx.group.name} is not exact; re-based "
            "onto a Dirichlet domain",
            file=sys.stderr,
        )


def _context(config):
    group = resolve_group(config.group)
    ctx = build_context(group)
    _warn_rebased(ctx)
    return ctx


def _embedding(config, ctx):
    embedding = build_embedding(
        ctx, config.epsilon, config.resolved_delta(ctx.dimension)
    )
    if embedding.context is not ctx:
        _warn_rebased(embedding.context)
    return embedding


def cmd_groups(config):
    rows = []
    for name in list_groups():
        group = get_group(name)
        polytope = group.polytope()
        exact, _ = is_exact(
            group, polytope, enumerate_local_group(group, polytope)
        )
        rows.append(
            {
                "name": name,
                "dimension": group.dimension,
                "generators": len(group.generators),
                "exact": exact,
            }
        )
    print(pd.DataFrame(rows).to_string(index=False))
    return 0


def cmd_project(config):
    ctx = build_context(resolve_group(config.group))
    print(format_point(project(ctx, parse_point(config.x))))
    return 0


def cmd_distance(config):
    ctx = build_context(resolve_group(config.group))
    distance = quotient_distance(
        ctx, parse_point(config.x), parse_point(config.y)
    )
    print(f"{distance:.12g}")
    return 0


def cmd_orbitgraph(config):
    ctx = _context(config)
    out = _output(config, "graph.json")
    graph = build_orbit_graph(
        ctx, config.epsilon, config.resolved_delta(ctx.dimension)
    )
    io.save_graph(graph, out, ctx, force=config.force)
    io.write_off(
        graph.vertices, graph.edges, out.with_suffix(".off"), config.force
    )
    config.save(out.with_suffix(".yml"))
    for key, value in graph_summary(graph).items():
        print(f"{key}: {value}")
    return 0


def cmd_embed(config):
    ctx = _context(config)
    out = _output(config, "embed.json")
    embedding = _embedding(config, ctx)
    io.save_embedding(embedding, out, force=config.force)
    io.write_off(
        embedding.coordinates,
        embedding.graph.edges,
        out.with_suffix(".off"),
        config.force,
    )
    config.save(out.with_suffix(".yml"))
    print(f"dimension: {embedding.dimension}")
    print(f"strain: {embedding.stress:.6g}")
    print(f"gluing_residual: {embedding.gluing_residual:.6g}")
    return 0


def cmd_basis(config):
    if config.method not in METHODS:
        logger.error(f"Unknown method {config.method!r}")
        raise ValueError(f"method must be one of {', '.join(METHODS)}")
    ctx = _context(config)
    out = _output(config, "basis.json")
    if config.method == "spectral":
        graph = build_orbit_graph(
            ctx, config.epsilon, config.resolved_delta(ctx.dimension)
        )
        basis = eigenbasis_spectral(ctx, graph, config.k)
    else:
        embedding = _embedding(config, ctx)
        basis = eigenbasis_galerkin(embedding.context, embedding, k=config.k)
    io.save_basis(basis, out, force=config.force)
    points, values = basis_raster(basis, config.raster)
    for i in range(len(basis)):
        io.save_raster(
            points,
            values[:, i],
            out.with_name(f"{out.stem}_e{i}.csv"),
            force=config.force,
        )
    config.save(out.with_suffix(".yml"))
    print(",".join(f"{v:.6g}" for v in basis.eigenvalues))
    return 0


def cmd_gp_sample(config):
    ctx = _context(config)
    out = _output(config, "field.csv")
    embedding = _embedding(config, ctx)
    sampler = GPSampler.from_seed(
        embedding, config.lengthscale, config.features, config.seed
    )
    points = raster(ctx.polytope, config.raster)
    io.save_raster(
        points, gp_sample_grid(sampler, points), out, force=config.force
    )
    config.save(out.with_suffix(".yml"))
    print(f"wrote {len(points)} raster values to {out}")
    return 0


def cmd_svm(config):
    ctx = _context(config)
    out = _output(config, "decision.csv")
    embedding = _embedding(config, ctx)
    kernel = InvariantKernel(embedding, config.lengthscale)
    if config.data is None:
        sampler = GPSampler.from_seed(
            embedding, config.lengthscale, config.features, config.seed
        )
        points, labels = threshold_dataset(
            sampler, ctx, config.points, config.seed
        )
    else:
        points, labels = io.read_labelled_points(config.data)
    model = svm_train(kernel, points, labels, config.C)
    accuracy = float(
        np.mean(np.sign(svm_predict(model, points)) == model.labels)
    )
    grid = raster(ctx.polytope, config.raster)
    io.save_raster(grid, svm_predict(model, grid), out, force=config.force)
    config.save(out.with_suffix(".yml"))
    print(f"support vectors: {len(model.support)}")
    print(f"training accuracy: {accuracy:.4f}")
    print(f"converged: {model.converged}")
    return 0


def cmd_dirichlet(config):
    group = resolve_group(config.group)
    out = _output(config, "dirichlet.json")
    polytope = group.polytope()
    wide = enumerate_local_group(group, polytope, margin=1.0)
    if config.x is None:
        base = dirichlet_base(group, wide, polytope)
    else:
        base = parse_point(config.x)
    cell = dirichlet_domain(group, wide, base)
    io.save_dirichlet(cell, out, base, force=config.force)
    config.save(out.with_suffix(".yml"))
    print(f"{len(cell.vertices)} vertices, {len(cell.offsets)} facets")
    return 0


COMMANDS = {
    "groups": cmd_groups,
    "project": cmd_project,
    "distance": cmd_distance,
    "orbitgraph": cmd_orbitgraph,
    "embed": cmd_embed,
    "basis": cmd_basis,
    "gp-sample": cmd_gp_sample,
    "svm": cmd_svm,
    "dirichlet": cmd_dirichlet,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="crystalfold",
        description="Invariant functions of crystallographic groups.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name, help, *options):
        sub = commands.add_parser(name, help=help)
        if "group" in options:
            sub.add_argument(
                "--group", default="p1", help="Group name or JSON file"
            )
        if "net" in options:
            sub.add_argument("--epsilon", type=float, default=0.05)
            sub.add_argument("--delta", default="auto")
        if "out" in options:
            sub.add_argument("--out", help="Output file")
            sub.add_argument("--force", action="store_true")
        if "seed" in options:
            sub.add_argument("--seed", type=int, default=0)
            sub.add_argument("--lengthscale", type=float, default=0.1)
            sub.add_argument("--features", type=int, default=1024)
        if "raster" in options:
            sub.add_argument("--raster", type=int, default=64)
        return sub

    command("groups", "List the builtin groups")
    sub = command("project", "Project a point into the transversal", "group")
    sub.add_argument("-x", required=True, help="Point, e.g. 2.3,-0.7")
    sub = command("distance", "Quotient distance of two points", "group")
    sub.add_argument("-x", required=True)
    sub.add_argument("-y", required=True)
    command("orbitgraph", "Build an orbit graph", "group", "net", "out")
    command("embed", "Embed the quotient space", "group", "net", "out")
    sub = command(
        "basis", "Invariant Fourier basis", "group", "net", "out", "raster"
    )
    sub.add_argument("--method", choices=METHODS, default="galerkin")
    sub.add_argument("-k", type=int, default=10)
    command(
        "gp-sample",
        "Sample an invariant Gaussian process",
        "group",
        "net",
        "out",
        "seed",
        "raster",
    )
    sub = command(
        "svm",
        "Train an invariant SVM",
        "group",
        "net",
        "out",
        "seed",
        "raster",
    )
    sub.add_argument("--C", type=float, default=1.0)
    sub.add_argument("--data", help="CSV with columns x, y[, z], label")
    sub.add_argument("--points", type=int, default=40)
    sub = command("dirichlet", "Compute a Dirichlet domain", "group", "out")
    sub.add_argument("-x", help="Base point; defaults near the centroid")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    config = RunConfig.from_args(args)
    logger.info(f"Running {config.command} with {config.settings_dict()}")
    try:
        return COMMANDS[config.command](config)
    except (
        ValueError,
        KeyError,
        FileNotFoundError,
        FileExistsError,
        RuntimeError,
    ) as error:
        message = error.args[0] if error.args else str(error)
        logger.error(f"{config.command} failed: {message}")
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
