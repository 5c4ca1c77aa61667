import numpy as np
import pandas as pd
import pytest

from crystalfold import io
from crystalfold.config import make_rng
from crystalfold.polytope import contains
from crystalfold.quotient import build_context, project_many
from crystalfold.registry import get_group


@pytest.mark.slow
@pytest.mark.parametrize("name", ["p4mm", "p6", "P1"])
def test_large_projection(name):
    """Projects a large cloud and checks every image lands in the polytope."""
    ctx = build_context(get_group(name))
    points = make_rng(7).uniform(-20.0, 20.0, size=(100_000, ctx.dimension))

    projected = project_many(ctx, points)

    assert projected.shape == points.shape
    assert np.all(contains(ctx.polytope, projected, tol=1e-7))
    assert np.all(ctx.transversal.contains(projected))
    np.testing.assert_allclose(
        project_many(ctx, projected), projected, atol=1e-9
    )


@pytest.mark.slow
def test_large_raster_file(temp_dir, p1_ctx):
    """Writes a large raster and verifies its integrity."""
    points = make_rng(3).uniform(-3.0, 3.0, size=(50_000, 2))
    angles = 2 * np.pi * points
    values = np.sin(angles[:, 0]) * np.cos(angles[:, 1])

    path = io.save_raster(
        project_many(p1_ctx, points),
        values,
        temp_dir / "large.csv",
        force=True,
    )
    frame = pd.read_csv(path)

    assert len(frame) == 50_000
    assert list(frame.columns) == ["x", "y", "value"]
    assert frame[["x", "y"]].min().min() >= -1e-9
    assert frame[["x", "y"]].max().max() <= 1.0 + 1e-9
    np.testing.assert_allclose(frame["value"], values, atol=1e-12)
