import json

import numpy as np
import pandas as pd
import pytest

from crystalfold import io
from crystalfold.orbitgraph import build_orbit_graph
from crystalfold.quotient import build_context
from crystalfold.registry import get_group
from crystalfold.spectral import eigenbasis_galerkin, eigenbasis_spectral


def test_save_json_refuses_to_overwrite(tmp_path):
    path = tmp_path / "data.json"
    io.save_json({"a": 1}, path)
    with pytest.raises(FileExistsError, match="exists; pass"):
        io.save_json({"a": 2}, path)
    io.save_json({"a": 3}, path, force=True)
    assert io.load_json(path) == {"a": 3}


def test_save_json_creates_parents(tmp_path):
    path = io.save_json([1, 2], tmp_path / "nested" / "dir" / "x.json")
    assert path.exists()


def test_load_missing_artifact(tmp_path):
    with pytest.raises(FileNotFoundError, match="not found"):
        io.load_json(tmp_path / "missing.json")


def test_rebased_context_survives(tmp_path):
    ctx = build_context(get_group("pg"))
    again = io.context_from_dict(
        json.loads(json.dumps(io.context_to_dict(ctx)))
    )
    assert again.rebased
    assert again.exact
    np.testing.assert_allclose(again.polytope.vertices, ctx.polytope.vertices)


def test_graph_artifact(tmp_path, line_ctx):
    graph = build_orbit_graph(line_ctx, 0.3, 0.3)
    path = io.save_graph(graph, tmp_path / "graph.json", line_ctx)
    data = io.load_json(path)
    assert data["context"]["group"]["name"] == "line-p1"
    assert len(io.load_graph(path).edges) == 7


def test_embedding_artifact_reproduces_rho(tmp_path, line_embedding):
    path = io.save_embedding(line_embedding, tmp_path / "embed.json")
    loaded = io.load_embedding(path)
    assert loaded.dimension == line_embedding.dimension
    x = np.linspace(-0.5, 1.5, 9)[:, None]
    np.testing.assert_allclose(loaded.rho(x), line_embedding.rho(x), atol=1e-9)


def test_spectral_basis_artifact(tmp_path, line_ctx):
    basis = eigenbasis_spectral(line_ctx, build_orbit_graph(line_ctx, 0.05), 3)
    loaded = io.load_basis(io.save_basis(basis, tmp_path / "spectral.json"))
    assert loaded.method == "spectral"
    x = np.array([[0.1], [0.45]])
    np.testing.assert_allclose(
        loaded.evaluate(x), basis.evaluate(x), atol=1e-9
    )


def test_galerkin_basis_artifact(tmp_path, line_ctx, line_embedding):
    basis = eigenbasis_galerkin(line_ctx, line_embedding, k=3)
    loaded = io.load_basis(io.save_basis(basis, tmp_path / "galerkin.json"))
    assert loaded.embedding is not None
    x = np.array([[0.1], [0.45]])
    np.testing.assert_allclose(
        loaded.evaluate(x), basis.evaluate(x), atol=1e-8
    )


def test_dirichlet_artifact(tmp_path, p1_ctx):
    path = io.save_dirichlet(
        p1_ctx.polytope, tmp_path / "cell.json", [0.5, 0.5]
    )
    cell = io.load_dirichlet(path)
    np.testing.assert_allclose(cell.vertices, p1_ctx.polytope.vertices)
    assert io.load_json(path)["base_point"] == [0.5, 0.5]


class TestRaster:
    def test_single_field_columns(self):
        frame = io.raster_frame([[0.0, 0.0], [1.0, 0.5]], [3.0, 4.0])
        assert list(frame.columns) == ["x", "y", "value"]

    def test_several_fields(self):
        frame = io.raster_frame([[0.0], [1.0]], [[1.0, 2.0], [3.0, 4.0]])
        assert list(frame.columns) == ["x", "value_0", "value_1"]

    def test_csv_has_no_index(self, tmp_path):
        path = io.save_raster(
            [[0, 0, 0], [1, 1, 1]], [0.5, 0.25], tmp_path / "r.csv"
        )
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["x", "y", "z", "value"]
        assert frame["value"].tolist() == [0.5, 0.25]


class TestLabelledPoints:
    def test_reads_points_and_labels(self, tmp_path):
        path = tmp_path / "points.csv"
        pd.DataFrame(
            {"x": [0.1, 0.2], "y": [0.3, 0.4], "label": [1, -1]}
        ).to_csv(path, index=False)
        points, labels = io.read_labelled_points(path)
        np.testing.assert_allclose(points, [[0.1, 0.3], [0.2, 0.4]])
        np.testing.assert_allclose(labels, [1.0, -1.0])

    def test_needs_label_column(self, tmp_path):
        path = tmp_path / "points.csv"
        pd.DataFrame({"x": [0.1], "y": [0.3]}).to_csv(path, index=False)
        with pytest.raises(ValueError, match="label"):
            io.read_labelled_points(path)

    def test_needs_leading_axes(self, tmp_path):
        path = tmp_path / "points.csv"
        pd.DataFrame({"y": [0.1], "label": [1]}).to_csv(path, index=False)
        with pytest.raises(ValueError, match="needs columns"):
            io.read_labelled_points(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            io.read_labelled_points(tmp_path / "none.csv")


def test_write_off(tmp_path):
    path = io.write_off(
        [[0.0, 1.0], [0.5, 0.25]], [[0, 1]], tmp_path / "m.off"
    )
    lines = path.read_text().splitlines()
    assert lines == ["OFF", "2 1 0", "0 1 0", "0.5 0.25 0", "2 0 1"]


def test_write_off_keeps_three_coordinates(tmp_path):
    path = io.write_off(
        [[1.0, 2.0, 3.0, 4.0]], np.zeros((0, 2)), tmp_path / "m.off"
    )
    assert path.read_text().splitlines()[2] == "1 2 3"
