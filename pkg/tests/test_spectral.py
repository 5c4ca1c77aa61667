import numpy as np
import pytest

from crystalfold.embed import build_embedding
from crystalfold.group import invariant_bump
from crystalfold.orbitgraph import build_orbit_graph
from crystalfold.polytope import quadrature_grid, volume
from crystalfold.quotient import build_context
from crystalfold.registry import get_group
from crystalfold.spectral import (
    GalerkinConfig,
    basis_raster,
    boundary_flux,
    boundary_integrals,
    eigen_clusters,
    eigenbasis_galerkin,
    eigenbasis_spectral,
    energy_form,
    interpolate,
    laplacian,
    orthonormality_check,
)

FOUR_PI_SQUARED = 4.0 * np.pi**2


@pytest.fixture(scope="module")
def p1_galerkin(p1_ctx, p1_embedding):
    return eigenbasis_galerkin(p1_ctx, p1_embedding, k=10)


@pytest.fixture(scope="module")
def line_spectral(line_ctx):
    graph = build_orbit_graph(line_ctx, 0.01)
    return eigenbasis_spectral(line_ctx, graph, 5)


def test_eigen_clusters():
    values = [0.0, 39.4, 39.5, 39.6, 79.0]
    assert eigen_clusters(values) == [[0], [1, 2, 3], [4]]


def test_laplacian_rows_sum_to_zero(line_ctx):
    graph = build_orbit_graph(line_ctx, 0.05)
    matrix, weights = laplacian(graph)
    rows = np.asarray(matrix.sum(axis=1)).ravel()
    np.testing.assert_allclose(rows, 0.0, atol=1e-12)
    assert (weights != weights.T).nnz == 0


class TestSpectral:
    def test_circle_eigenvalues(self, line_spectral):
        assert line_spectral.eigenvalues[0] == pytest.approx(0.0, abs=1e-6)
        assert [1, 2] in line_spectral.clusters
        for value in line_spectral.eigenvalues[1:3]:
            assert value == pytest.approx(FOUR_PI_SQUARED, rel=0.1)

    def test_first_function_is_constant(self, line_spectral):
        values = line_spectral.evaluate(np.linspace(0, 1, 17)[:, None])[:, 0]
        np.testing.assert_allclose(values, values[0], rtol=1e-6)
        assert values[0] == pytest.approx(1.0, rel=1e-6)

    def test_invariant(self, line_spectral):
        x = np.array([[0.13], [0.62]])
        np.testing.assert_allclose(
            line_spectral.evaluate(x + 3.0),
            line_spectral.evaluate(x),
            atol=1e-9,
        )

    def test_interpolate_one_function(self, line_spectral):
        value = interpolate(None, line_spectral, 1, [0.25])
        assert value == pytest.approx(line_spectral.evaluate([[0.25]])[0, 1])

    def test_interpolate_out_of_range(self, line_spectral):
        with pytest.raises(ValueError, match="out of range"):
            interpolate(None, line_spectral, 5, [0.25])

    def test_too_many_eigenpairs(self, line_ctx):
        graph = build_orbit_graph(line_ctx, 0.3, 0.3)
        with pytest.raises(ValueError, match="k must be in"):
            eigenbasis_spectral(line_ctx, graph, 10)

    @pytest.mark.slow
    def test_torus_eigenvalues(self, p1_ctx):
        graph = build_orbit_graph(p1_ctx, 0.04)
        basis = eigenbasis_spectral(p1_ctx, graph, 6)
        for value in basis.eigenvalues[1:5]:
            assert value == pytest.approx(FOUR_PI_SQUARED, rel=0.1)
        assert basis.eigenvalues[5] == pytest.approx(
            2 * FOUR_PI_SQUARED, rel=0.1
        )


class TestGalerkin:
    def test_torus_eigenvalues(self, p1_galerkin):
        values = p1_galerkin.eigenvalues
        assert values[0] == pytest.approx(0.0, abs=1e-3)
        for value in values[1:5]:
            assert value == pytest.approx(FOUR_PI_SQUARED, rel=0.05)
        assert values[5] == pytest.approx(2 * FOUR_PI_SQUARED, rel=0.05)

    def test_torus_clusters(self, p1_galerkin):
        assert p1_galerkin.clusters[:2] == [[0], [1, 2, 3, 4]]

    def test_orthonormal(self, p1_ctx, p1_galerkin):
        assert orthonormality_check(p1_ctx, p1_galerkin) <= 0.05

    def test_orthonormality_settles_under_refinement(
        self, p1_ctx, p1_galerkin
    ):
        coarse = orthonormality_check(p1_ctx, p1_galerkin, 96)
        fine = orthonormality_check(p1_ctx, p1_galerkin, 192)
        assert fine <= coarse + 5e-4

    def test_energy_matches_eigenvalues(self, p1_ctx, p1_galerkin):
        def function(i):
            return lambda x: p1_galerkin.evaluate(x)[:, i]

        for i in (1, 5):
            energy = energy_form(p1_ctx, function(i), function(i))
            assert energy == pytest.approx(
                p1_galerkin.eigenvalues[i], rel=0.05
            )
        cross = energy_form(p1_ctx, function(1), function(5))
        assert abs(cross) <= 0.05 * p1_galerkin.eigenvalues[5]

    def test_invariant(self, p1_galerkin, p1_ctx):
        x = np.array([[0.2, 0.7], [0.55, 0.1]])
        for phi in p1_ctx.local_group.elements[:5]:
            np.testing.assert_allclose(
                p1_galerkin.evaluate(phi(x)),
                p1_galerkin.evaluate(x),
                atol=1e-8,
            )

    def test_raster(self, p1_galerkin):
        points, values = basis_raster(p1_galerkin, 9)
        assert points.shape == (81, 2)
        assert values.shape == (81, 10)

    def test_too_many_eigenpairs(self, p1_ctx, p1_galerkin):
        with pytest.raises(ValueError, match="k must be in"):
            eigenbasis_galerkin(
                p1_ctx,
                p1_galerkin.embedding,
                p1_galerkin.config,
                k=len(p1_galerkin.config.centers) + 2,
            )

    def test_rejects_non_positive_width(self, p1_galerkin):
        config = p1_galerkin.config
        with pytest.raises(ValueError, match="width"):
            GalerkinConfig(
                config.centers,
                config.embedded_centers,
                0.0,
                config.nodes,
                config.weights,
                config.step,
            )

    @pytest.mark.slow
    def test_hexagonal_eigenvalues(self):
        ctx = build_context(get_group("p6"))
        embedding = build_embedding(ctx, 0.05)
        basis = eigenbasis_galerkin(ctx, embedding, k=10)
        values = basis.eigenvalues
        assert values[1] == pytest.approx(52.62, rel=0.1)
        assert np.any(np.isclose(values[2:], 157.87, rtol=0.1))

    @pytest.mark.slow
    def test_agrees_with_spectral(self, p1_ctx, p1_galerkin):
        graph = build_orbit_graph(p1_ctx, 0.04)
        spectral = eigenbasis_spectral(p1_ctx, graph, 6)
        np.testing.assert_allclose(
            spectral.eigenvalues[1:6],
            p1_galerkin.eigenvalues[1:6],
            rtol=0.15,
        )


class TestBoundaryFlux:
    def test_position_field(self, p1_ctx):
        flux = boundary_flux(p1_ctx, lambda x: x)
        assert flux == pytest.approx(2 * volume(p1_ctx.polytope), rel=0.01)

    def test_position_field_on_cube(self):
        ctx = build_context(get_group("P1"))
        flux = boundary_flux(ctx, lambda x: x, order=4)
        assert flux == pytest.approx(3.0, rel=0.01)

    @pytest.mark.parametrize("name", ["p1", "p2", "p4", "p6"])
    def test_invariant_gradient_has_no_flux(self, name):
        ctx = build_context(get_group(name))
        bump = invariant_bump(
            ctx.local_group, ctx.polytope.centroid + 0.05, 0.1
        )
        flux, total = boundary_integrals(ctx, bump.gradient)
        assert abs(flux) <= 1e-3 * total

    def test_interval(self, line_ctx):
        flux = boundary_flux(line_ctx, lambda x: np.ones_like(x))
        assert flux == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("name", ["p1", "p2"])
    def test_weighted_gradient_has_no_flux(self, name):
        ctx = build_context(get_group(name))
        centre = ctx.polytope.centroid
        f = invariant_bump(ctx.local_group, centre + 0.05, 0.15)
        h = invariant_bump(ctx.local_group, centre - 0.1, 0.2)
        flux, total = boundary_integrals(
            ctx, lambda x: h(x)[:, None] * f.gradient(x)
        )
        assert total > 0
        assert abs(flux) <= 1e-3 * total

    def test_eigenfunction_product_has_no_flux(self, p1_ctx, p1_galerkin):
        def field(x):
            values = p1_galerkin.evaluate(x)
            return values[:, [1]] * finite_gradient(p1_galerkin, x)[:, :, 2]

        flux, total = boundary_integrals(p1_ctx, field)
        assert abs(flux) <= 1e-3 * total


def finite_gradient(basis, x, step=1e-4):
    """Central-difference gradients of every basis function, (m, n, k)."""
    x = np.atleast_2d(x)
    return np.stack(
        [
            (basis.evaluate(x + step * e) - basis.evaluate(x - step * e))
            / (2.0 * step)
            for e in np.eye(x.shape[1])
        ],
        axis=1,
    )


@pytest.mark.slow
def test_mirror_edges_carry_no_normal_derivative():
    ctx = build_context(get_group("p2mm"))
    basis = eigenbasis_galerkin(ctx, build_embedding(ctx, 0.1), k=6)
    nodes, _ = quadrature_grid(ctx.polytope, 24)
    scale = np.abs(finite_gradient(basis, nodes)[:, :, 1:]).max()

    polytope = ctx.polytope
    t = np.linspace(0.1, 0.9, 9)[:, None]
    worst = 0.0
    for index, vertex_ids in enumerate(polytope.facet_vertices):
        a, b = polytope.vertices[list(vertex_ids)]
        normal = polytope.normals[index]
        points = a + t * (b - a) - 1e-3 * normal
        gradients = finite_gradient(basis, points)[:, :, 1:]
        normal_part = np.einsum("mnk,n->mk", gradients, normal)
        worst = max(worst, float(np.abs(normal_part).max()))
    assert worst <= 0.1 * scale
