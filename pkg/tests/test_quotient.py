import numpy as np
import pytest

from crystalfold.config import make_rng
from crystalfold.polytope import contains, sample_points, volume
from crystalfold.quotient import (
    build_context,
    equivalent,
    orbit_points,
    project,
    project_many,
    quotient_distance,
    quotient_distance_many,
)
from crystalfold.registry import WALLPAPER_GROUPS, get_group


@pytest.fixture(scope="module")
def contexts():
    return {
        name: build_context(get_group(name))
        for name in WALLPAPER_GROUPS + ("line-pm",)
    }


class TestBuildContext:
    def test_exact_polytope_is_kept(self, p1_ctx):
        assert p1_ctx.exact
        assert not p1_ctx.rebased
        np.testing.assert_allclose(
            p1_ctx.polytope.vertices, get_group("p1").polytope().vertices
        )

    @pytest.mark.parametrize("name", ["pg", "p3"])
    def test_inexact_polytope_is_rebased(self, contexts, name):
        ctx = contexts[name]
        assert ctx.rebased
        assert ctx.exact

    def test_rebase_can_be_disabled(self):
        ctx = build_context(get_group("pg"), rebase=False)
        assert not ctx.rebased
        assert not ctx.exact

    def test_rebased_cell_has_the_same_volume(self, contexts):
        ctx = contexts["p3"]
        original = get_group("p3").polytope()
        assert volume(ctx.polytope) == pytest.approx(volume(original))


class TestProject:
    def test_p1_wraps_into_unit_square(self, p1_ctx):
        np.testing.assert_allclose(project(p1_ctx, [2.3, -0.7]), [0.3, 0.3])

    def test_line_group(self, line_ctx):
        np.testing.assert_allclose(project(line_ctx, [-1.25]), [0.75])

    def test_line_mirror_group(self, contexts):
        np.testing.assert_allclose(
            project(contexts["line-pm"], [0.8]), [0.2], atol=1e-12
        )

    @pytest.mark.parametrize("name", ["p1", "p2", "p4mm", "p6", "pg", "p3"])
    def test_lands_in_transversal(self, contexts, name):
        ctx = contexts[name]
        points = make_rng(5).uniform(-3.0, 3.0, size=(200, 2))
        projected = project_many(ctx, points)
        assert np.all(contains(ctx.polytope, projected))
        assert np.all(ctx.transversal.contains(projected))

    @pytest.mark.parametrize("name", ["p2", "p4mm", "p6", "pg"])
    def test_invariant_under_group(self, contexts, name):
        ctx = contexts[name]
        rng = make_rng(6)
        points = rng.uniform(-2.0, 2.0, size=(50, 2))
        for phi in ctx.local_group.elements[:12]:
            np.testing.assert_allclose(
                project_many(ctx, phi(points)),
                project_many(ctx, points),
                atol=1e-9,
            )

    def test_idempotent(self, contexts):
        ctx = contexts["p6"]
        points = make_rng(7).uniform(-2.0, 2.0, size=(100, 2))
        once = project_many(ctx, points)
        np.testing.assert_allclose(project_many(ctx, once), once, atol=1e-12)

    def test_result_is_equivalent(self, contexts):
        ctx = contexts["p4mm"]
        x = np.array([1.7, -2.2])
        assert equivalent(ctx, x, project(ctx, x))

    def test_dimension_mismatch(self, p1_ctx):
        with pytest.raises(ValueError, match="Expected points of dimension"):
            project(p1_ctx, [0.1, 0.2, 0.3])


class TestQuotientDistance:
    def test_wraps_across_boundary(self, p1_ctx):
        assert quotient_distance(
            p1_ctx, [0.1, 0.5], [0.9, 0.5]
        ) == pytest.approx(0.2)

    def test_orbit_mates_are_at_zero(self, p2_ctx):
        assert quotient_distance(
            p2_ctx, [0.2, 0.3], [-0.2, -0.3]
        ) == pytest.approx(0.0, abs=1e-9)

    def test_bounded_by_euclidean_distance(self, contexts):
        ctx = contexts["p6"]
        rng = make_rng(8)
        for x, y in rng.uniform(-1.0, 1.0, size=(20, 2, 2)):
            assert quotient_distance(ctx, x, y) <= np.linalg.norm(x - y) + 1e-9

    def test_symmetric_and_invariant(self, contexts):
        ctx = contexts["p4mm"]
        rng = make_rng(9)
        x, y = sample_points(ctx.polytope, 2, rng)
        d = quotient_distance(ctx, x, y)
        assert quotient_distance(ctx, y, x) == pytest.approx(d, abs=1e-9)
        phi = ctx.local_group[5]
        assert quotient_distance(ctx, phi(x), y) == pytest.approx(d, abs=1e-9)

    def test_not_equivalent(self, p1_ctx):
        assert not equivalent(p1_ctx, [0.1, 0.1], [0.2, 0.1])


class TestOrbitPoints:
    def test_p1_orbit(self, p1_ctx):
        orbit = orbit_points(p1_ctx, [0.5, 0.5])
        assert len(orbit) == 25

    def test_fixed_point_collapses(self, p2_ctx):
        generic = orbit_points(p2_ctx, [0.2, 0.3])
        fixed = orbit_points(p2_ctx, [0.0, 0.0])
        assert len(fixed) < len(generic)
        assert len(np.unique(np.round(fixed, 8), axis=0)) == len(fixed)


def boundary_samples(polytope, rng, per_facet=5):
    """Face centroids plus random points on every facet of a polygon."""
    points = [face.centroid for face in polytope.faces]
    for vertex_ids in polytope.facet_vertices:
        a, b = polytope.vertices[list(vertex_ids)][[0, -1]]
        t = rng.uniform(size=(per_facet, 1))
        points.extend(a + t * (b - a))
    return np.array(points)


@pytest.mark.parametrize("name", WALLPAPER_GROUPS)
class TestWallpaperGroups:
    def test_distance_is_a_metric(self, contexts, name):
        ctx = contexts[name]
        rng = make_rng(21)
        x, y, z = rng.uniform(-2.0, 2.0, size=(3, 200, 2))
        xy = quotient_distance_many(ctx, x, y)
        yx = quotient_distance_many(ctx, y, x)
        yz = quotient_distance_many(ctx, y, z)
        xz = quotient_distance_many(ctx, x, z)
        assert np.all(xy >= 0.0)
        np.testing.assert_allclose(xy, yx, atol=1e-9)
        assert np.all(xz <= xy + yz + 1e-9)
        np.testing.assert_allclose(
            quotient_distance_many(ctx, x, x), 0.0, atol=1e-9
        )

    def test_distance_separates_orbits(self, contexts, name):
        ctx = contexts[name]
        x = sample_points(ctx.polytope, 50, make_rng(22))
        y = sample_points(ctx.polytope, 50, make_rng(23))
        assert np.all(quotient_distance_many(ctx, x, y) > 1e-6)
        phi = ctx.local_group[len(ctx.local_group) // 2]
        np.testing.assert_allclose(
            quotient_distance_many(ctx, x, phi(x)), 0.0, atol=1e-9
        )

    def test_transversal_holds_one_point_per_orbit(self, contexts, name):
        ctx = contexts[name]
        rng = make_rng(24)
        points = np.vstack(
            [
                sample_points(ctx.polytope, 1000, rng),
                boundary_samples(ctx.polytope, rng),
            ]
        )
        projected = project_many(ctx, points)
        assert np.all(ctx.transversal.contains(projected))
        images = ctx.local_group.images(projected)
        inside = ctx.transversal.contains(images.reshape(-1, 2)).reshape(
            images.shape[:2]
        )
        offsets = np.linalg.norm(images - projected[None], axis=-1)
        assert np.all(offsets[inside] <= 1e-6)


class TestI23:
    @pytest.fixture(scope="class")
    def i23_ctx(self):
        return build_context(get_group("I23"))

    def test_shipped_pyramid_is_rebased(self, i23_ctx):
        assert i23_ctx.rebased
        assert i23_ctx.exact
        assert i23_ctx.dimension == 3
        assert volume(i23_ctx.polytope) == pytest.approx(1.0 / 24.0)

    def test_lands_in_transversal(self, i23_ctx):
        points = make_rng(25).uniform(-2.0, 2.0, size=(300, 3))
        projected = project_many(i23_ctx, points)
        assert np.all(contains(i23_ctx.polytope, projected))
        assert np.all(i23_ctx.transversal.contains(projected))
        np.testing.assert_allclose(
            project_many(i23_ctx, projected), projected, atol=1e-9
        )

    def test_invariant_under_group(self, i23_ctx):
        points = make_rng(26).uniform(-1.0, 1.0, size=(40, 3))
        reference = project_many(i23_ctx, points)
        for phi in i23_ctx.local_group.elements[:24]:
            np.testing.assert_allclose(
                project_many(i23_ctx, phi(points)), reference, atol=1e-9
            )

    def test_distance_is_symmetric(self, i23_ctx):
        rng = make_rng(27)
        x, y = rng.uniform(-1.0, 1.0, size=(2, 50, 3))
        np.testing.assert_allclose(
            quotient_distance_many(i23_ctx, x, y),
            quotient_distance_many(i23_ctx, y, x),
            atol=1e-9,
        )
        phi = i23_ctx.local_group[7]
        np.testing.assert_allclose(
            quotient_distance_many(i23_ctx, phi(x), x), 0.0, atol=1e-9
        )
