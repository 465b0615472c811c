import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsl.fem import (
    EdgeFlux,
    NodalField,
    extend_by_zero,
    flatten_levels,
    flatten_map,
    gradient,
    helmholtz_split,
    indicator_grid,
    l2_inner,
    lp_gap,
    lp_norm,
    lp_norm_scalar,
    mean_normalize,
    read_field,
    read_flux,
    rotate90,
    truncate,
    tri_values,
    write_field,
    write_flux,
)
from nsl.geometry import Box, PixelDomain, lebesgue_measure
from nsl.mesh import refine, triangulate

from .test_geometry import holed_box


@pytest.fixture
def box16():
    return triangulate(PixelDomain.full(16))


class TestGradient:
    def test_constant_field(self, box16):
        g = gradient(NodalField.constant(box16, 3.7))
        assert np.allclose(g.vectors, 0.0)

    def test_linear_x(self, box16):
        g = gradient(NodalField.from_function(box16, lambda x, y: x))
        assert np.allclose(g.vectors[:, 0], 1.0)
        assert np.allclose(g.vectors[:, 1], 0.0)

    def test_affine(self, box16):
        g = gradient(NodalField.from_function(box16, lambda x, y: 3 * x + 4 * y - 1))
        assert np.allclose(g.vectors, [3.0, 4.0])

    def test_linearity(self, box16):
        rng = np.random.default_rng(0)
        u = rng.random(box16.n_vertices)
        v = rng.random(box16.n_vertices)
        gu = gradient(NodalField(box16, u)).vectors
        gv = gradient(NodalField(box16, v)).vectors
        guv = gradient(NodalField(box16, 2 * u - 3 * v)).vectors
        assert np.allclose(guv, 2 * gu - 3 * gv)


class TestNorms:
    def test_zero_field(self, box16):
        assert lp_norm(EdgeFlux(box16, np.zeros((box16.n_triangles, 2))), 1.5) == 0.0

    def test_constant_vector_unit_area(self, box16):
        w = EdgeFlux(box16, np.tile([3.0, 4.0], (box16.n_triangles, 1)))
        assert lp_norm(w, 2.0) == pytest.approx(5.0)

    def test_scalar_norm_vs_exact_under_refinement(self):
        # centroid quadrature of x^2 on the unit box against the exact 1/3
        errs = []
        for n in (8, 16, 32):
            mesh = triangulate(PixelDomain.full(n))
            u = NodalField.from_function(mesh, lambda x, y: x)
            errs.append(abs(lp_norm_scalar(u, 2.0) - 1.0 / np.sqrt(3.0)))
        assert errs[2] <= 0.02 / np.sqrt(3.0)
        assert errs[0] > errs[1] > errs[2]

    def test_p_below_one_rejected(self, box16):
        with pytest.raises(ValueError):
            lp_norm_scalar(NodalField.constant(box16, 1.0), 0.5)


class TestExtendByZero:
    def test_full_box_identity(self, box16):
        target = PixelDomain.full(16)
        u = NodalField.from_function(box16, lambda x, y: x + y)
        gf = extend_by_zero(u, target)
        assert gf.data.shape == (16, 16, 2)
        # L2 norm matches the mesh-side quadrature on the same half-cells
        assert gf.lp(2.0) == pytest.approx(lp_norm_scalar(u, 2.0), rel=1e-12)

    def test_half_box_mass(self):
        n = 16
        mask = np.zeros((n, n), bool)
        mask[: n // 2, :] = True
        dom = PixelDomain(n, mask, Box(0, 0, 1.0))
        mesh = triangulate(dom)
        gf = extend_by_zero(NodalField.constant(mesh, 1.0), PixelDomain.full(n))
        assert gf.lp(1.0) == pytest.approx(0.5)

    def test_indicator_gap_is_symmetric_difference(self):
        n = 32
        d1 = holed_box(n, [(0.25, 0.25, 0.125)])
        d2 = holed_box(n, [(0.75, 0.75, 0.25)])
        target = PixelDomain.full(n)
        g1 = indicator_grid(d1, target)
        g2 = indicator_grid(d2, target)
        sym = lebesgue_measure(d1) + lebesgue_measure(d2) - 2 * (
            np.count_nonzero(d1.open_mask & d2.open_mask) * d1.cell_size**2
        )
        assert lp_gap(g1, g2, 1.0) == pytest.approx(sym, rel=1e-12)

    def test_box_mismatch_rejected(self, box16):
        u = NodalField.constant(box16, 1.0)
        with pytest.raises(ValueError):
            extend_by_zero(u, PixelDomain.full(16, Box(0, 0, 2.0)))

    def test_flux_exact_on_refined_target(self):
        dom = holed_box(8, [(0.5, 0.5, 0.25)])
        mesh = triangulate(dom)
        w = gradient(NodalField.from_function(mesh, lambda x, y: x * x))
        target = PixelDomain.full(16)
        gf = extend_by_zero(w, target)
        assert gf.lp(1.5) == pytest.approx(lp_norm(w, 1.5), rel=1e-12)


class TestTruncate:
    def test_noop_below_level(self, box16):
        u = NodalField.from_function(box16, lambda x, y: 0.3 * x)
        v = truncate(u, 1.0)
        assert np.array_equal(u.values, v.values)

    def test_clamps(self, box16):
        u = NodalField.from_function(box16, lambda x, y: x)
        v = truncate(u, 0.5)
        assert v.values.max() == 0.5
        assert np.all(np.abs(v.values) <= 0.5)

    def test_gradient_vanishes_on_fully_clamped_triangles(self, box16):
        u = NodalField.from_function(box16, lambda x, y: x)
        v = truncate(u, 0.5)
        g = gradient(v).vectors
        clamped = np.all(tri_values_matrix(box16, v.values) >= 0.5 - 1e-14, axis=1)
        assert np.allclose(g[clamped], 0.0)

    def test_gradient_never_grows_on_uniform_patterns(self, box16):
        u = NodalField.from_function(box16, lambda x, y: np.sin(7 * x) + y)
        v = truncate(u, 0.6)
        gu = np.hypot(*gradient(u).vectors.T)
        gv = np.hypot(*gradient(v).vectors.T)
        raw = box16.triangles
        uu = u.values[raw]
        uniform = (
            np.all(uu <= -0.6, axis=1)
            | np.all(np.abs(uu) <= 0.6, axis=1)
            | np.all(uu >= 0.6, axis=1)
        )
        assert np.all(gv[uniform] <= gu[uniform] + 1e-12)

    def test_bad_level(self, box16):
        with pytest.raises(ValueError):
            truncate(NodalField.constant(box16, 1.0), 0.0)


def tri_values_matrix(mesh, values):
    return values[mesh.triangles]


class TestFlatten:
    def test_single_level_closed_form(self):
        tn = flatten_map([0.0], 2)
        ys = np.array([-2.0, -0.5, -0.2, 0.0, 0.3, 0.5, 1.7])
        expect = np.array([-1.5, 0.0, 0.0, 0.0, 0.0, 0.0, 1.2])
        assert np.allclose(tn(ys), expect)

    def test_constant_through_its_level(self, box16):
        phi = NodalField.constant(box16, 4.2)
        out = flatten_levels(phi, [4.2], 3)
        g = gradient(out)
        assert np.allclose(g.vectors, 0.0)
        assert np.allclose(out.values, out.values[0])

    def test_output_gradient_zero_on_frozen_triangles(self, box16):
        phi = NodalField.from_function(box16, lambda x, y: x)
        out = flatten_levels(phi, [0.5], 4)
        g = gradient(out).vectors
        frozen = np.all(np.abs(phi.values[box16.triangles] - 0.5) <= 0.25, axis=1)
        assert np.allclose(g[frozen], 0.0)

    def test_w1p_distance_decreases_in_n(self):
        mesh = triangulate(PixelDomain.full(32))
        phi = NodalField.from_function(mesh, lambda x, y: np.sin(3 * x + y))
        dists = []
        for n in (2, 4, 8, 16, 32, 64, 128):
            out = flatten_levels(phi, [0.0, 0.5], n)
            diff = NodalField(mesh, out.values - phi.values)
            dists.append(lp_norm_scalar(diff, 1.5) + lp_norm(gradient(diff), 1.5))
        assert all(a > b for a, b in zip(dists, dists[1:]))

    @given(st.integers(1, 60))
    @settings(max_examples=30, deadline=None)
    def test_one_lipschitz_in_values(self, n):
        tn = flatten_map([0.0, 0.3, -1.2], n)
        ys = np.linspace(-3, 3, 301)
        zs = ys + 0.017
        assert np.max(np.abs(tn(ys) - tn(zs))) <= 0.017 + 1e-12


class TestMeanNormalize:
    def test_zero_mean_unchanged(self, box16):
        u = NodalField.from_function(box16, lambda x, y: x - 0.5)
        out = mean_normalize(u, np.arange(box16.n_triangles))
        assert np.allclose(out.values, u.values, atol=1e-14)

    def test_constant_to_zero(self, box16):
        u = NodalField.constant(box16, 2.5)
        out = mean_normalize(u, np.arange(box16.n_triangles))
        assert np.allclose(out.values, 0.0)

    def test_idempotent(self, box16):
        u = NodalField.from_function(box16, lambda x, y: x * y + 1.0)
        subset = np.arange(box16.n_triangles // 2)
        once = mean_normalize(u, subset)
        twice = mean_normalize(once, subset)
        assert np.allclose(once.values, twice.values, atol=1e-13)

    def test_empty_subset_rejected(self, box16):
        with pytest.raises(ValueError):
            mean_normalize(NodalField.constant(box16, 1.0), np.array([], dtype=int))


class TestHelmholtz:
    def test_pure_gradient_input(self, box16):
        v = NodalField.from_function(box16, lambda x, y: np.sin(2 * x) * y)
        w = gradient(v)
        gpart, sigma, pot = helmholtz_split(w)
        assert lp_norm(sigma, 2.0) <= 1e-10 * max(lp_norm(w, 2.0), 1e-30)

    def test_rotated_compact_gradient(self, box16):
        # the quarter turn of a gradient of a field vanishing on the boundary
        # is discretely divergence-free
        def bump(x, y):
            return np.maximum(0.0, 0.25 - (x - 0.5) ** 2 - (y - 0.5) ** 2) ** 2

        v = NodalField.from_function(box16, bump)
        w = rotate90(gradient(v))
        gpart, sigma, pot = helmholtz_split(w)
        assert lp_norm(gpart, 2.0) <= 1e-10 * lp_norm(w, 2.0)

    def test_random_field_recombines_and_orthogonal(self, box16):
        rng = np.random.default_rng(5)
        w = EdgeFlux(box16, rng.standard_normal((box16.n_triangles, 2)))
        gpart, sigma, pot = helmholtz_split(w)
        recompose = gpart.vectors + sigma.vectors
        assert np.max(np.abs(recompose - w.vectors)) <= 1e-12 * np.max(
            np.abs(w.vectors)
        )
        denom = lp_norm(gpart, 2.0) * lp_norm(sigma, 2.0)
        assert abs(l2_inner(gpart, sigma)) <= 1e-10 * max(denom, 1e-30)

    def test_sigma_orthogonal_to_all_gradients(self, box16):
        rng = np.random.default_rng(6)
        w = EdgeFlux(box16, rng.standard_normal((box16.n_triangles, 2)))
        _, sigma, _ = helmholtz_split(w)
        for seed in range(3):
            r = np.random.default_rng(seed).standard_normal(box16.n_vertices)
            g = gradient(NodalField(box16, r))
            assert abs(l2_inner(sigma, g)) <= 1e-9 * lp_norm(sigma, 2.0) * lp_norm(
                g, 2.0
            )

    def test_disconnected_mesh_handled(self):
        n = 8
        mask = np.zeros((n, n), bool)
        mask[:3, :] = True
        mask[5:, :] = True
        mesh = triangulate(PixelDomain(n, mask, Box(0, 0, 1.0)))
        rng = np.random.default_rng(1)
        w = EdgeFlux(mesh, rng.standard_normal((mesh.n_triangles, 2)))
        gpart, sigma, pot = helmholtz_split(w)
        assert np.allclose(gpart.vectors + sigma.vectors, w.vectors)


class TestFieldIO:
    def test_field_roundtrip(self, tmp_path, box16):
        u = NodalField.from_function(box16, lambda x, y: x * y)
        path = tmp_path / "u.csv"
        write_field(path, u, "m.txt")
        back = read_field(path, box16)
        assert np.allclose(back.values, u.values)

    def test_flux_roundtrip(self, tmp_path, box16):
        w = gradient(NodalField.from_function(box16, lambda x, y: x - y * y))
        path = tmp_path / "w.csv"
        write_flux(path, w, "m.txt")
        back = read_flux(path, box16)
        assert np.allclose(back.vectors, w.vectors)
