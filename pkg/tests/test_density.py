import numpy as np
import pytest

from nsl.density_toolkit import (
    HermiteGridField,
    airy_orthogonality,
    component_linear_hermite,
    flatten_near_components,
    hperp_basis,
    maly_martio,
    orthogonality_residual,
)
from nsl.fem import EdgeFlux, NodalField, gradient, rotate90
from nsl.geometry import Box, PixelDomain, complement_components
from nsl.mesh import refine, triangulate
from .test_geometry import holed_box

THREE_HOLES = [(0.25, 0.25, 0.09), (0.75, 0.3, 0.09), (0.5, 0.75, 0.09)]


@pytest.fixture(scope="module")
def three_hole_setup():
    dom = holed_box(32, THREE_HOLES)
    box_mesh = triangulate(PixelDomain.full(32))
    elems = hperp_basis(dom, box_mesh, count=5, seed=11)
    return dom, box_mesh, elems


class TestHPerp:
    def test_flux_is_rotated_gradient(self, three_hole_setup):
        dom, box_mesh, elems = three_hole_setup
        for elem in elems:
            gphi = gradient(elem.potential)
            rot = rotate90(gphi)
            # flux = -R grad(phi) restricted to domain triangles
            from nsl.density_toolkit import _domain_triangles_on_box

            on_box = _domain_triangles_on_box(dom, box_mesh, elem.domain_mesh)
            assert np.allclose(elem.flux.vectors, -rot.vectors[on_box])

    def test_unbounded_component_grounded(self, three_hole_setup):
        _, _, elems = three_hole_setup
        for elem in elems:
            assert elem.component_values[0] == 0.0

    def test_orthogonal_to_constants(self, three_hole_setup):
        dom, _, elems = three_hole_setup
        u = NodalField.constant(elems[0].domain_mesh, 3.0)
        assert orthogonality_residual(u, elems[0]) == 0.0

    def test_orthogonal_to_random_p1_fields(self, three_hole_setup):
        dom, _, elems = three_hole_setup
        mesh = elems[0].domain_mesh
        rng = np.random.default_rng(0)
        for elem in elems:
            for _ in range(4):
                u = NodalField(mesh, rng.standard_normal(mesh.n_vertices))
                assert orthogonality_residual(u, elem, p=1.5) <= 1e-10

    def test_negative_control_nonconstant_plateau(self, three_hole_setup):
        dom, box_mesh, elems = three_hole_setup
        # break one plateau: a linear ramp across the first hole
        elem = elems[0]
        labeling = complement_components(dom)
        from nsl.density_toolkit import _component_vertex_ids

        comp = labeling.bounded_ids()[0]
        ids = _component_vertex_ids(box_mesh, labeling, comp)
        bad = NodalField(box_mesh, elem.potential.values.copy())
        bad.values[ids] += 5.0 * (box_mesh.vertices[ids, 0] - 0.25)
        from nsl.density_toolkit import _domain_triangles_on_box

        on_box = _domain_triangles_on_box(dom, box_mesh, elem.domain_mesh)
        flux = EdgeFlux(elem.domain_mesh, -rotate90(gradient(bad)).vectors[on_box])
        from nsl.density_toolkit import HPerpElement

        broken = HPerpElement(bad, dict(elem.component_values), flux, elem.domain_mesh)
        # a probe varying along the broken hole's boundary sees the defect:
        # the boundary sum picks up -slope * (loop area) of the ramp
        mesh = elem.domain_mesh
        u = NodalField.from_function(mesh, lambda x, y: y)
        assert orthogonality_residual(u, broken) > 0.01

    def test_circulation_via_potential_difference(self):
        # crossing identity: integrating the quarter-turned flux along an
        # edge path from the outer boundary into a hole recovers the plateau
        # difference exactly for P1 potentials
        dom = holed_box(16, [(0.5, 0.5, 0.2)])
        box_mesh = triangulate(PixelDomain.full(16))
        elem = hperp_basis(dom, box_mesh, count=1, seed=3)[0]
        labeling = complement_components(dom)
        comp = labeling.bounded_ids()[0]
        c1 = elem.component_values[comp]
        # walk straight up the middle from the bottom edge to the hole
        n = 16
        col = 8
        path = []
        for iy in range(0, 9):
            vid = col * (n + 1) + iy
            path.append(vid)
        phi = elem.potential.values
        leg = sum(phi[b] - phi[a] for a, b in zip(path, path[1:]))
        assert leg == pytest.approx(c1 - 0.0, abs=1e-12)
        # and the same numbers come from the flux paired with rotated edges
        verts = elem.potential.mesh.vertices
        acc = 0.0
        gphi = gradient(elem.potential).vectors
        # edge (a, b) vertical: the P1 gradient along it lives on either
        # adjacent triangle; use values directly (exactness of the identity)
        assert abs(leg - (phi[path[-1]] - phi[path[0]])) < 1e-14

    def test_count_validation(self):
        dom = holed_box(16, [(0.5, 0.5, 0.2)])
        box_mesh = triangulate(PixelDomain.full(16))
        with pytest.raises(ValueError):
            hperp_basis(dom, box_mesh, count=0, seed=1)


class TestFlatten:
    def _phi(self, dom, box_mesh, labeling):
        # smooth potential, exactly constant on component vertices, with a
        # gradient that vanishes quadratically at the components
        from nsl.density_toolkit import _component_vertex_ids
        from scipy.spatial import cKDTree

        consts = {c: (0.0 if c == 0 else 0.5 + 0.5 * c) for c in sorted(labeling.representatives)}
        vals = np.zeros(box_mesh.n_vertices)
        total = np.zeros(box_mesh.n_vertices)
        for c in sorted(labeling.representatives):
            ids = _component_vertex_ids(box_mesh, labeling, c)
            if not len(ids):
                continue
            tree = cKDTree(box_mesh.vertices[ids])
            d, _ = tree.query(box_mesh.vertices)
            t = np.clip(d / 0.18, 0.0, 1.0)
            chi = 1.0 - 3 * t**2 + 2 * t**3  # C1, flat at both ends
            vals += consts[c] * chi
        for c in sorted(labeling.representatives):
            ids = _component_vertex_ids(box_mesh, labeling, c)
            vals[ids] = consts[c]
        return NodalField(box_mesh, vals)

    def test_zero_field_fixed(self):
        dom = holed_box(32, [(0.3, 0.3, 0.1)])
        box_mesh = triangulate(PixelDomain.full(32))
        labeling = complement_components(dom)
        phi = NodalField.constant(box_mesh, 0.0)
        out, rep = flatten_near_components(phi, labeling, 2)
        assert np.allclose(out.values, 0.0)

    def test_plateaus_and_annulus(self):
        dom = holed_box(48, [(0.25, 0.25, 0.08), (0.75, 0.75, 0.08)])
        box_mesh = triangulate(PixelDomain.full(48))
        labeling = complement_components(dom)
        phi = self._phi(dom, box_mesh, labeling)
        out, rep = flatten_near_components(phi, labeling, 2)
        g = gradient(out).vectors
        # gradient vanishes on triangles whose vertices are all in a plateau
        from nsl.density_toolkit import _component_vertex_ids

        for c in labeling.bounded_ids():
            ids = set(_component_vertex_ids(box_mesh, labeling, c).tolist())
            # one-ring around the component: all plateau triangles
            tri_in = np.array(
                [all(int(v) in ids for v in tri) for tri in box_mesh.triangles]
            )
            assert np.allclose(g[tri_in], 0.0)

    def test_projection(self):
        dom = holed_box(32, [(0.5, 0.5, 0.12)])
        box_mesh = triangulate(PixelDomain.full(32))
        labeling = complement_components(dom)
        phi = self._phi(dom, box_mesh, labeling)
        once, _ = flatten_near_components(phi, labeling, 3)
        twice, _ = flatten_near_components(once, labeling, 3)
        assert np.array_equal(once.values, twice.values)

    def test_norm_trace_decreases(self):
        # width ~ 1/n with resolution growing linearly keeps the plateau
        # resolved; the difference norm must fall
        norms = []
        for n in (1, 2, 3, 4):
            res = 24 * n
            dom = holed_box(res, [(0.5, 0.5, 0.1)])
            box_mesh = triangulate(PixelDomain.full(res))
            labeling = complement_components(dom)
            phi = self._phi(dom, box_mesh, labeling)
            out, rep = flatten_near_components(phi, labeling, n, p_dual=3.0)
            norms.append(rep.wdiff_norm)
        assert all(a > b for a, b in zip(norms, norms[1:]))

    def test_nonconstant_input_rejected(self):
        dom = holed_box(32, [(0.5, 0.5, 0.12)])
        box_mesh = triangulate(PixelDomain.full(32))
        labeling = complement_components(dom)
        phi = NodalField.from_function(box_mesh, lambda x, y: x)
        with pytest.raises(ValueError):
            flatten_near_components(phi, labeling, 2)


class TestMalyMartio:
    def test_stage_one_structure(self):
        out = maly_martio(stages=1, grid_n=256)
        (rec,) = out.stages
        assert len(rec.plateau_centers) == 2
        vals = np.sort(rec.plateau_values / out.value_scale)
        assert np.allclose(vals, [-0.5, 0.5], atol=1e-12)
        assert rec.locally_constant
        # zero away from the drill ball
        assert rec.phi.node_value(1.5, 1.5) == 0.0

    def test_budgets_met(self):
        out = maly_martio(stages=3, grid_n=256)
        for rec in out.stages:
            assert rec.increment_norm <= rec.budget

    def test_plateau_values_are_dyadic_midpoints(self):
        out = maly_martio(stages=3, grid_n=256)
        rec = out.stages[-1]
        vals = np.sort(rec.plateau_values / out.value_scale)
        want = np.sort([(2 * j - 1) / 8 for j in range(-3, 5)])
        assert np.allclose(vals, want, atol=1e-12)

    def test_coverage_full(self):
        out = maly_martio(stages=3, grid_n=256)
        for stage, cov, _ in out.coverage:
            assert cov >= 1.0 - 2.0**-stage

    def test_nested_supports(self):
        out = maly_martio(stages=3, grid_n=256)
        for prev, cur in zip(out.stages, out.stages[1:]):
            # every new plateau center lies inside some previous plateau ball
            for c in cur.plateau_centers:
                d = np.min(np.hypot(*(prev.plateau_centers - c).T))
                assert d <= prev.plateau_radius

    def test_decay_trace_decreasing(self):
        out = maly_martio(stages=4, grid_n=512)
        assert all(a >= b for a, b in zip(out.decay_trace, out.decay_trace[1:]))
        assert all(a >= b for a, b in zip(out.alphas, out.alphas[1:]))

    def test_domain_components(self):
        out = maly_martio(stages=3, grid_n=256)
        from nsl.geometry import complement_components, is_admissible_estimate

        lab = complement_components(out.domain)
        assert lab.n_components == 2**3 + 1
        rep = is_admissible_estimate(out.domain, 1.5, [2.0**-k for k in range(2, 9)])
        assert rep.consistent

    def test_truncation_flagged_on_coarse_grid(self):
        out = maly_martio(stages=6, grid_n=128)
        assert out.truncated
        assert len(out.stages) < 6


def checkerboard(x, y):
    return np.sin(3 * x + 0.5) * np.cos(2 * y - 0.2) + 0.3 * x * y


def raw_airy_pairing(v1, v2, pot):
    """Unnormalized modified-Hessian pairing, via the module quadrature."""
    from nsl.density_toolkit import _TRI7_BARY, _TRI7_W, _hessian_at
    from nsl.fem import gradient

    mesh = v1.mesh
    g1 = gradient(v1).vectors
    g2 = gradient(v2).vectors
    e11, e22 = g1[:, 0], g2[:, 1]
    e12 = 0.5 * (g1[:, 1] + g2[:, 0])
    verts = mesh.vertices[mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", _TRI7_BARY, verts)
    dyy, dxx, dxy = _hessian_at(pot, pts)
    integ = dyy * e11[:, None] + dxx * e22[:, None] - 2 * dxy * e12[:, None]
    return float(np.sum(np.einsum("q,tq->t", _TRI7_W, integ) * mesh.areas))


class TestAiry:
    def _setup(self, holes, res=24):
        dom = holed_box(res, holes)
        labeling = complement_components(dom)
        base = HermiteGridField.from_callable(
            Box(0, 0, 1.0),
            res,
            f=checkerboard,
            fx=lambda x, y: 3 * np.cos(3 * x + 0.5) * np.cos(2 * y - 0.2) + 0.3 * y,
            fy=lambda x, y: -2 * np.sin(3 * x + 0.5) * np.sin(2 * y - 0.2) + 0.3 * x,
            fxy=lambda x, y: -6 * np.cos(3 * x + 0.5) * np.sin(2 * y - 0.2) + 0.3,
        )
        return dom, labeling, base

    def test_globally_linear_potential_gives_zero(self):
        dom, labeling, _ = self._setup([(0.5, 0.5, 0.15)])
        lin = HermiteGridField.from_callable(
            Box(0, 0, 1.0),
            24,
            f=lambda x, y: 2 * x - y + 1,
            fx=lambda x, y: np.full_like(x, 2.0),
            fy=lambda x, y: np.full_like(x, -1.0),
            fxy=lambda x, y: np.zeros_like(x),
        )
        mesh = refine(triangulate(dom))
        rng = np.random.default_rng(1)
        v1 = NodalField(mesh, rng.standard_normal(mesh.n_vertices))
        v2 = NodalField(mesh, rng.standard_normal(mesh.n_vertices))
        # the modified Hessian vanishes identically, so the raw pairing is
        # roundoff (the normalized value divides zero by zero here)
        assert abs(raw_airy_pairing(v1, v2, lin)) <= 1e-12

    def test_component_linear_gives_zero(self):
        dom, labeling, base = self._setup([(0.3, 0.3, 0.12), (0.7, 0.7, 0.12)])
        coeffs = {
            c: (np.array([0.4 * c, -0.2]), 0.1 * c)
            for c in sorted(labeling.representatives)
        }
        coeffs[labeling.unbounded_id] = (np.zeros(2), 0.0)
        pot = component_linear_hermite(base, labeling, coeffs)
        mesh = refine(triangulate(dom))
        rng = np.random.default_rng(2)
        for _ in range(3):
            v1 = NodalField(mesh, rng.standard_normal(mesh.n_vertices))
            v2 = NodalField(mesh, rng.standard_normal(mesh.n_vertices))
            assert airy_orthogonality(v1, v2, pot) <= 1e-8

    def test_quadratic_negative_control(self):
        dom, labeling, _ = self._setup([(0.5, 0.5, 0.15)])
        quad = HermiteGridField.from_callable(
            Box(0, 0, 1.0),
            24,
            f=lambda x, y: x * x,
            fx=lambda x, y: 2 * x,
            fy=lambda x, y: np.zeros_like(x),
            fxy=lambda x, y: np.zeros_like(x),
        )
        mesh = refine(triangulate(dom))
        v1 = NodalField.from_function(mesh, lambda x, y: np.zeros_like(x))
        v2 = NodalField.from_function(mesh, lambda x, y: y * y)
        assert airy_orthogonality(v1, v2, quad) >= 1e-3

    def test_bilinear_in_v_and_potential(self):
        dom, labeling, base = self._setup([(0.5, 0.5, 0.15)])
        mesh = refine(triangulate(dom))
        rng = np.random.default_rng(7)
        v1 = NodalField(mesh, rng.standard_normal(mesh.n_vertices))
        v2 = NodalField(mesh, rng.standard_normal(mesh.n_vertices))
        a = raw_airy_pairing(v1, v2, base)
        v1s = NodalField(mesh, 2.0 * v1.values)
        assert raw_airy_pairing(v1s, v2, base) == pytest.approx(
            a + raw_airy_pairing(v1, NodalField.constant(mesh, 0.0), base), rel=1e-9
        )
        doubled = HermiteGridField(
            base.box, base.div, 2 * base.value, 2 * base.dx, 2 * base.dy, 2 * base.dxy
        )
        assert raw_airy_pairing(v1, v2, doubled) == pytest.approx(2 * a, rel=1e-12)
