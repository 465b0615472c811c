import numpy as np
import pytest

from nsl.cutting import (
    CutPath,
    CutProblem,
    cut_energy,
    cut_stability,
    optimize_cut,
    read_cut,
    shortest_path,
    vertex_at,
    write_cut,
    write_trace_csv,
)
from nsl.geometry import PixelDomain
from nsl.mesh import refine, triangulate

from .oracles import enumerate_simple_paths

G_LINEAR = lambda x, y: x


def vpath(mesh, pts):
    return CutPath.from_vertices(mesh, [vertex_at(mesh, x, y) for x, y in pts])


class TestCutEnergy:
    def test_constant_datum_zero_energy(self):
        dom = PixelDomain.full(4)
        mesh = triangulate(dom)
        cut = vpath(mesh, [(0.5, 0.25), (0.5, 0.5), (0.5, 0.75)])
        rep = cut_energy(dom, cut, CutProblem(p=1.5), lambda x, y: 2.0)
        assert rep.energy == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(rep.solution.values, 2.0, atol=1e-9)

    def test_uncut_control_energy_one(self):
        # a single edge has no interior vertex and cannot open; the p = 2
        # energy of the x-datum on the unit box is exactly one
        dom = PixelDomain.full(8)
        mesh = triangulate(dom)
        cut = vpath(mesh, [(0.5, 0.5), (0.5, 0.625)])
        rep = cut_energy(dom, cut, CutProblem(p=2.0), G_LINEAR)
        assert rep.energy == pytest.approx(1.0, rel=1e-9)

    def test_longer_cut_relieves(self):
        dom = PixelDomain.full(8)
        mesh = triangulate(dom)
        long = vpath(mesh, [(0.5, y / 8) for y in range(1, 8)])
        rep = cut_energy(dom, long, CutProblem(p=1.5), G_LINEAR)
        assert rep.energy < 1.0

    def test_antitone_on_random_nested_pairs(self):
        rng = np.random.default_rng(12)
        dom = PixelDomain.full(6)
        mesh = triangulate(dom)
        prob = CutProblem(p=1.5)
        adj = mesh.vertex_adjacency
        checked = 0
        while checked < 15:
            start = int(rng.integers(0, mesh.n_vertices))
            path = [start]
            for _ in range(int(rng.integers(2, 6))):
                nxt = sorted(adj[path[-1]] - set(path))
                if not nxt:
                    break
                path.append(nxt[int(rng.integers(0, len(nxt)))])
            if len(path) < 4:
                continue
            sub = path[: int(rng.integers(2, len(path)))]
            if len(sub) < 2:
                continue
            small = CutPath.from_vertices(mesh, sub)
            big = CutPath.from_vertices(mesh, path)
            e_small = cut_energy(dom, small, prob, G_LINEAR).energy
            e_big = cut_energy(dom, big, prob, G_LINEAR).energy
            assert e_big <= e_small + 1e-10
            checked += 1

    def test_crack_faces_natural_condition(self):
        # duplicated crack vertices are free unknowns; their residual rows
        # sit below the solver tolerance at convergence
        dom = PixelDomain.full(8)
        mesh = triangulate(dom)
        cut = vpath(mesh, [(0.5, y / 8) for y in range(2, 7)])
        rep = cut_energy(dom, cut, CutProblem(p=1.5), G_LINEAR)
        assert rep.el_residual <= 1e-6 * 10

    def test_terminal_validation(self):
        dom = PixelDomain.full(4)
        mesh = triangulate(dom)
        with pytest.raises(ValueError):
            CutPath([], (0, 1), mesh)
        with pytest.raises(ValueError):
            CutPath([(0, 1)], (0, mesh.n_vertices - 1), mesh)


class TestOptimize:
    def test_constant_datum_returns_initialization(self):
        dom = PixelDomain.full(4)
        res = optimize_cut(
            dom, ((0.5, 0.5), (0.5, 0.75)), CutProblem(p=1.5), lambda x, y: 1.0,
            budget=60, seed=3, max_edges=6,
        )
        mesh = res.best_cut.mesh
        t1 = vertex_at(mesh, 0.5, 0.5)
        t2 = vertex_at(mesh, 0.5, 0.75)
        init = shortest_path(mesh, t1, t2)
        assert res.best_report.energy == pytest.approx(0.0, abs=1e-12)
        assert res.best_cut.edges == CutPath.from_vertices(mesh, init).edges

    def test_matches_exhaustive_enumeration(self):
        dom = PixelDomain.full(4)
        mesh = triangulate(dom)
        prob = CutProblem(p=1.5)
        t1 = vertex_at(mesh, 0.5, 0.5)
        t2 = vertex_at(mesh, 0.5, 0.75)
        paths = enumerate_simple_paths(mesh.vertex_adjacency, t1, t2, max_edges=6)
        assert len(paths) > 20
        best = None
        for path in paths:
            cut = CutPath.from_vertices(mesh, path)
            e = cut_energy(dom, cut, prob, G_LINEAR).energy
            key = (e, tuple(sorted(cut.edges)))
            if best is None:
                best = (e, cut)
                continue
            eb, cb = best
            if e > eb + 1e-12 or (
                abs(e - eb) <= 1e-12
                and (
                    len(cut.edges) < len(cb.edges)
                    or (
                        len(cut.edges) == len(cb.edges)
                        and tuple(sorted(cut.edges)) < tuple(sorted(cb.edges))
                    )
                )
            ):
                best = (e, cut)
        res = optimize_cut(
            dom, ((0.5, 0.5), (0.5, 0.75)), prob, G_LINEAR,
            budget=400, seed=11, max_edges=6,
        )
        assert res.best_report.energy == pytest.approx(best[0], abs=1e-8)
        assert res.best_cut.edges == best[1].edges

    def test_doubling_coefficient_scales_energy_keeps_argmax(self):
        dom = PixelDomain.full(4)
        kw = dict(budget=150, seed=5, max_edges=6)
        r1 = optimize_cut(dom, ((0.5, 0.5), (0.5, 0.75)), CutProblem(p=1.5), G_LINEAR, **kw)
        r2 = optimize_cut(
            dom, ((0.5, 0.5), (0.5, 0.75)), CutProblem(p=1.5, a=2.0), G_LINEAR, **kw
        )
        assert r2.best_report.energy == pytest.approx(2 * r1.best_report.energy, rel=1e-9)
        assert r2.best_cut.edges == r1.best_cut.edges

    def test_datum_scaling_equivariance(self):
        dom = PixelDomain.full(4)
        p = 1.5
        kw = dict(budget=150, seed=5, max_edges=6)
        r1 = optimize_cut(dom, ((0.5, 0.5), (0.5, 0.75)), CutProblem(p=p), G_LINEAR, **kw)
        r2 = optimize_cut(
            dom, ((0.5, 0.5), (0.5, 0.75)), CutProblem(p=p), lambda x, y: 2 * x, **kw
        )
        assert r2.best_report.energy == pytest.approx(
            2**p * r1.best_report.energy, rel=1e-4
        )
        assert r2.best_cut.edges == r1.best_cut.edges

    def test_deterministic_given_seed(self):
        dom = PixelDomain.full(4)
        kw = dict(budget=80, seed=9, max_edges=6)
        a = optimize_cut(dom, ((0.25, 0.5), (0.5, 0.5)), CutProblem(p=1.5), G_LINEAR, **kw)
        b = optimize_cut(dom, ((0.25, 0.5), (0.5, 0.5)), CutProblem(p=1.5), G_LINEAR, **kw)
        assert a.best_cut.edges == b.best_cut.edges
        assert [r[1] for r in a.trace] == [r[1] for r in b.trace]

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            optimize_cut(
                PixelDomain.full(4), ((0.25, 0.5), (0.5, 0.5)),
                CutProblem(p=1.5), G_LINEAR, budget=0, seed=0,
            )


class TestCutStability:
    def test_constant_sequence_zero_gap(self):
        dom = PixelDomain.full(8)
        mesh = triangulate(dom)
        cut = vpath(mesh, [(0.5, y / 8) for y in range(2, 7)])
        rows = cut_stability(dom, [cut, cut], cut, CutProblem(p=1.5), G_LINEAR)
        for r in rows:
            assert r.dh == 0.0
            assert r.grad_gap <= 1e-6

    def test_detour_sequence_gap_decreases(self):
        dom = PixelDomain.full(8)
        base = triangulate(dom)
        prob = CutProblem(p=1.5)
        meshes = [base]
        for _ in range(3):
            meshes.append(refine(meshes[-1]))

        def straight_ids(mesh, y0, y1):
            m = mesh.grid_div
            ys = [iy / m for iy in range(round(y0 * m), round(y1 * m) + 1)]
            return [vertex_at(mesh, 0.5, y) for y in ys]

        def detour_cut(mesh):
            # one-fine-cell square bump around the midpoint vertex
            h = mesh.box.side / mesh.grid_div
            ids = straight_ids(mesh, 0.25, 0.5 - h)
            bump = [
                vertex_at(mesh, 0.5 + h, 0.5 - h),
                vertex_at(mesh, 0.5 + h, 0.5),
                vertex_at(mesh, 0.5 + h, 0.5 + h),
            ]
            tail = straight_ids(mesh, 0.5 + h, 0.75)
            return CutPath.from_vertices(mesh, ids + bump + tail)

        cuts = [detour_cut(m) for m in meshes[1:]]
        limit_cut = CutPath.from_vertices(meshes[-1], straight_ids(meshes[-1], 0.25, 0.75))
        rows = cut_stability(dom, cuts, limit_cut, prob, G_LINEAR)
        dhs = [r.dh for r in rows]
        gaps = [r.grad_gap for r in rows]
        assert all(a > b for a, b in zip(dhs, dhs[1:]))
        assert gaps[-1] < gaps[0]

    def test_cut_file_roundtrip(self, tmp_path):
        dom = PixelDomain.full(6)
        mesh = triangulate(dom)
        cut = vpath(mesh, [(0.5, 1 / 3), (0.5, 0.5), (0.5, 2 / 3)])
        write_cut(tmp_path / "cut.txt", cut)
        back = read_cut(tmp_path / "cut.txt", mesh, cut.terminals)
        assert sorted(back.edges) == sorted(cut.edges)

    def test_trace_csv(self, tmp_path):
        dom = PixelDomain.full(4)
        res = optimize_cut(
            dom, ((0.5, 0.5), (0.5, 0.75)), CutProblem(p=1.5), G_LINEAR,
            budget=25, seed=1, max_edges=6,
        )
        write_trace_csv(tmp_path / "trace.csv", res.trace)
        lines = (tmp_path / "trace.csv").read_text().splitlines()
        assert lines[0] == "step,energy,accepted,temperature"
        assert len(lines) == 27
