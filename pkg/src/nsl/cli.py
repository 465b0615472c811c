"""Command-line entry point: domain/mesh generation, solving, stability and
density experiments, cut optimization, and the self-check table.

All randomness flows from --seed; per-task streams are derived by hashing
(seed, task name, index). Outputs are text and CSV only, with stable column
order, so identical invocations produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import os
import sys
import zlib

import numpy as np

from . import geometry, mesh as meshmod
from .fem import write_field
from .solver import SolverError, read_problem, solve


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def task_rng(seed, name, index=0):
    return np.random.default_rng([seed, zlib.crc32(name.encode()), index])


def _fmt(x):
    return f"{x:.17g}"


def build_parser():
    par = _Parser(prog="nsl", description=__doc__)
    sub = par.add_subparsers(dest="command", required=True)

    p = sub.add_parser("domain", help="generate a pixel domain file")
    p.add_argument("--kind", default="box", choices=["box", "holes", "disk", "comb"])
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--holes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("mesh", help="triangulate a domain file")
    p.add_argument("--domain", required=True)
    p.add_argument("--refine", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("solve", help="solve a Neumann problem on a mesh")
    p.add_argument("--problem", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("stability", help="run a domain-perturbation experiment")
    p.add_argument(
        "--seq",
        choices=[
            "shrinking_hole",
            "comb",
            "slab",
            "fixed_crack_opening",
            "moving_hole",
        ],
    )
    p.add_argument("--config", help="sequence config file (overrides --seq)")
    p.add_argument("--stages", type=int, default=4)
    p.add_argument("--p", type=float, default=1.5)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--load", default="bump", choices=["bump", "unit", "pocket"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("mosco", help="first/second Mosco-condition probes")
    p.add_argument("--seq", required=True, choices=["shrinking_hole", "comb"])
    p.add_argument("--stages", type=int, default=4)
    p.add_argument("--p", type=float, default=1.5)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--out", required=True)

    p = sub.add_parser("cut", help="membrane cut tools")
    cut_sub = p.add_subparsers(dest="cut_command", required=True)
    po = cut_sub.add_parser("optimize")
    po.add_argument("--domain", required=True)
    po.add_argument("--terminals", type=float, nargs=4, required=True,
                    metavar=("X1", "Y1", "X2", "Y2"))
    po.add_argument("--p", type=float, default=1.5)
    po.add_argument("--budget", type=int, default=200)
    po.add_argument("--seed", type=int, default=0)
    po.add_argument("--max-edges", type=int, default=None)
    po.add_argument("--out", required=True)
    pe = cut_sub.add_parser("energy")
    pe.add_argument("--domain", required=True)
    pe.add_argument("--cut", required=True)
    pe.add_argument("--terminals", type=float, nargs=4, required=True,
                    metavar=("X1", "Y1", "X2", "Y2"))
    pe.add_argument("--p", type=float, default=1.5)
    pe.add_argument("--out", required=True)

    p = sub.add_parser("density", help="sample orthogonal fields and report residuals")
    p.add_argument("--domain", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--fields", type=int, default=10)
    p.add_argument("--p", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("maly", help="run the plateau-tree generator")
    p.add_argument("--stages", type=int, default=3)
    p.add_argument("--grid", type=int, default=512)
    p.add_argument("--out", required=True)

    p = sub.add_parser("check", help="run the invariant self-checks")
    p.add_argument("--seed", type=int, default=0)
    return par


def _load_template(p, load):
    from .experiments import ProblemTemplate

    if load == "unit":
        return ProblemTemplate(p=p, b=1.0, f=1.0)
    if load == "pocket":
        return ProblemTemplate(
            p=p,
            b=1.0,
            f=lambda x, y: 1.0 + 8.0 * ((np.abs(x - 0.5) < 0.125) & (y > 0.5)),
        )
    return ProblemTemplate(p=p, b=1.0, f=lambda x, y: 1.0 + 2.0 * x)


def _sequence(name, resolution, stages):
    from .experiments import DomainSequence

    if name == "comb":
        return DomainSequence(
            "fattening_obstacle", resolution=resolution, stages=stages,
            params={"mode": "comb"},
        )
    if name == "slab":
        return DomainSequence(
            "fattening_obstacle", resolution=resolution, stages=stages,
            params={"mode": "slab"},
        )
    return DomainSequence(name, resolution=resolution, stages=stages)


def cmd_domain(args):
    n = args.resolution
    if args.kind == "box":
        dom = geometry.PixelDomain.full(n)
    elif args.kind == "disk":
        dom = geometry.PixelDomain.from_predicate(
            n, geometry.Box(-1, -1, 2.0), lambda x, y: x * x + y * y < 1.0
        )
    elif args.kind == "comb":
        dom = _sequence("comb", n, 3).member(3)
    else:
        rng = task_rng(args.seed, "domain")
        mask = np.ones((n, n), bool)
        h = 1.0 / n
        c = (np.arange(n) + 0.5) * h
        X, Y = np.meshgrid(c, c, indexing="ij")
        placed = 0
        while placed < args.holes:
            cx, cy = rng.uniform(0.2, 0.8, 2)
            w = rng.uniform(0.04, 0.1)
            hole = (np.abs(X - cx) < w) & (np.abs(Y - cy) < w)
            if not hole.any():
                continue
            mask &= ~hole
            placed += 1
        dom = geometry.PixelDomain(n, mask, geometry.Box(0, 0, 1.0))
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    geometry.write_domain(args.out, dom)
    return 0


def cmd_mesh(args):
    dom = geometry.read_domain(args.domain)
    m = meshmod.triangulate(dom)
    for _ in range(args.refine):
        m = meshmod.refine(m)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    meshmod.write_mesh(args.out, m)
    return 0


def cmd_solve(args):
    m = meshmod.read_mesh(args.mesh)
    spec = read_problem(args.problem, m)
    rep = solve(m, spec)
    os.makedirs(args.out, exist_ok=True)
    write_field(os.path.join(args.out, "u.csv"), rep.solution, os.path.basename(args.mesh))
    with open(os.path.join(args.out, "report.txt"), "w") as f:
        f.write(f"converged = {rep.converged}\n")
        f.write(f"newton_iters = {rep.newton_iters}\n")
        f.write(f"el_residual = {_fmt(rep.el_residual)}\n")
        f.write(f"epsilon_final = {_fmt(rep.epsilon_trace[-1])}\n")
        f.write("energy_trace = " + ",".join(_fmt(e) for e in rep.energy_trace) + "\n")
    return 0


def cmd_stability(args):
    from .experiments import read_sequence, run_stability, write_stability_csv, write_verdict

    if args.config:
        seq = read_sequence(args.config)
    elif args.seq:
        seq = _sequence(args.seq, args.resolution, args.stages)
    else:
        raise ValueError("stability needs --seq or --config")
    tpl = _load_template(args.p, args.load)
    rep = run_stability(seq, tpl)
    os.makedirs(args.out, exist_ok=True)
    write_stability_csv(os.path.join(args.out, "stability.csv"), rep)
    write_verdict(os.path.join(args.out, "verdict.txt"), rep)
    return 0


def cmd_mosco(args):
    from .experiments import mosco_m1_probe, mosco_m2_probe
    from .fem import NodalField
    from .mesh import triangulate

    seq = _sequence(args.seq, args.resolution, args.stages)
    lm = seq.limit_mesh()
    u = NodalField.from_function(lm, lambda x, y: x)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "mosco.csv"), "w") as f:
        f.write("stage,m1_deficiency\n")
        for n in range(1, args.stages + 1):
            val = mosco_m1_probe(seq.member(n), lm, u, args.p)
            f.write(f"{n},{_fmt(val)}\n")
    doms = [seq.member(n) for n in range(1, args.stages + 1)]
    fields = [NodalField.from_function(triangulate(d), lambda x, y: x) for d in doms]
    m2 = mosco_m2_probe(doms, fields, seq.limit(), args.p)
    with open(os.path.join(args.out, "m2.txt"), "w") as f:
        f.write(f"grad_consistency_defect = {_fmt(m2.grad_consistency_defect)}\n")
        f.write(f"outside_value_defect = {_fmt(m2.outside_value_defect)}\n")
        f.write(f"outside_flux_defect = {_fmt(m2.outside_flux_defect)}\n")
        f.write(f"outside_flux_mass = {_fmt(m2.outside_flux_mass)}\n")
    return 0


def cmd_cut(args):
    from .cutting import (
        CutProblem,
        cut_energy,
        optimize_cut,
        read_cut,
        write_cut,
        write_trace_csv,
        vertex_at,
    )

    dom = geometry.read_domain(args.domain)
    g = lambda x, y: x
    if args.cut_command == "optimize":
        res = optimize_cut(
            dom,
            ((args.terminals[0], args.terminals[1]), (args.terminals[2], args.terminals[3])),
            CutProblem(p=args.p),
            g,
            budget=args.budget,
            seed=args.seed,
            max_edges=args.max_edges,
        )
        os.makedirs(args.out, exist_ok=True)
        write_cut(os.path.join(args.out, "cut.txt"), res.best_cut)
        write_trace_csv(os.path.join(args.out, "trace.csv"), res.trace)
        with open(os.path.join(args.out, "energy.txt"), "w") as f:
            f.write(_fmt(res.best_report.energy) + "\n")
        return 0
    m = meshmod.triangulate(dom)
    t1 = vertex_at(m, args.terminals[0], args.terminals[1])
    t2 = vertex_at(m, args.terminals[2], args.terminals[3])
    cut = read_cut(args.cut, m, (t1, t2))
    rep = cut_energy(dom, cut, CutProblem(p=args.p), g)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "energy.txt"), "w") as f:
        f.write(_fmt(rep.energy) + "\n")
    write_field(os.path.join(args.out, "u.csv"), rep.solution, args.domain)
    return 0


def cmd_density(args):
    from .density_toolkit import hperp_basis, orthogonality_residual
    from .fem import NodalField
    from .mesh import triangulate

    dom = geometry.read_domain(args.domain)
    box_mesh = triangulate(geometry.PixelDomain.full(dom.resolution, dom.box))
    elems = hperp_basis(dom, box_mesh, count=args.count, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for k, elem in enumerate(elems):
        rng = task_rng(args.seed, "density-fields", k)
        worst = 0.0
        for _ in range(args.fields):
            u = NodalField(
                elem.domain_mesh, rng.standard_normal(elem.domain_mesh.n_vertices)
            )
            worst = max(worst, orthogonality_residual(u, elem, p=args.p))
        rows.append((k, worst))
        write_field(
            os.path.join(args.out, f"potential_{k}.csv"), elem.potential, "boxmesh"
        )
        with open(os.path.join(args.out, f"component_values_{k}.csv"), "w") as f:
            f.write("component,value\n")
            for c, v in sorted(elem.component_values.items()):
                f.write(f"{c},{_fmt(v)}\n")
    with open(os.path.join(args.out, "residuals.csv"), "w") as f:
        f.write("element,max_residual\n")
        for k, worst in rows:
            f.write(f"{k},{_fmt(worst)}\n")
    return 0


def cmd_maly(args):
    from .density_toolkit import maly_martio, write_coverage_csv

    out = maly_martio(stages=args.stages, grid_n=args.grid)
    os.makedirs(args.out, exist_ok=True)
    write_coverage_csv(os.path.join(args.out, "coverage.csv"), out)
    geometry.write_domain(os.path.join(args.out, "domain.txt"), out.domain)
    for rec in out.stages:
        with open(os.path.join(args.out, f"stage_{rec.index}.csv"), "w") as f:
            f.write("ix,iy,value\n")
            nz = np.nonzero(rec.phi.values)
            for ix, iy in zip(*nz):
                f.write(f"{ix},{iy},{rec.phi.values[ix, iy]:.17g}\n")
    with open(os.path.join(args.out, "summary.txt"), "w") as f:
        f.write(f"stages = {len(out.stages)}\n")
        f.write(f"value_scale = {_fmt(out.value_scale)}\n")
        f.write(f"truncated = {out.truncated}\n")
        f.write("alphas = " + ",".join(_fmt(a) for a in out.alphas) + "\n")
        f.write("decay_trace = " + ",".join(_fmt(d) for d in out.decay_trace) + "\n")
    return 0


def cmd_check(args):
    """Fast invariant table over all modules; exits 1 on any failure."""
    from .density_toolkit import maly_martio
    from .experiments import DomainSequence, ProblemTemplate, run_stability
    from .fem import EdgeFlux, NodalField, gradient, helmholtz_split, l2_inner, lp_norm
    from .mesh import refine, triangulate
    from .solver import ProblemSpec

    checks = []
    rng = task_rng(args.seed, "check")

    dom = geometry.PixelDomain.full(16)
    m = triangulate(dom)
    checks.append(("mesh area matches domain measure",
                   abs(float(m.areas.sum()) - geometry.lebesgue_measure(dom)) < 1e-12))
    fine = refine(m)
    checks.append(("refinement preserves area",
                   abs(float(fine.areas.sum() - m.areas.sum())) < 1e-12))

    k1 = geometry.CompactSet.from_points(rng.random((8, 2)))
    k2 = geometry.CompactSet.from_points(rng.random((5, 2)))
    d12 = geometry.hausdorff_distance(k1, k2, 2.0)
    checks.append(("hausdorff symmetry",
                   d12 == geometry.hausdorff_distance(k2, k1, 2.0)))
    checks.append(("empty-set convention",
                   geometry.hausdorff_distance(geometry.CompactSet.empty(), k1, 2.0) == 2.0))

    w = EdgeFlux(m, rng.standard_normal((m.n_triangles, 2)))
    gpart, sigma, _ = helmholtz_split(w)
    ortho = abs(l2_inner(gpart, sigma)) <= 1e-10 * max(
        lp_norm(gpart, 2) * lp_norm(sigma, 2), 1e-30
    )
    recombine = np.allclose(gpart.vectors + sigma.vectors, w.vectors)
    checks.append(("helmholtz split orthogonal and exact", ortho and recombine))

    rep = solve(m, ProblemSpec(p=1.5, b=1.0, f=8.0))
    checks.append(("constant balance solution",
                   abs(rep.solution.values.max() - 64.0) < 1e-4))
    tr = rep.energy_trace
    checks.append(("energy descent",
                   all(a >= b - 1e-10 * (1 + abs(a)) for a, b in zip(tr, tr[1:]))))

    out = maly_martio(stages=2, grid_n=256)
    checks.append(("plateau budgets met",
                   all(r.increment_norm <= r.budget for r in out.stages)))

    seq = DomainSequence("shrinking_hole", resolution=16, stages=4)
    srep = run_stability(seq, ProblemTemplate(p=1.5, b=1.0, f=1.0))
    checks.append(("shrinking-hole verdict stable", srep.verdict == "stable"))

    width = max(len(name) for name, _ in checks)
    failed = 0
    for name, ok in checks:
        print(f"{name:<{width}}  {'pass' if ok else 'FAIL'}")
        if not ok:
            failed += 1
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else 1


_COMMANDS = {
    "domain": cmd_domain,
    "mesh": cmd_mesh,
    "solve": cmd_solve,
    "stability": cmd_stability,
    "mosco": cmd_mosco,
    "cut": cmd_cut,
    "density": cmd_density,
    "maly": cmd_maly,
    "check": cmd_check,
}


def main(argv=None):
    par = build_parser()
    try:
        args = par.parse_args(argv)
    except _Usage as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        par.print_usage(sys.stderr)
        return 64
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: missing input file: {exc.filename}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SolverError as exc:
        print(f"error: solver did not converge: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
