"""Domain-sequence generators and the perturbation-stability runner.

Members and the limit are solved at one common resolution and compared
through zero-extensions on the shared pixel grid, so discretization bias
cancels at first order. Verdicts are statements about the finite traces
under the documented thresholds, not about the continuum limit.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fem import (
    NodalField,
    extend_by_zero,
    gradient,
    lp_gap,
    stiffness_matrix,
)
from .geometry import (
    Box,
    CompactSet,
    PixelDomain,
    complement_components,
    hausdorff_distance,
    lebesgue_measure,
)
from .mesh import CrackMesh, slit, triangulate
from .solver import ProblemSpec, SolverError, solve


def worker_count():
    env = os.environ.get("NSL_WORKERS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


@dataclass
class ProblemTemplate:
    """Coefficient data as callables over the box, sampled per member mesh."""

    p: float
    b: object = 0.0  # scalar or callable(x, y)
    f: object = 0.0
    g: object = 0.0
    a: object = None
    epsilon0: float = 1e-2

    def _sample(self, v, c, default=0.0):
        if v is None:
            return np.full(len(c), default)
        if callable(v):
            return np.asarray(v(c[:, 0], c[:, 1]), float)
        return np.full(len(c), float(v))

    def instantiate(self, mesh: CrackMesh) -> ProblemSpec:
        c = mesh.centroids
        a = self._sample(self.a, c, 1.0) if self.a is not None else 1.0
        return ProblemSpec(
            p=self.p,
            b=self._sample(self.b, c),
            f=self._sample(self.f, c),
            g_load=self._sample(self.g, c),
            a=a,
            operator="scaled" if self.a is not None else "p_laplacian",
            epsilon0=self.epsilon0,
        )

    def b_positive_measure(self, dom: PixelDomain) -> float:
        """Measure of the domain intersected with the positivity set of b."""
        pts = dom.cell_centers()
        if callable(self.b):
            pos = np.asarray(self.b(pts[:, 0], pts[:, 1])) > 0
        else:
            pos = np.full(len(pts), float(self.b) > 0)
        return float(np.count_nonzero(pos)) * dom.cell_size**2


@dataclass
class DomainSequence:
    """A family of perturbed domains with an explicit limit member.

    Kinds: shrinking_hole (hole radius r0 / 2^n, floored at one cell),
    fattening_obstacle (mode "slab": constant-width rectangle with
    shrinking height; mode "comb": top-hung teeth of constant total
    measure refining toward a solid block), fixed_crack_opening
    (slot shrinking onto a slit), moving_hole (fixed hole translating by
    d0 / 2^n), maly_martio_stagewise.
    """

    kind: str
    resolution: int
    stages: int
    box: Box = Box(0.0, 0.0, 1.0)
    params: dict = field(default_factory=dict)

    def _holed(self, cx, cy, half_w):
        h = self.box.side / self.resolution
        half_w = max(half_w, h)  # smallest representable hole

        def inside(x, y):
            return ~((np.abs(x - cx) < half_w) & (np.abs(y - cy) < half_w))

        return PixelDomain.from_predicate(self.resolution, self.box, inside)

    def _comb_mask(self, n_or_limit):
        p = self.params
        n = self.resolution
        cols = p.get("cols", (n // 2 - n // 8, n // 2 + n // 8))
        rows = p.get("rows", (n // 2, n))  # hangs from the top boundary
        mask = np.ones((n, n), bool)
        width = cols[1] - cols[0]
        if n_or_limit == "limit":
            mask[cols[0] : cols[1], rows[0] : rows[1]] = False
            return mask
        k = n_or_limit
        period = width // 2 ** (k - 1)
        if period < 2:
            period = 2
        tooth = period // 2
        for c0 in range(cols[0], cols[1], period):
            mask[c0 : c0 + tooth, rows[0] : rows[1]] = False
        return mask

    def member(self, n: int) -> PixelDomain:
        if not (1 <= n <= self.stages):
            raise ValueError(f"member index {n} outside 1..{self.stages}")
        p = self.params
        h = self.box.side / self.resolution
        if self.kind == "shrinking_hole":
            r0 = p.get("r0", 0.8)
            return self._holed(*p.get("center", (0.5, 0.5)), r0 * 2.0**-n)
        if self.kind == "moving_hole":
            w0 = p.get("w0", 0.125)
            d0 = p.get("d0", 0.25)
            cx, cy = p.get("center", (0.5, 0.5))
            shift = round(d0 * 2.0**-n / h) * h
            return self._holed(cx + shift, cy, w0)
        if self.kind == "fattening_obstacle":
            if p.get("mode", "comb") == "comb":
                return PixelDomain(self.resolution, self._comb_mask(n), self.box)
            w0 = p.get("w0", 0.25)
            h0 = p.get("h0", 0.5)
            height = max(h0 * 2.0**-n, h)

            def inside(x, y):
                return ~(
                    (np.abs(x - 0.5) < w0 / 2) & (np.abs(y - 0.5) < height / 2)
                )

            return PixelDomain.from_predicate(self.resolution, self.box, inside)
        if self.kind == "fixed_crack_opening":
            y0 = p.get("y0", 0.5)
            xa, xb = p.get("span", (0.25, 0.75))
            o0 = p.get("o0", 0.125)
            o = max(o0 * 2.0**-n, 0.6 * h)

            def inside(x, y):
                return ~((np.abs(y - y0) < o) & (x > xa) & (x < xb))

            return PixelDomain.from_predicate(self.resolution, self.box, inside)
        if self.kind == "maly_martio_stagewise":
            from .density_toolkit import maly_martio

            return maly_martio(stages=n, grid_n=self.resolution).domain
        raise ValueError(f"unknown sequence kind {self.kind!r}")

    def limit(self) -> PixelDomain:
        p = self.params
        h = self.box.side / self.resolution
        if self.kind == "shrinking_hole":
            return self._holed(*p.get("center", (0.5, 0.5)), h)
        if self.kind == "moving_hole":
            cx, cy = p.get("center", (0.5, 0.5))
            return self._holed(cx, cy, p.get("w0", 0.125))
        if self.kind == "fattening_obstacle":
            if p.get("mode", "comb") == "comb":
                return PixelDomain(self.resolution, self._comb_mask("limit"), self.box)

            w0 = p.get("w0", 0.25)

            def inside(x, y):
                return ~((np.abs(x - 0.5) < w0 / 2) & (np.abs(y - 0.5) < h / 2))

            return PixelDomain.from_predicate(self.resolution, self.box, inside)
        if self.kind == "fixed_crack_opening":
            return PixelDomain.full(self.resolution, self.box)
        if self.kind == "maly_martio_stagewise":
            from .density_toolkit import maly_martio

            return maly_martio(stages=self.stages, grid_n=self.resolution).domain
        raise ValueError(f"unknown sequence kind {self.kind!r}")

    def limit_mesh(self) -> CrackMesh:
        """Mesh of the limit; the crack-opening limit is a slit mesh."""
        if self.kind != "fixed_crack_opening":
            return triangulate(self.limit())
        return self._slit_mesh(opening_cells=0.0)

    def _slit_mesh(self, opening_cells: float) -> CrackMesh:
        """Slit mesh along the crack segment, lips displaced by the opening."""
        p = self.params
        y0 = p.get("y0", 0.5)
        xa, xb = p.get("span", (0.25, 0.75))
        n = self.resolution
        mesh = triangulate(PixelDomain.full(n, self.box))
        h = self.box.side / n
        iy = round((y0 - self.box.y0) / h)
        ix_a = round((xa - self.box.x0) / h)
        ix_b = round((xb - self.box.x0) / h)
        lookup = {}
        for vid, (x, y) in enumerate(mesh.vertices):
            lookup[(round((x - self.box.x0) / h), round((y - self.box.y0) / h))] = vid
        cut = [(lookup[(ix, iy)], lookup[(ix + 1, iy)]) for ix in range(ix_a, ix_b)]
        out = slit(mesh, cut)
        if opening_cells > 0:
            d = 0.5 * opening_cells * h
            verts = out.vertices.copy()
            edge_tri = {}
            for t, tri in enumerate(out.triangles):
                a, b, c = (int(x) for x in tri)
                for e in ((a, b), (b, c), (c, a)):
                    edge_tri[(min(e), max(e))] = t
            tips = {cut[0][0], cut[-1][1]}
            for sides in out.crack_edges:
                for u, v in sides:
                    t = edge_tri[(min(u, v), max(u, v))]
                    cy = out.vertices[out.triangles[t]][:, 1].mean()
                    sgn = 1.0 if cy > y0 else -1.0  # each lip moves toward its side
                    for w in (u, v):
                        if w in tips:
                            continue
                        verts[w, 1] = out.vertices[w, 1] + sgn * d
            opened = CrackMesh(
                vertices=verts,
                triangles=out.triangles,
                crack_edges=out.crack_edges,
                boundary_edges=out.boundary_edges,
                parent_domain=out.parent_domain,
                grid_div=out.grid_div,
                box=out.box,
            )
            return opened
        return out

    def member_mesh(self, n: int) -> CrackMesh:
        """Solving mesh for a member; the crack-opening members are slit
        meshes with lips separated by 2^-n cells (sub-cell openings)."""
        if self.kind == "fixed_crack_opening":
            return self._slit_mesh(opening_cells=2.0**-n)
        return triangulate(self.member(n))

    def limit_compact(self) -> CompactSet:
        """Complement of the limit within the box, as a point cloud."""
        if self.kind == "fixed_crack_opening":
            p = self.params
            y0 = p.get("y0", 0.5)
            xa, xb = p.get("span", (0.25, 0.75))
            t = np.linspace(xa, xb, self.resolution)
            return CompactSet.from_points(np.stack([t, np.full_like(t, y0)], axis=1))
        dom = self.limit()
        return CompactSet.from_cells(dom, ~dom.open_mask)

    def member_compact(self, n) -> CompactSet:
        if self.kind == "fixed_crack_opening":
            p = self.params
            y0 = p.get("y0", 0.5)
            xa, xb = p.get("span", (0.25, 0.75))
            h = self.box.side / self.resolution
            o = 0.5 * 2.0**-n * h
            t = np.linspace(xa, xb, self.resolution)
            lips = np.concatenate(
                [
                    np.stack([t, np.full_like(t, y0 + o)], axis=1),
                    np.stack([t, np.full_like(t, y0 - o)], axis=1),
                ]
            )
            return CompactSet.from_points(lips)
        dom = self.member(n)
        return CompactSet.from_cells(dom, ~dom.open_mask)

    def component_bound(self) -> int:
        """Largest complement-component count across members and limit."""
        counts = [complement_components(self.member(n)).n_components for n in range(1, self.stages + 1)]
        counts.append(complement_components(self.limit()).n_components)
        return max(counts)


@dataclass
class StabilityRow:
    index: int
    dh_complement: float
    meas: float
    meas_bpos: float
    grad_gap: float
    field_gap: float
    failed: bool = False


@dataclass
class StabilityReport:
    rows: list
    limit_meas: float
    limit_meas_bpos: float
    verdict: str
    component_bound: int
    resolution: int

    def grad_gaps(self):
        return [r.grad_gap for r in self.rows if not r.failed]


def _solve_member(args):
    mesh, template = args
    spec = template.instantiate(mesh)
    try:
        return solve(mesh, spec)
    except (SolverError, ValueError) as exc:
        return exc


def run_stability(
    seq: DomainSequence, template: ProblemTemplate, stages=None
) -> StabilityReport:
    """Solve on every member and the limit; report gap traces and verdict.

    Verdict rule (about the discrete traces): with G the gradient-gap trace
    and atol a solver-scale floor, the sequence is
      - stable when max(G) <= atol, or when G decreases (final < 0.1 x
        initial, non-increasing on the final half up to 5%) and the
        weighted-measure trace converges to the limit value;
      - unstable when final >= 0.5 x max(G) and the stable test failed;
      - inconclusive otherwise (including any member solve failure).
    """
    stages = stages or seq.stages
    limit_mesh = seq.limit_mesh()
    limit_dom = seq.limit()
    target = PixelDomain.full(seq.resolution, seq.box)

    limit_rep = solve(limit_mesh, template.instantiate(limit_mesh))
    u_lim = limit_rep.solution
    glim = extend_by_zero(gradient(u_lim), target)
    vlim = extend_by_zero(u_lim, target)
    limit_meas = lebesgue_measure(limit_dom)
    limit_bpos = _bpos_measure(template, limit_dom)

    meshes = [seq.member_mesh(n) for n in range(1, stages + 1)]
    rows = []
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        reports = list(pool.map(_solve_member, [(m, template) for m in meshes]))

    limit_k = seq.limit_compact()
    diam = seq.box.diameter()
    p = template.p
    for n, (mesh, rep) in enumerate(zip(meshes, reports), start=1):
        dom = seq.member(n)
        dh = hausdorff_distance(seq.member_compact(n), limit_k, diam)
        meas = float(mesh.areas.sum())
        bpos = _bpos_measure(template, dom)
        if isinstance(rep, Exception):
            rows.append(StabilityRow(n, dh, meas, bpos, np.nan, np.nan, failed=True))
            continue
        g = extend_by_zero(gradient(rep.solution), target)
        v = extend_by_zero(rep.solution, target)
        wgrid = _b_grid(template, target)
        grad_gap = lp_gap(g, glim, p)
        field_gap = lp_gap(v, vlim, p, weight=wgrid)
        rows.append(StabilityRow(n, dh, meas, bpos, grad_gap, field_gap))

    verdict = _verdict(rows, limit_bpos, p)
    return StabilityReport(
        rows=rows,
        limit_meas=limit_meas,
        limit_meas_bpos=limit_bpos,
        verdict=verdict,
        component_bound=seq.component_bound(),
        resolution=seq.resolution,
    )


def read_sequence(path) -> DomainSequence:
    """Sequence config file: `key = value` lines with keys kind, stages,
    resolution, and kind-specific reals (r0, w0, m0, o0, d0)."""
    keys = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            keys[k.strip()] = v.strip()
    kind = keys.pop("kind")
    stages = int(keys.pop("stages", 4))
    resolution = int(keys.pop("resolution", 32))
    mode = keys.pop("mode", None)
    params = {k: float(v) for k, v in keys.items()}
    if kind == "comb":
        kind, params["mode"] = "fattening_obstacle", "comb"
    elif kind == "slab":
        kind, params["mode"] = "fattening_obstacle", "slab"
    elif mode:
        params["mode"] = mode
    return DomainSequence(kind, resolution=resolution, stages=stages, params=params)


def resolution_sweep(make_seq, template: ProblemTemplate, resolutions):
    """Repeat the stability run at the given resolutions and flag verdicts
    that do not survive refinement (resolution-dominated conclusions)."""
    reports = {res: run_stability(make_seq(res), template) for res in resolutions}
    verdicts = {res: rep.verdict for res, rep in reports.items()}
    agreed = len(set(verdicts.values())) == 1
    return reports, verdicts, agreed


def _bpos_measure(template, dom):
    pts = dom.cell_centers()
    if callable(template.b):
        pos = np.asarray(template.b(pts[:, 0], pts[:, 1])) > 0
        return float(np.count_nonzero(pos)) * dom.cell_size**2
    return lebesgue_measure(dom) if float(template.b) > 0 else 0.0


def _b_grid(template, target):
    """Per-cell weight b sampled at cell centers on the comparison grid."""
    if not callable(template.b):
        return None if float(template.b) == 1.0 else np.full(
            (target.resolution, target.resolution), float(template.b)
        )
    pts = target.cell_centers(np.ones((target.resolution, target.resolution), bool))
    vals = np.asarray(template.b(pts[:, 0], pts[:, 1]), float)
    return vals.reshape(target.resolution, target.resolution)


def _verdict(rows, limit_bpos, p):
    """Verdict on the combined trace g_n = (grad_gap^p + field_gap^p)^(1/p),
    the discrete version of the stability metric."""
    ok = [r for r in rows if not r.failed]
    if len(ok) < len(rows) or len(ok) < 2:
        return "inconclusive"
    G = np.array([(r.grad_gap**p + r.field_gap**p) ** (1.0 / p) for r in ok])
    atol = 1e-7
    if G.max() <= atol:
        return "stable"
    half = G[len(G) // 2 :]
    non_increasing = all(a >= b - 0.05 * G.max() for a, b in zip(half, half[1:]))
    bpos_gap0 = abs(ok[0].meas_bpos - limit_bpos)
    bpos_gapN = abs(ok[-1].meas_bpos - limit_bpos)
    bpos_converged = bpos_gapN <= max(0.25 * bpos_gap0, 1e-12)
    if G[-1] < 0.1 * G[0] and non_increasing and bpos_converged:
        return "stable"
    if G[-1] >= 0.5 * G.max():
        return "unstable"
    return "inconclusive"


def write_stability_csv(path, report: StabilityReport):
    with open(path, "w") as f:
        f.write("index,dH_complement,meas,meas_bpos,grad_gap,field_gap\n")
        for r in report.rows:
            f.write(
                f"{r.index},{r.dh_complement:.17g},{r.meas:.17g},"
                f"{r.meas_bpos:.17g},{r.grad_gap:.17g},{r.field_gap:.17g}\n"
            )


def write_verdict(path, report: StabilityReport):
    with open(path, "w") as f:
        f.write(report.verdict + "\n")


# ---------------------------------------------------------------------------
# Mosco probes


def mosco_m1_probe(member_dom: PixelDomain, limit_mesh: CrackMesh, u: NodalField, p: float) -> float:
    """Best zero-extension approximation of u by fields on the member.

    Projects in the first-order L2 inner product of the zero-extensions and
    evaluates the L^p gaps of the minimizer; returns the gradient gap plus
    the value gap.
    """
    if member_dom.box != limit_mesh.box:
        raise ValueError("member and limit boxes differ")
    target = PixelDomain.full(member_dom.resolution, member_dom.box)
    gtar = extend_by_zero(gradient(u), target)
    vtar = extend_by_zero(u, target)

    mesh = triangulate(member_dom)
    # per member-triangle target data, read off the comparison grid
    h = target.box.side / target.resolution
    c = mesh.centroids
    ix = np.clip(((c[:, 0] - target.box.x0) / h).astype(int), 0, target.resolution - 1)
    iy = np.clip(((c[:, 1] - target.box.y0) / h).astype(int), 0, target.resolution - 1)
    lx = (c[:, 0] - target.box.x0) / h - ix
    ly = (c[:, 1] - target.box.y0) / h - iy
    half = (ly > lx).astype(int)
    G = gtar.data[ix, iy, half]
    U = vtar.data[ix, iy, half]

    K = stiffness_matrix(mesh)
    gop = mesh.grad_ops
    rhs = np.bincount(
        mesh.triangles.ravel(),
        weights=(
            np.einsum("tkd,td,t->tk", gop, G, mesh.areas) + (mesh.areas * U / 3.0)[:, None]
        ).ravel(),
        minlength=mesh.n_vertices,
    )
    # centroid mass matrix blocks area/9
    from scipy import sparse

    tris = mesh.triangles
    rows_ = np.repeat(tris, 3, axis=1).ravel()
    cols_ = np.tile(tris, (1, 3)).ravel()
    M = sparse.coo_matrix(
        (np.repeat(mesh.areas / 9.0, 9), (rows_, cols_)),
        shape=(mesh.n_vertices, mesh.n_vertices),
    ).tocsr()
    from scipy.sparse.linalg import spsolve

    un = NodalField(mesh, spsolve((K + M).tocsc(), rhs))
    g = extend_by_zero(gradient(un), target)
    v = extend_by_zero(un, target)
    return lp_gap(g, gtar, p) + lp_gap(v, vtar, p)


@dataclass
class M2Report:
    grad_consistency_defect: float  # |avg flux - grad(avg field)| inside
    outside_value_defect: float  # max |avg field| outside the limit
    outside_flux_defect: float  # max |avg flux| outside the limit
    outside_flux_mass: float  # integral of |avg flux| outside the limit


def mosco_m2_probe(
    member_doms, fields, limit_dom: PixelDomain, p: float, coarse: int = 8, tail=None
) -> M2Report:
    """Weak-limit surrogate: average the zero-extensions over the sequence
    tail, block-average onto a coarse grid, and test the limit-pair
    consistency.
    """
    res = limit_dom.resolution
    if res % coarse:
        raise ValueError("resolution must be divisible by the coarse division")
    if tail is None:
        tail = max(2, (len(fields) + 1) // 2)
    member_doms = list(member_doms)[-tail:]
    fields = list(fields)[-tail:]
    target = PixelDomain.full(res, limit_dom.box)
    gsum = np.zeros((res, res, 2, 2))
    vsum = np.zeros((res, res, 2))
    for dom, u in zip(member_doms, fields):
        gsum += extend_by_zero(gradient(u), target).data
        vsum += extend_by_zero(u, target).data
    gavg = gsum / len(fields)
    vavg = vsum / len(fields)

    blk = res // coarse
    # average the halves then the blocks
    vcell = vavg.mean(axis=2)
    gcell = gavg.mean(axis=2)
    vc = vcell.reshape(coarse, blk, coarse, blk).mean(axis=(1, 3))
    gc = gcell.reshape(coarse, blk, coarse, blk, 2).mean(axis=(1, 3))

    inside_fine = limit_dom.open_mask.reshape(coarse, blk, coarse, blk)
    all_inside = inside_fine.all(axis=(1, 3))
    all_outside = (~limit_dom.open_mask).reshape(coarse, blk, coarse, blk).all(axis=(1, 3))

    H = limit_dom.box.side / coarse
    # central differences of the coarse field where the stencil stays inside
    gdef = 0.0
    for i in range(1, coarse - 1):
        for j in range(1, coarse - 1):
            if not (
                all_inside[i - 1 : i + 2, j].all()
                and all_inside[i, j - 1 : j + 2].all()
            ):
                continue
            fdx = (vc[i + 1, j] - vc[i - 1, j]) / (2 * H)
            fdy = (vc[i, j + 1] - vc[i, j - 1]) / (2 * H)
            gdef = max(gdef, abs(gc[i, j, 0] - fdx), abs(gc[i, j, 1] - fdy))

    out_v = float(np.max(np.abs(vc[all_outside]))) if all_outside.any() else 0.0
    gmag = np.hypot(gc[..., 0], gc[..., 1])
    out_g = float(np.max(gmag[all_outside])) if all_outside.any() else 0.0
    out_mass = float(np.sum(gmag[all_outside]) * H * H) if all_outside.any() else 0.0
    return M2Report(
        grad_consistency_defect=gdef,
        outside_value_defect=out_v,
        outside_flux_defect=out_g,
        outside_flux_mass=out_mass,
    )
