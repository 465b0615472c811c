"""Optimal membrane cutting: energy of a slit, annealing over connected
edge paths through two terminals, and stability along cut sequences.

The cut energy is the minimum of int a(x) ((|grad u|^2 + eps^2)^(p/2) -
eps^p) over displacements equal to the boundary datum away from the cut,
with the natural condition on both crack faces. Larger cuts never increase
the energy, so the maximization favors short cuts placed where the datum
works hardest.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .fem import NodalField, extend_by_zero, gradient, lp_gap
from .geometry import CompactSet, PixelDomain, hausdorff_distance
from .mesh import CrackMesh, slit, triangulate
from .solver import ProblemSpec, solve


@dataclass(eq=False)
class CutPath:
    """Connected edge path through the two terminals, living on mesh edges."""

    edges: list  # ordered (u, v) vertex-id pairs
    terminals: tuple  # (t1, t2) vertex ids
    mesh: CrackMesh

    def __post_init__(self):
        es = [(min(int(u), int(v)), max(int(u), int(v))) for u, v in self.edges]
        if not es:
            raise ValueError("a cut needs at least one edge")
        mesh_edges = self.mesh.edge_set
        for e in es:
            if e not in mesh_edges:
                raise ValueError(f"cut edge {e} not in the mesh")
        incident = {v for e in es for v in e}
        t1, t2 = self.terminals
        if t1 not in incident or t2 not in incident:
            raise ValueError("both terminals must touch the cut")
        if not _connected(es):
            raise ValueError("cut edges must form a connected set")
        self.edges = es

    @classmethod
    def from_vertices(cls, mesh, vertex_path):
        edges = list(zip(vertex_path, vertex_path[1:]))
        return cls(edges, (vertex_path[0], vertex_path[-1]), mesh)

    def edge_ids(self):
        """Indices into the mesh's sorted edge list (the cut file format)."""
        index = {e: i for i, e in enumerate(sorted(self.mesh.edge_set))}
        return sorted(index[e] for e in self.edges)

    def compact(self) -> CompactSet:
        pts = []
        for u, v in self.edges:
            a = self.mesh.vertices[u]
            b = self.mesh.vertices[v]
            pts.extend([a, 0.5 * (a + b), b])
        return CompactSet.from_points(np.unique(np.array(pts), axis=0))


def _connected(edges):
    adj = {}
    for u, v in edges:
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    start = edges[0][0]
    seen = {start}
    stack = [start]
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return all(u in seen for u, v in edges)


@dataclass
class CutProblem:
    """Strictly convex energy density a(x) (|xi|^2 + eps^2)^(p/2) - a eps^p."""

    p: float
    a: object = 1.0  # scalar or callable(x, y)
    eps: float = 1e-8


@dataclass
class CutEnergyReport:
    energy: float
    solution: NodalField
    el_residual: float
    slit_mesh: CrackMesh


def vertex_at(mesh: CrackMesh, x, y):
    d = np.hypot(mesh.vertices[:, 0] - x, mesh.vertices[:, 1] - y)
    return int(np.argmin(d))


def cut_energy(dom: PixelDomain, cut: CutPath, prob: CutProblem, g) -> CutEnergyReport:
    """Slit the mesh along the cut, impose the datum on the remaining outer
    boundary, and minimize the membrane energy.

    The crack faces carry the natural condition; enclosed components
    without any boundary datum sit at the zero representative and
    contribute nothing (the density vanishes at zero slope).
    """
    mesh = cut.mesh
    smesh = slit(mesh, cut.edges)
    cut_vertices = {v for e in cut.edges for v in e}
    crack_vertices = smesh.crack_vertices()
    dir_ids = sorted(
        v
        for v in smesh.outer_boundary_vertices()
        if v not in cut_vertices and v not in crack_vertices
    )
    gvals = np.array([g(*smesh.vertices[v]) for v in dir_ids], float)

    if callable(prob.a):
        c = smesh.centroids
        a = np.asarray(prob.a(c[:, 0], c[:, 1]), float)
        op = "scaled"
    else:
        a = float(prob.a)
        op = "scaled" if a != 1.0 else "p_laplacian"
    spec = ProblemSpec(
        p=prob.p,
        b=0.0,
        f=0.0,
        g_load=0.0,
        a=a,
        operator=op,
        dirichlet=(np.array(dir_ids, int), gvals),
    )
    rep = solve(smesh, spec, tol_unreg=0.0, eps_min=prob.eps)
    grads = gradient(rep.solution).vectors
    s2 = grads[:, 0] ** 2 + grads[:, 1] ** 2
    coeff = a if np.ndim(a) else np.full(smesh.n_triangles, a)
    energy = _kernels.p_energy_sum(smesh.areas, coeff, s2, prob.p, prob.eps)
    return CutEnergyReport(
        energy=energy,
        solution=rep.solution,
        el_residual=rep.el_residual,
        slit_mesh=smesh,
    )


# ---------------------------------------------------------------------------
# search over connected paths


def shortest_path(mesh: CrackMesh, t1: int, t2: int):
    """Lexicographically smallest shortest vertex path in the edge graph."""
    adj = mesh.vertex_adjacency
    dist = {t1: 0}
    q = deque([t1])
    while q:
        v = q.popleft()
        for w in sorted(adj[v]):
            if w not in dist:
                dist[w] = dist[v] + 1
                q.append(w)
    if t2 not in dist:
        raise ValueError("terminals are not connected")
    path = [t2]
    while path[-1] != t1:
        v = path[-1]
        prev = min(w for w in adj[v] if dist.get(w, 1 << 30) == dist[v] - 1)
        path.append(prev)
    return path[::-1]


def _propose(rng, path, adj, max_edges):
    """A random detour insertion or removal preserving the simple path."""
    kind = rng.integers(0, 2)
    n = len(path)
    if kind == 0 and (max_edges is None or n - 1 < max_edges):
        order = rng.permutation(n - 1)
        for i in order:
            a, b = path[i], path[i + 1]
            cands = sorted((adj[a] & adj[b]) - set(path))
            if cands:
                c = cands[rng.integers(0, len(cands))]
                return path[: i + 1] + [c] + path[i + 1 :]
    if n >= 3:
        order = rng.permutation(n - 2) + 1
        for i in order:
            a, b = path[i - 1], path[i + 1]
            if b in adj[a]:
                return path[:i] + path[i + 1 :]
    return None


def _edge_key(path):
    return tuple(
        sorted((min(u, v), max(u, v)) for u, v in zip(path, path[1:]))
    )


def _better(candidate, incumbent, tol):
    """Maximization with ties broken toward fewer edges then lex edge ids."""
    ec, kc = candidate
    ei, ki = incumbent
    if ec > ei + tol:
        return True
    if ec < ei - tol:
        return False
    if len(kc) != len(ki):
        return len(kc) < len(ki)
    return kc < ki


@dataclass
class CutSearchResult:
    best_cut: CutPath
    best_report: CutEnergyReport
    trace: list  # (step, energy, accepted, temperature)
    evaluations: int


def optimize_cut(
    dom: PixelDomain,
    terminals,
    prob: CutProblem,
    g,
    budget: int,
    seed: int,
    max_edges=None,
) -> CutSearchResult:
    """Simulated annealing over simple paths joining the snapped terminals.

    Geometric cooling from the spread of twenty sampled moves; neutral
    moves random-walk but the incumbent only changes on strict improvement
    (ties resolved toward fewer edges, then lexicographic edge ids).
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    mesh = triangulate(dom)
    (x1, y1), (x2, y2) = terminals
    t1 = vertex_at(mesh, x1, y1)
    t2 = vertex_at(mesh, x2, y2)
    if t1 == t2:
        raise ValueError("terminals snap to the same vertex")
    adj = mesh.vertex_adjacency
    rng = np.random.default_rng(seed)

    cache = {}

    def eval_path(path):
        key = _edge_key(path)
        if key not in cache:
            cut = CutPath.from_vertices(mesh, path)
            cache[key] = (cut_energy(dom, cut, prob, g), cut)
        return cache[key]

    path = shortest_path(mesh, t1, t2)
    rep, cut = eval_path(path)
    e = rep.energy
    best = (e, _edge_key(path))
    best_pair = (cut, rep)

    # temperature from the energy spread over twenty sampled moves
    samples = []
    for _ in range(20):
        cand = _propose(rng, path, adj, max_edges)
        if cand is not None:
            samples.append(eval_path(cand)[0].energy)
    spread = (max(samples) - min(samples)) if samples else 0.0
    spread = max(spread, abs(e) * 1e-3)
    t0 = max(spread, 1e-12)

    tol = 1e-12 * (1.0 + abs(e))
    trace = [(0, e, True, t0)]
    for step in range(1, budget + 1):
        temp = t0 * 0.95**step
        cand = _propose(rng, path, adj, max_edges)
        accepted = False
        if cand is not None:
            crep, ccut = eval_path(cand)
            delta = crep.energy - e
            if delta >= 0 or rng.random() < math.exp(delta / max(temp, 1e-300)):
                accepted = True
                path = cand
                e = crep.energy
                key = _edge_key(path)
                if _better((e, key), best, tol):
                    best = (e, key)
                    best_pair = (ccut, crep)
        trace.append((step, e, accepted, temp))

    return CutSearchResult(
        best_cut=best_pair[0],
        best_report=best_pair[1],
        trace=trace,
        evaluations=len(cache),
    )


# ---------------------------------------------------------------------------
# stability along cut sequences


@dataclass
class CutStabilityRow:
    index: int
    dh: float
    grad_gap: float


def cut_stability(
    dom: PixelDomain, cuts, limit_cut: CutPath, prob: CutProblem, g, p=None
):
    """Gradient gaps of the cut solutions against the limit cut's solution,
    with the Hausdorff trace of the cut sets."""
    p = p or prob.p
    lim_rep = cut_energy(_dom_of(limit_cut, dom), limit_cut, prob, g)
    finest = max([c.mesh.grid_div for c in cuts] + [limit_cut.mesh.grid_div])
    target = PixelDomain.full(finest, dom.box)
    glim = extend_by_zero(gradient(lim_rep.solution), target)
    limit_k = limit_cut.compact()
    rows = []
    for i, cut in enumerate(cuts, start=1):
        rep = cut_energy(_dom_of(cut, dom), cut, prob, g)
        gmem = extend_by_zero(gradient(rep.solution), target)
        rows.append(
            CutStabilityRow(
                index=i,
                dh=hausdorff_distance(cut.compact(), limit_k, dom.box.diameter()),
                grad_gap=lp_gap(gmem, glim, p),
            )
        )
    return rows


def _dom_of(cut, dom):
    # cuts may live on refined meshes of the same pixel domain
    if cut.mesh.parent_domain is not None:
        return cut.mesh.parent_domain
    return dom


# ---------------------------------------------------------------------------
# cut file format


def write_cut(path, cut: CutPath):
    ids = cut.edge_ids()
    with open(path, "w") as f:
        f.write(f"cut {len(ids)}\n")
        for i in ids:
            f.write(f"{i}\n")


def read_cut(path, mesh: CrackMesh, terminals) -> CutPath:
    edges_sorted = sorted(mesh.edge_set)
    with open(path) as f:
        tok = f.readline().split()
        if tok[0] != "cut":
            raise ValueError(f"{path}: expected 'cut'")
        count = int(tok[1])
        edges = [edges_sorted[int(f.readline())] for _ in range(count)]
    return CutPath(edges, terminals, mesh)


def write_trace_csv(path, trace):
    with open(path, "w") as f:
        f.write("step,energy,accepted,temperature\n")
        for step, e, acc, temp in trace:
            f.write(f"{step},{e:.17g},{int(acc)},{temp:.17g}\n")
