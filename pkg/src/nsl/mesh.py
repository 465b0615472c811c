"""Structured P1 triangulations of pixel domains with slit cracks.

Every cell splits into two right triangles along the lower-left to
upper-right diagonal; uniform refinement reproduces the same structure at
double resolution, so point location stays arithmetic. Cracks are opened
by duplicating path vertices so the two sides reference distinct copies.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import Box, PixelDomain


@dataclass(eq=False)
class CrackMesh:
    vertices: np.ndarray  # (V, 2) float
    triangles: np.ndarray  # (T, 3) int32, positive orientation
    crack_edges: list  # [((iA, jA), (iB, jB)), ...] one vertex pair per side
    boundary_edges: list  # [(i, j, tag)] tag in {"outer", "crack"}
    parent_domain: PixelDomain | None
    grid_div: int  # structured divisions per box side
    box: Box
    parent: "CrackMesh | None" = None
    parent_tri: np.ndarray | None = None  # child -> parent triangle map

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def areas(self):
        p0 = self.vertices[self.triangles[:, 0]]
        d1 = self.vertices[self.triangles[:, 1]] - p0
        d2 = self.vertices[self.triangles[:, 2]] - p0
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def grad_ops(self):
        """Per-triangle gradients of the three hat functions, shape (T, 3, 2)."""
        v = self.vertices[self.triangles]  # (T, 3, 2)
        out = np.empty((self.n_triangles, 3, 2))
        twoa = 2.0 * self.areas
        for k in range(3):
            a = v[:, (k + 1) % 3]
            b = v[:, (k + 2) % 3]
            out[:, k, 0] = (a[:, 1] - b[:, 1]) / twoa
            out[:, k, 1] = (b[:, 0] - a[:, 0]) / twoa
        return out

    @cached_property
    def cell_tri(self):
        """(grid_div, grid_div, 2) triangle index per structured half-cell, -1 if absent."""
        m = self.grid_div
        out = np.full((m, m, 2), -1, dtype=np.int64)
        h = self.box.side / m
        c = self.centroids
        ix = np.floor((c[:, 0] - self.box.x0) / h).astype(np.int64).clip(0, m - 1)
        iy = np.floor((c[:, 1] - self.box.y0) / h).astype(np.int64).clip(0, m - 1)
        lx = (c[:, 0] - self.box.x0) / h - ix
        ly = (c[:, 1] - self.box.y0) / h - iy
        half = (ly > lx).astype(np.int64)  # 0 = lower triangle, 1 = upper
        out[ix, iy, half] = np.arange(self.n_triangles)
        return out

    @cached_property
    def edge_set(self):
        s = set()
        for tri in self.triangles:
            a, b, c = int(tri[0]), int(tri[1]), int(tri[2])
            s.add((min(a, b), max(a, b)))
            s.add((min(b, c), max(b, c)))
            s.add((min(a, c), max(a, c)))
        return s

    @cached_property
    def vertex_adjacency(self):
        adj = {}
        for i, j in self.edge_set:
            adj.setdefault(i, set()).add(j)
            adj.setdefault(j, set()).add(i)
        return adj

    @cached_property
    def vertex_components(self):
        """Connected-component id per vertex (components of the slit domain)."""
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        rows = []
        cols = []
        for i, j in self.edge_set:
            rows.append(i)
            cols.append(j)
        data = np.ones(len(rows))
        g = coo_matrix(
            (data, (rows, cols)), shape=(self.n_vertices, self.n_vertices)
        )
        _, labels = connected_components(g, directed=False)
        return labels

    def outer_boundary_vertices(self):
        out = set()
        for i, j, tag in self.boundary_edges:
            if tag == "outer":
                out.add(i)
                out.add(j)
        return out

    def crack_vertices(self):
        out = set()
        for (ia, ja), (ib, jb) in self.crack_edges:
            out.update((ia, ja, ib, jb))
        return out


def triangulate(dom: PixelDomain) -> CrackMesh:
    """Two positively oriented right triangles per true cell."""
    n = dom.resolution
    mask = dom.open_mask
    if not mask.any():
        raise ValueError("cannot triangulate an empty domain")
    h = dom.cell_size
    # grid vertices adjacent to any true cell
    used = np.zeros((n + 1, n + 1), bool)
    used[:-1, :-1] |= mask
    used[1:, :-1] |= mask
    used[:-1, 1:] |= mask
    used[1:, 1:] |= mask
    vid = np.full((n + 1, n + 1), -1, dtype=np.int64)
    ux, uy = np.nonzero(used)
    vid[ux, uy] = np.arange(len(ux))
    verts = np.empty((len(ux), 2))
    verts[:, 0] = dom.box.x0 + ux * h
    verts[:, 1] = dom.box.y0 + uy * h

    cx, cy = np.nonzero(mask)
    v00 = vid[cx, cy]
    v10 = vid[cx + 1, cy]
    v01 = vid[cx, cy + 1]
    v11 = vid[cx + 1, cy + 1]
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    tris = np.empty((2 * len(cx), 3), dtype=np.int32)
    tris[0::2] = lower
    tris[1::2] = upper

    mesh = CrackMesh(
        vertices=verts,
        triangles=tris,
        crack_edges=[],
        boundary_edges=[],
        parent_domain=dom,
        grid_div=n,
        box=dom.box,
    )
    mesh.boundary_edges = [(i, j, "outer") for i, j in _boundary_edges(tris)]
    return mesh


def _boundary_edges(tris):
    count = {}
    for tri in tris:
        a, b, c = int(tri[0]), int(tri[1]), int(tri[2])
        for e in ((a, b), (b, c), (c, a)):
            key = (min(e), max(e))
            count[key] = count.get(key, 0) + 1
    return [e for e, c in count.items() if c == 1]


def _normalize_cut(cut_edges):
    return [(min(int(u), int(v)), max(int(u), int(v))) for u, v in cut_edges]


def _cut_is_connected(cut):
    if not cut:
        return True
    adj = {}
    for u, v in cut:
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    start = cut[0][0]
    seen = {start}
    stack = [start]
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return all(u in seen and v in seen for u, v in cut)


def slit(mesh: CrackMesh, cut_edges) -> CrackMesh:
    """Open a crack along a connected set of mesh edges.

    Vertices interior to the cut are duplicated so the triangle fans on the
    two sides reference distinct copies; crack tips stay single vertices,
    and an endpoint on the outer boundary is duplicated as well (the crack
    opens the boundary there).
    """
    cut = _normalize_cut(cut_edges)
    if not cut:
        return mesh
    edge_set = mesh.edge_set
    for e in cut:
        if e not in edge_set:
            raise ValueError(f"cut edge {e} is not a mesh edge")
    if not _cut_is_connected(cut):
        raise ValueError("cut edges must form a connected set")

    cutset = set(cut)
    tris = mesh.triangles.copy()
    verts = [mesh.vertices]
    next_id = mesh.n_vertices
    # triangles incident to each cut vertex
    cut_vertices = sorted({u for e in cut for u in e})
    incident = {v: [] for v in cut_vertices}
    for t, tri in enumerate(mesh.triangles):
        for v in tri:
            if int(v) in incident:
                incident[int(v)].append(t)

    replacements = {}  # (tri, old_vertex) -> new_vertex
    for v in cut_vertices:
        tl = incident[v]
        # adjacency between incident triangles through non-cut edges at v
        index = {t: k for k, t in enumerate(tl)}
        adj = [[] for _ in tl]
        edge_owner = {}
        for t in tl:
            tri = mesh.triangles[t]
            others = [int(x) for x in tri if int(x) != v]
            for w in others:
                e = (min(v, w), max(v, w))
                if e in cutset:
                    continue
                if e in edge_owner:
                    a, b = edge_owner[e], index[t]
                    adj[a].append(b)
                    adj[b].append(a)
                else:
                    edge_owner[e] = index[t]
        # connected components of the fan
        comp = [-1] * len(tl)
        ncomp = 0
        for k in range(len(tl)):
            if comp[k] != -1:
                continue
            stack = [k]
            comp[k] = ncomp
            while stack:
                x = stack.pop()
                for y in adj[x]:
                    if comp[y] == -1:
                        comp[y] = ncomp
                        stack.append(y)
            ncomp += 1
        # component 0 keeps v; the rest get fresh copies
        for c in range(1, ncomp):
            copy_id = next_id
            next_id += 1
            verts.append(mesh.vertices[v][None, :])
            for k, t in enumerate(tl):
                if comp[k] == c:
                    replacements[(t, v)] = copy_id

    for (t, v), new in replacements.items():
        tri = tris[t]
        tri[tri == v] = new

    new_verts = np.vstack(verts)

    # crack records: the two triangles adjacent to each interior cut edge
    crack_edges = list(mesh.crack_edges)
    new_boundary = []
    adj_tris = {}
    for t, tri in enumerate(mesh.triangles):
        a, b, c = (int(x) for x in tri)
        for e in ((a, b), (b, c), (c, a)):
            key = (min(e), max(e))
            if key in cutset:
                adj_tris.setdefault(key, []).append(t)
    for e, tl in sorted(adj_tris.items()):
        if len(tl) != 2:
            continue  # boundary cut edge: nothing to open
        sides = []
        for t in tl:
            u = replacements.get((t, e[0]), e[0])
            v = replacements.get((t, e[1]), e[1])
            sides.append((u, v))
        if sides[0] == sides[1]:
            continue  # degenerate: the cut did not separate here
        crack_edges.append((sides[0], sides[1]))
        new_boundary.append((sides[0][0], sides[0][1], "crack"))
        new_boundary.append((sides[1][0], sides[1][1], "crack"))

    # Recompute the boundary after duplication instead of patching ids.
    out = CrackMesh(
        vertices=new_verts,
        triangles=tris,
        crack_edges=crack_edges,
        boundary_edges=[],
        parent_domain=mesh.parent_domain,
        grid_div=mesh.grid_div,
        box=mesh.box,
    )
    crackset = set()
    for (ia, ja), (ib, jb) in crack_edges:
        crackset.add((min(ia, ja), max(ia, ja)))
        crackset.add((min(ib, jb), max(ib, jb)))
    out.boundary_edges = [
        (i, j, "crack" if (i, j) in crackset else "outer")
        for i, j in _boundary_edges(tris)
    ]
    return out


def refine(mesh: CrackMesh) -> CrackMesh:
    """Uniform 4-way refinement by edge midpoints; cracks stay open."""
    verts = [mesh.vertices]
    next_id = mesh.n_vertices
    mid = {}

    def midpoint(a, b):
        nonlocal next_id
        key = (min(a, b), max(a, b))
        if key not in mid:
            mid[key] = next_id
            verts.append(
                0.5 * (mesh.vertices[key[0]] + mesh.vertices[key[1]])[None, :]
            )
            next_id += 1
        return mid[key]

    T = mesh.n_triangles
    tris = np.empty((4 * T, 3), dtype=np.int32)
    parent_tri = np.repeat(np.arange(T), 4)
    for t, tri in enumerate(mesh.triangles):
        a, b, c = (int(x) for x in tri)
        ab = midpoint(a, b)
        bc = midpoint(b, c)
        ca = midpoint(c, a)
        tris[4 * t + 0] = (a, ab, ca)
        tris[4 * t + 1] = (ab, b, bc)
        tris[4 * t + 2] = (ca, bc, c)
        tris[4 * t + 3] = (ab, bc, ca)

    crack_edges = []
    for (ia, ja), (ib, jb) in mesh.crack_edges:
        ma = midpoint(ia, ja)
        mb = midpoint(ib, jb)
        crack_edges.append(((ia, ma), (ib, mb)))
        crack_edges.append(((ma, ja), (mb, jb)))
    boundary = []
    for i, j, tag in mesh.boundary_edges:
        m = midpoint(i, j)
        boundary.append((i, m, tag))
        boundary.append((m, j, tag))

    return CrackMesh(
        vertices=np.vstack(verts),
        triangles=tris,
        crack_edges=crack_edges,
        boundary_edges=boundary,
        parent_domain=mesh.parent_domain,
        grid_div=2 * mesh.grid_div,
        box=mesh.box,
        parent=mesh,
        parent_tri=parent_tri,
    )


# ---------------------------------------------------------------------------
# mesh file format


def write_mesh(path, mesh: CrackMesh):
    with open(path, "w") as f:
        f.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        f.write(f"triangles {mesh.n_triangles}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")
        f.write(f"cracks {len(mesh.crack_edges)}\n")
        for (ia, ja), (ib, jb) in mesh.crack_edges:
            f.write(f"{ia} {ja} {ib} {jb}\n")


def read_mesh(path, box=None, grid_div=None) -> CrackMesh:
    with open(path) as f:
        tok = f.readline().split()
        if tok[0] != "vertices":
            raise ValueError(f"{path}: expected 'vertices'")
        nv = int(tok[1])
        verts = np.array([[float(x) for x in f.readline().split()] for _ in range(nv)])
        tok = f.readline().split()
        if tok[0] != "triangles":
            raise ValueError(f"{path}: expected 'triangles'")
        nt = int(tok[1])
        tris = np.array(
            [[int(x) for x in f.readline().split()] for _ in range(nt)], dtype=np.int32
        )
        tok = f.readline().split()
        cracks = []
        if tok and tok[0] == "cracks":
            nc = int(tok[1])
            for _ in range(nc):
                ia, ja, ib, jb = (int(x) for x in f.readline().split())
                cracks.append(((ia, ja), (ib, jb)))
    if box is None:
        x0 = float(verts[:, 0].min())
        y0 = float(verts[:, 1].min())
        side = float(max(verts[:, 0].max() - x0, verts[:, 1].max() - y0))
        box = Box(x0, y0, side)
    if grid_div is None:
        # infer the structured division from the smallest edge length
        p0 = verts[tris[:, 0]]
        p1 = verts[tris[:, 1]]
        h = float(np.min(np.linalg.norm(p1 - p0, axis=1)))
        grid_div = max(1, round(box.side / h))
    mesh = CrackMesh(
        vertices=verts,
        triangles=tris,
        crack_edges=cracks,
        boundary_edges=[],
        parent_domain=None,
        grid_div=grid_div,
        box=box,
    )
    crackset = set()
    for (ia, ja), (ib, jb) in cracks:
        crackset.add((min(ia, ja), max(ia, ja)))
        crackset.add((min(ib, jb), max(ib, jb)))
    mesh.boundary_edges = [
        (i, j, "crack" if (i, j) in crackset else "outer")
        for i, j in _boundary_edges(mesh.triangles)
    ]
    return mesh


def total_area(mesh: CrackMesh) -> float:
    return float(mesh.areas.sum())


def euler_characteristic(mesh: CrackMesh) -> int:
    return mesh.n_vertices - len(mesh.edge_set) + mesh.n_triangles
