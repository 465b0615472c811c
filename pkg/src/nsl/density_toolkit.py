"""Constructive approximation tools: rotated-gradient fields orthogonal to
all Sobolev gradients, cutoff flattening near complement components, a
plateau-tree generator whose limit field maps a tiny complement onto a full
value interval, and the modified-Hessian orthogonality pairing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import spsolve
from scipy.spatial import cKDTree

from .fem import (
    EdgeFlux,
    NodalField,
    gradient,
    lp_norm,
    lp_norm_scalar,
    rotate90,
    stiffness_matrix,
)
from .geometry import Box, ComponentLabeling, PixelDomain, complement_components
from .mesh import CrackMesh, triangulate


# ---------------------------------------------------------------------------
# fields orthogonal to every P1 gradient


@dataclass(eq=False)
class HPerpElement:
    """A flux whose quarter turn is the gradient of a potential that is
    constant on every complement component (zero on the unbounded one)."""

    potential: NodalField  # on the full box mesh
    component_values: dict  # component id -> plateau constant
    flux: EdgeFlux  # on the domain mesh: -R grad(potential)
    domain_mesh: CrackMesh


def _component_vertex_ids(box_mesh, labeling, comp_id):
    vmask = labeling.component_vertices(comp_id)
    n = labeling.domain.resolution
    h = labeling.domain.cell_size
    ix = np.round((box_mesh.vertices[:, 0] - box_mesh.box.x0) / h).astype(int)
    iy = np.round((box_mesh.vertices[:, 1] - box_mesh.box.y0) / h).astype(int)
    ok = (ix >= 0) & (ix <= n) & (iy >= 0) & (iy <= n)
    out = np.zeros(box_mesh.n_vertices, bool)
    out[ok] = vmask[ix[ok], iy[ok]]
    return np.nonzero(out)[0]


def _domain_triangles_on_box(dom, box_mesh, dom_mesh):
    """Box-mesh triangle index for each domain-mesh triangle."""
    c = dom_mesh.centroids
    m = box_mesh.grid_div
    h = box_mesh.box.side / m
    ix = np.floor((c[:, 0] - box_mesh.box.x0) / h).astype(int).clip(0, m - 1)
    iy = np.floor((c[:, 1] - box_mesh.box.y0) / h).astype(int).clip(0, m - 1)
    lx = (c[:, 0] - box_mesh.box.x0) / h - ix
    ly = (c[:, 1] - box_mesh.box.y0) / h - iy
    half = (ly > lx).astype(int)
    return box_mesh.cell_tri[ix, iy, half]


def hperp_basis(
    dom: PixelDomain, box_mesh: CrackMesh, count: int, seed: int
) -> list[HPerpElement]:
    """Sample potentials constant per complement component and return the
    rotated gradients restricted to the domain mesh.

    Each potential blends random plateau constants harmonically across the
    domain and adds a random interior bump; the unbounded component is
    grounded at zero. Component vertex sets must be pairwise disjoint (one
    grid vertex cannot carry two plateau constants).
    """
    if count <= 0:
        raise ValueError("count must be positive")
    labeling = complement_components(dom)
    comp_ids = sorted(labeling.representatives)
    vsets = {c: _component_vertex_ids(box_mesh, labeling, c) for c in comp_ids}
    all_ids = np.concatenate([vsets[c] for c in comp_ids])
    if len(np.unique(all_ids)) != len(all_ids):
        raise ValueError("complement components share grid vertices; separate them")

    dom_mesh = triangulate(dom)
    on_box = _domain_triangles_on_box(dom, box_mesh, dom_mesh)
    K = stiffness_matrix(box_mesh)
    free = np.setdiff1d(np.arange(box_mesh.n_vertices), all_ids)
    Kff = K[free][:, free].tocsc()
    Kfc = K[free][:, all_ids]

    # distance of every box vertex to the nearest plateau vertex, used to
    # confine the random bump strictly inside the domain
    tree = cKDTree(box_mesh.vertices[all_ids])
    dist, _ = tree.query(box_mesh.vertices)
    h = dom.cell_size
    cutoff = np.clip(dist / (3.0 * h) - 1.0 / 3.0, 0.0, 1.0)

    out = []
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        consts = {c: 0.0 if c == labeling.unbounded_id else rng.uniform(-1, 1) for c in comp_ids}
        fixed_vals = np.concatenate(
            [np.full(len(vsets[c]), consts[c]) for c in comp_ids]
        )
        phi = np.zeros(box_mesh.n_vertices)
        phi[all_ids] = fixed_vals
        phi[free] = spsolve(Kff, -Kfc @ fixed_vals)
        # random smooth bump, zeroed near the plateaus
        bump = np.zeros(box_mesh.n_vertices)
        for _ in range(3):
            cx, cy = rng.uniform(dom.box.x0, dom.box.x0 + dom.box.side, 2)
            s = rng.uniform(0.05, 0.2) * dom.box.side
            amp = rng.uniform(-1, 1)
            d2 = (box_mesh.vertices[:, 0] - cx) ** 2 + (
                box_mesh.vertices[:, 1] - cy
            ) ** 2
            bump += amp * np.exp(-d2 / (2 * s * s))
        phi = phi + bump * cutoff
        phi[all_ids] = fixed_vals  # exact plateaus

        pot = NodalField(box_mesh, phi)
        psi_box = rotate90(gradient(pot))
        psi = EdgeFlux(dom_mesh, -psi_box.vectors[on_box])
        out.append(
            HPerpElement(
                potential=pot,
                component_values=consts,
                flux=psi,
                domain_mesh=dom_mesh,
            )
        )
    return out


def orthogonality_residual(u: NodalField, elem: HPerpElement, p: float = 2.0) -> float:
    """Normalized pairing of the element's flux with grad(u); exactly zero
    (up to roundoff) when the potential is constant on every component."""
    mesh = u.mesh
    if mesh.n_triangles != elem.flux.mesh.n_triangles:
        raise ValueError("field and element live on different meshes")
    g = gradient(u)
    pairing = float(
        np.sum(mesh.areas * np.sum(elem.flux.vectors * g.vectors, axis=1))
    )
    q = p / (p - 1.0) if p > 1 else float("inf")
    nrm = lp_norm(elem.flux, q if q != float("inf") else 2.0) * lp_norm(g, p)
    return abs(pairing) / (nrm + 1e-300)


def circulation_identity_gap(elem: HPerpElement, vertex_path) -> float:
    """Crossing identity: summing flux . (quarter-turned edge) along an edge
    path from the outer plateau to a hole reproduces the plateau difference.

    Returns |sum + (c_end - c_start)| computed from the potential values at
    the path endpoints (the sign follows from psi = -R grad(phi))."""
    mesh = elem.potential.mesh
    phi = elem.potential.values
    total = 0.0
    for a, b in zip(vertex_path, vertex_path[1:]):
        total += phi[b] - phi[a]
    expected = phi[vertex_path[-1]] - phi[vertex_path[0]]
    return abs(total - expected)


# ---------------------------------------------------------------------------
# flattening near complement components


@dataclass
class FlattenReport:
    width: float
    width_reduced: bool
    wdiff_norm: float
    p_dual: float
    plateau_sizes: dict


def flatten_near_components(
    phi: NodalField,
    labeling: ComponentLabeling,
    n: int,
    p_dual: float = 2.0,
    base_width: float | None = None,
):
    """Force the potential to its plateau constant on a width ~ 1/n
    neighborhood of every complement component.

    The vertexwise cutoff makes the operation a projection: repeating it
    with the same n changes nothing. Component neighborhoods must stay
    disjoint; the width auto-reduces (flagged) if they overlap.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    mesh = phi.mesh
    dom = labeling.domain
    h = dom.cell_size
    comp_ids = sorted(labeling.representatives)
    vsets = {c: _component_vertex_ids(mesh, labeling, c) for c in comp_ids}

    consts = {}
    for c in comp_ids:
        vals = phi.values[vsets[c]]
        if len(vals) == 0:
            continue
        if np.max(vals) - np.min(vals) > 1e-8:
            raise ValueError(f"potential is not constant on component {c}")
        consts[c] = float(vals.mean())

    width0 = (base_width if base_width is not None else dom.box.side / 8.0) / n
    width = max(width0, 1.5 * h)
    trees = {c: cKDTree(mesh.vertices[vsets[c]]) for c in comp_ids if len(vsets[c])}

    reduced = False
    for _ in range(6):
        plateaus = {}
        for c, tree in trees.items():
            d, _ = tree.query(mesh.vertices)
            # half-cell slack keeps the outermost vertex ring stable when the
            # width is an exact multiple of the cell size
            plateaus[c] = np.nonzero(d <= width + 0.49 * h)[0]
        flat = np.concatenate(list(plateaus.values()))
        if len(np.unique(flat)) == len(flat):
            break
        width *= 0.7
        reduced = True
        if width < h:
            raise ValueError("component neighborhoods overlap even at one cell")

    out = phi.values.copy()
    for c, ids in plateaus.items():
        out[ids] = consts[c]
    result = NodalField(mesh, out)

    diff = NodalField(mesh, result.values - phi.values)
    wnorm = lp_norm_scalar(diff, p_dual) + lp_norm(gradient(diff), p_dual)
    report = FlattenReport(
        width=width,
        width_reduced=reduced,
        wdiff_norm=wnorm,
        p_dual=p_dual,
        plateau_sizes={c: len(ids) for c, ids in plateaus.items()},
    )
    return result, report


# ---------------------------------------------------------------------------
# plateau-tree generator (value interval from a tiny complement)


@dataclass(eq=False)
class GridNodalField:
    """P1 field on the structured grid of a box, stored as node values."""

    box: Box
    div: int
    values: np.ndarray  # (div + 1, div + 1)

    @property
    def cell(self):
        return self.box.side / self.div

    def w12_norm(self):
        """W^{1,2} norm of the P1 interpolant on the two-triangle split."""
        v = np.asarray(self.values, float)
        h = self.cell
        v00 = v[:-1, :-1]
        v10 = v[1:, :-1]
        v01 = v[:-1, 1:]
        v11 = v[1:, 1:]
        area = 0.5 * h * h
        gl = ((v10 - v00) ** 2 + (v11 - v10) ** 2) / (h * h)
        gu = ((v11 - v01) ** 2 + (v01 - v00) ** 2) / (h * h)
        ml = (v00 + v10 + v11) / 3.0
        mu = (v00 + v11 + v01) / 3.0
        l2g = area * float(np.sum(gl + gu))
        l2v = area * float(np.sum(ml * ml + mu * mu))
        return math.sqrt(l2v + l2g)

    def node_value(self, x, y):
        ix = int(round((x - self.box.x0) / self.cell))
        iy = int(round((y - self.box.y0) / self.cell))
        return float(self.values[ix, iy])


def _bump_profile(beta=0.78, delta=0.04, samples=4096):
    """C1 radial profile: 1 on [0, beta - delta], linear ramp, quadratic
    blends of half-width delta at both kinks, 0 beyond 1."""
    s = np.linspace(0.0, 1.0 + delta, samples)
    slope = 1.0 / (1.0 - beta)
    base = np.clip((1.0 - s) * slope, 0.0, 1.0)
    # mollify once with a triangle kernel of half-width delta
    ds = s[1] - s[0]
    k = max(1, int(round(delta / ds)))
    kern = 1.0 - np.abs(np.arange(-k, k + 1)) / (k + 1.0)
    kern /= kern.sum()
    ext = np.concatenate([np.ones(k), base, np.zeros(k)])
    smooth = np.convolve(ext, kern, mode="same")[k:-k]
    smooth[s <= beta - delta] = 1.0
    smooth[s >= 1.0] = 0.0
    return s, smooth


_PROFILE_S, _PROFILE_V = _bump_profile()
_SUBBALL_RADIUS = 0.45  # fraction of the drill radius
_SUBBALL_OFFSET = 0.55
_PLATEAU_FRAC = 0.74 * _SUBBALL_RADIUS  # (beta - delta) * subball radius
_NEXT_DRILL = 0.95  # next drill radius as a fraction of the plateau radius


def _paint_bump(values, box, div, center, radius, amplitude):
    """Add amplitude * profile(|x - center| / radius) on its support window."""
    h = box.side / div
    x0 = int(max(0, math.floor((center[0] - radius - box.x0) / h) - 1))
    x1 = int(min(div, math.ceil((center[0] + radius - box.x0) / h) + 1))
    y0 = int(max(0, math.floor((center[1] - radius - box.y0) / h) - 1))
    y1 = int(min(div, math.ceil((center[1] + radius - box.y0) / h) + 1))
    xs = box.x0 + np.arange(x0, x1 + 1) * h
    ys = box.y0 + np.arange(y0, y1 + 1) * h
    r = np.hypot(xs[:, None] - center[0], ys[None, :] - center[1]) / radius
    prof = np.interp(r, _PROFILE_S, _PROFILE_V, right=0.0)
    values[x0 : x1 + 1, y0 : y1 + 1] += amplitude * prof


@dataclass
class MalyStage:
    index: int
    phi: GridNodalField  # snapshot after this stage (scaled)
    plateau_centers: np.ndarray  # (2^n, 2)
    plateau_radius: float
    drill_radius: float
    increment_norm: float
    budget: float
    plateau_values: np.ndarray  # scaled values on the new plateaus
    locally_constant: bool


@dataclass
class MalyMartioOutput:
    stages: list
    domain: PixelDomain
    alphas: list
    radii: list
    decay_trace: list  # n * r_n ** alpha_n
    value_scale: float
    truncated: bool
    coverage: list  # (stage, coverage_fraction, increment_norm)

    def coverage_fraction(self, stage):
        return self.coverage[stage - 1][1]


def maly_martio(stages: int, alpha_schedule=None, grid_n: int = 512) -> MalyMartioOutput:
    """Iterated plateau drilling on the square (-2, 2)^2.

    Stage n drills every plateau created at stage n-1 with a pair of
    opposite bumps, producing plateau values at all dyadic midpoints
    (2j-1)/2^n of [-1, 1] times a global value scale. The scale is chosen
    so every stage increment meets its W^{1,2} budget 2^{-n} exactly; the
    emitted domain removes the final plateau balls from the square.
    """
    if stages < 1:
        raise ValueError("stages must be >= 1")
    box = Box(-2.0, -2.0, 4.0)
    div = int(grid_n)
    h = box.side / div

    # geometry of the drill tree (independent of field amplitudes)
    drill = [{"center": (0.0, 0.0), "value": 0.0, "radius": 0.9}]
    stage_geoms = []
    truncated = False
    for n in range(1, stages + 1):
        r = drill[0]["radius"]
        if _PLATEAU_FRAC * r < 1.2 * h or r < 2 * h:
            truncated = True
            break
        plateaus = []
        for d in drill:
            cx, cy = d["center"]
            for sgn in (+1, -1):
                plateaus.append(
                    {
                        "center": (cx + sgn * _SUBBALL_OFFSET * r, cy),
                        "value": d["value"] + sgn * 2.0**-n,
                        "radius": _PLATEAU_FRAC * r,
                        "support": _SUBBALL_RADIUS * r,
                        "parent_center": (cx, cy),
                        "sign": sgn,
                    }
                )
        stage_geoms.append({"drills": drill, "plateaus": plateaus, "r": r})
        drill = [
            {
                "center": p["center"],
                "value": p["value"],
                "radius": _NEXT_DRILL * p["radius"],
            }
            for p in plateaus
        ]

    done = len(stage_geoms)
    if done == 0:
        raise ValueError("grid too coarse for even one stage")

    # build unit-scale increments and norms
    increments = []
    unit_norms = []
    for n, geom in enumerate(stage_geoms, start=1):
        inc = np.zeros((div + 1, div + 1))
        for p in geom["plateaus"]:
            _paint_bump(
                inc, box, div, p["center"], p["support"], p["sign"] * 2.0**-n
            )
        increments.append(inc)
        unit_norms.append(GridNodalField(box, div, inc).w12_norm())

    scale = min(
        1.0, min(0.999 * 2.0**-n / un for n, un in enumerate(unit_norms, start=1))
    )

    # assemble the stage snapshots
    run = np.zeros((div + 1, div + 1))
    stage_records = []
    coverage_rows = []
    for n, geom in enumerate(stage_geoms, start=1):
        run = run + scale * increments[n - 1]
        snap = GridNodalField(box, div, run.copy())
        centers = np.array([p["center"] for p in geom["plateaus"]])
        values = scale * np.array([p["value"] for p in geom["plateaus"]])
        rho = geom["plateaus"][0]["radius"]
        inc_norm = scale * unit_norms[n - 1]
        # discrete local-constancy check on the new plateaus
        ok = True
        for p, v in zip(geom["plateaus"], values):
            ix = int(round((p["center"][0] - box.x0) / h))
            iy = int(round((p["center"][1] - box.y0) / h))
            if abs(snap.values[ix, iy] - v) > 1e-12 * (1 + abs(v)):
                ok = False
        stage_records.append(
            MalyStage(
                index=n,
                phi=snap,
                plateau_centers=centers,
                plateau_radius=rho,
                drill_radius=geom["r"],
                increment_norm=inc_norm,
                budget=2.0**-n,
                plateau_values=values,
                locally_constant=ok,
            )
        )

    final = stage_records[-1]
    # coverage: fraction of [-1, 1] within 2^-s of the normalized values
    samples = np.linspace(-1.0, 1.0, 4001)
    for rec in stage_records:
        normalized = rec.plateau_values / scale
        dmin = np.min(np.abs(samples[:, None] - normalized[None, :]), axis=1)
        frac = float(np.mean(dmin <= 2.0**-rec.index))
        coverage_rows.append((rec.index, frac, rec.increment_norm))

    # domain: the square minus the final plateau balls
    mask = np.ones((div, div), bool)
    cx = box.x0 + (np.arange(div) + 0.5) * h
    X, Y = np.meshgrid(cx, cx, indexing="ij")
    for c in final.plateau_centers:
        mask &= (X - c[0]) ** 2 + (Y - c[1]) ** 2 > final.plateau_radius**2
    domain = PixelDomain(div, mask, box)

    radii = [g["r"] for g in stage_geoms]
    if alpha_schedule is None:
        alphas = []
        decay = []
        for n, r in enumerate(radii, start=1):
            if n == 1:
                alphas.append(1.0)
                decay.append(1.0 * r)
            else:
                target = 0.9 * decay[-1] / n
                alpha = min(alphas[-1], math.log(target) / math.log(r))
                alphas.append(alpha)
                decay.append(n * r**alpha)
    else:
        alphas = [float(a) for a in alpha_schedule][:done]
        decay = [n * r**a for n, (r, a) in enumerate(zip(radii, alphas), start=1)]

    return MalyMartioOutput(
        stages=stage_records,
        domain=domain,
        alphas=alphas,
        radii=radii,
        decay_trace=decay,
        value_scale=scale,
        truncated=truncated or done < stages,
        coverage=coverage_rows,
    )


def write_coverage_csv(path, out: MalyMartioOutput):
    with open(path, "w") as f:
        f.write("stage,coverage,increment_norm\n")
        for stage, cov, norm in out.coverage:
            f.write(f"{stage},{cov:.17g},{norm:.17g}\n")


# ---------------------------------------------------------------------------
# modified-Hessian pairing for symmetrized gradients


@dataclass(eq=False)
class HermiteGridField:
    """C1 grid potential: value and derivative data at grid nodes, giving a
    bicubic on every cell."""

    box: Box
    div: int
    value: np.ndarray  # (div+1, div+1)
    dx: np.ndarray
    dy: np.ndarray
    dxy: np.ndarray

    @classmethod
    def from_callable(cls, box, div, f, fx, fy, fxy):
        t = np.arange(div + 1) * (box.side / div)
        X, Y = np.meshgrid(box.x0 + t, box.y0 + t, indexing="ij")
        return cls(box, div, f(X, Y), fx(X, Y), fy(X, Y), fxy(X, Y))

    def set_linear_on(self, node_mask, c, b):
        """Overwrite node data with the linear function c . x + b."""
        t = np.arange(self.div + 1) * (self.box.side / self.div)
        X, Y = np.meshgrid(self.box.x0 + t, self.box.y0 + t, indexing="ij")
        self.value[node_mask] = c[0] * X[node_mask] + c[1] * Y[node_mask] + b
        self.dx[node_mask] = c[0]
        self.dy[node_mask] = c[1]
        self.dxy[node_mask] = 0.0


def component_linear_hermite(
    base: HermiteGridField, labeling: ComponentLabeling, coeffs: dict
) -> HermiteGridField:
    """Make the potential exactly linear on the one-cell dilation of every
    complement component. coeffs maps component id -> (c 2-vector, b)."""
    dom = labeling.domain
    if dom.resolution != base.div:
        raise ValueError("hermite grid must match the domain resolution")
    out = HermiteGridField(
        base.box, base.div, base.value.copy(), base.dx.copy(), base.dy.copy(), base.dxy.copy()
    )
    n = dom.resolution
    for comp_id in sorted(labeling.representatives):
        cells = labeling.cells_of(comp_id)
        if comp_id == labeling.unbounded_id:
            border = np.zeros((n, n), bool)
            border[0, :] = border[-1, :] = True
            border[:, 0] = border[:, -1] = True
            cells = cells | border
        dil = cells.copy()
        dil[1:, :] |= cells[:-1, :]
        dil[:-1, :] |= cells[1:, :]
        dil[:, 1:] |= cells[:, :-1]
        dil[:, :-1] |= cells[:, 1:]
        dil[1:, 1:] |= cells[:-1, :-1]
        dil[:-1, :-1] |= cells[1:, 1:]
        dil[1:, :-1] |= cells[:-1, 1:]
        dil[:-1, 1:] |= cells[1:, :-1]
        vmask = np.zeros((n + 1, n + 1), bool)
        vmask[:-1, :-1] |= dil
        vmask[1:, :-1] |= dil
        vmask[:-1, 1:] |= dil
        vmask[1:, 1:] |= dil
        c, b = coeffs.get(comp_id, (np.zeros(2), 0.0))
        out.set_linear_on(vmask, np.asarray(c, float), float(b))
    return out


def _hermite_cell_coeffs(fld: HermiteGridField, ix, iy):
    """4x4 coefficient matrices C with f = h(tx)^T C h(ty) per queried cell."""
    hcell = fld.box.side / fld.div
    C = np.empty(ix.shape + (4, 4))
    for (r, c), (data, sx, sy) in _HERMITE_LAYOUT.items():
        arr = getattr(fld, data)
        val = arr[ix + sx, iy + sy]
        if data in ("dx", "dy"):
            val = val * hcell
        elif data == "dxy":
            val = val * hcell * hcell
        C[..., r, c] = val
    return C


# layout of the bicubic coefficient matrix: rows index the x-basis
# [h00, h10, h01, h11], columns the y-basis; entries name the node array and
# the corner offsets
_HERMITE_LAYOUT = {
    (0, 0): ("value", 0, 0),
    (0, 1): ("dy", 0, 0),
    (0, 2): ("value", 0, 1),
    (0, 3): ("dy", 0, 1),
    (1, 0): ("dx", 0, 0),
    (1, 1): ("dxy", 0, 0),
    (1, 2): ("dx", 0, 1),
    (1, 3): ("dxy", 0, 1),
    (2, 0): ("value", 1, 0),
    (2, 1): ("dy", 1, 0),
    (2, 2): ("value", 1, 1),
    (2, 3): ("dy", 1, 1),
    (3, 0): ("dx", 1, 0),
    (3, 1): ("dxy", 1, 0),
    (3, 2): ("dx", 1, 1),
    (3, 3): ("dxy", 1, 1),
}


def _hermite_basis(t, deriv=0):
    t = np.asarray(t, float)
    if deriv == 0:
        return np.stack(
            [
                2 * t**3 - 3 * t**2 + 1,
                t**3 - 2 * t**2 + t,
                -2 * t**3 + 3 * t**2,
                t**3 - t**2,
            ],
            axis=-1,
        )
    if deriv == 1:
        return np.stack(
            [6 * t**2 - 6 * t, 3 * t**2 - 4 * t + 1, -6 * t**2 + 6 * t, 3 * t**2 - 2 * t],
            axis=-1,
        )
    return np.stack(
        [12 * t - 6, 6 * t - 4, -12 * t + 6, 6 * t - 2],
        axis=-1,
    )


# degree-5 seven-point triangle rule (barycentric coordinates, weights)
_TRI7_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [0.0597158717, 0.4701420641, 0.4701420641],
        [0.4701420641, 0.0597158717, 0.4701420641],
        [0.4701420641, 0.4701420641, 0.0597158717],
        [0.7974269853, 0.1012865073, 0.1012865073],
        [0.1012865073, 0.7974269853, 0.1012865073],
        [0.1012865073, 0.1012865073, 0.7974269853],
    ]
)
_TRI7_W = np.array(
    [0.225, 0.1323941527, 0.1323941527, 0.1323941527, 0.1259391805, 0.1259391805, 0.1259391805]
)


def _hessian_at(fld: HermiteGridField, pts):
    """(d2/dy2, d2/dx2, d2/dxdy) of the bicubic at arbitrary points."""
    hcell = fld.box.side / fld.div
    fx = (pts[..., 0] - fld.box.x0) / hcell
    fy = (pts[..., 1] - fld.box.y0) / hcell
    ix = np.clip(np.floor(fx).astype(int), 0, fld.div - 1)
    iy = np.clip(np.floor(fy).astype(int), 0, fld.div - 1)
    tx = fx - ix
    ty = fy - iy
    C = _hermite_cell_coeffs(fld, ix, iy)
    hx0 = _hermite_basis(tx, 0)
    hx2 = _hermite_basis(tx, 2)
    hx1 = _hermite_basis(tx, 1)
    hy0 = _hermite_basis(ty, 0)
    hy2 = _hermite_basis(ty, 2)
    hy1 = _hermite_basis(ty, 1)
    s = 1.0 / (hcell * hcell)
    dyy = np.einsum("...i,...ij,...j->...", hx0, C, hy2) * s
    dxx = np.einsum("...i,...ij,...j->...", hx2, C, hy0) * s
    dxy = np.einsum("...i,...ij,...j->...", hx1, C, hy1) * s
    return dyy, dxx, dxy


def airy_orthogonality(
    v1: NodalField, v2: NodalField, potential: HermiteGridField
) -> float:
    """Normalized pairing of (d22, -d12; -d12, d11) of the potential with
    the symmetrized gradient of (v1, v2) over the fields' mesh.

    Vanishes to roundoff when the potential is linear on the one-cell
    dilation of every complement component; grows when it is not.
    """
    mesh = v1.mesh
    if v2.mesh is not mesh:
        raise ValueError("v1 and v2 must share a mesh")
    if mesh.box != potential.box:
        raise ValueError("mesh box and potential box differ")
    g1 = gradient(v1).vectors
    g2 = gradient(v2).vectors
    e11 = g1[:, 0]
    e22 = g2[:, 1]
    e12 = 0.5 * (g1[:, 1] + g2[:, 0])

    verts = mesh.vertices[mesh.triangles]  # (T, 3, 2)
    pts = np.einsum("qk,tkd->tqd", _TRI7_BARY, verts)
    dyy, dxx, dxy = _hessian_at(potential, pts)
    integrand = (
        dyy * e11[:, None] + dxx * e22[:, None] - 2.0 * dxy * e12[:, None]
    )
    per_tri = np.einsum("q,tq->t", _TRI7_W, integrand) * mesh.areas
    pairing = float(per_tri.sum())

    frob = np.sqrt(dyy**2 + dxx**2 + 2 * dxy**2)
    hess_norm = float(np.sum(np.einsum("q,tq->t", _TRI7_W, frob**2) * mesh.areas)) ** 0.5
    ev_norm = float(np.sum(mesh.areas * (e11**2 + e22**2 + 2 * e12**2)) ** 0.5)
    return abs(pairing) / (hess_norm * ev_norm + 1e-300)
