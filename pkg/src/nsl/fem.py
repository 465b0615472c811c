"""P1 scalar fields and piecewise-constant fluxes on crack meshes.

Integrals of field values use one-point centroid quadrature throughout;
gradients are exact for P1 data. Zero-extensions live on the structured
half-cell grid of a target pixel domain so fields on different domains can
be compared in a common L^p space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from . import _kernels
from .geometry import Box, PixelDomain
from .mesh import CrackMesh


@dataclass(eq=False)
class NodalField:
    mesh: CrackMesh
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.shape != (self.mesh.n_vertices,):
            raise ValueError("values length must equal vertex count")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.values = v

    @classmethod
    def from_function(cls, mesh, fn):
        return cls(mesh, fn(mesh.vertices[:, 0], mesh.vertices[:, 1]))

    @classmethod
    def constant(cls, mesh, c):
        return cls(mesh, np.full(mesh.n_vertices, float(c)))


@dataclass(eq=False)
class EdgeFlux:
    mesh: CrackMesh
    vectors: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=float)
        if v.shape != (self.mesh.n_triangles, 2):
            raise ValueError("vectors shape must be (n_triangles, 2)")
        self.vectors = v


def gradient(u: NodalField) -> EdgeFlux:
    """Exact per-triangle gradient of the P1 interpolant."""
    g = _kernels.tri_gradients(u.mesh.vertices, u.mesh.triangles, u.values)
    return EdgeFlux(u.mesh, g)


def rotate90(w: EdgeFlux) -> EdgeFlux:
    """Counterclockwise quarter turn (a, b) -> (-b, a), triangle-wise."""
    out = np.empty_like(w.vectors)
    out[:, 0] = -w.vectors[:, 1]
    out[:, 1] = w.vectors[:, 0]
    return EdgeFlux(w.mesh, out)


def tri_values(u: NodalField) -> np.ndarray:
    """Centroid value per triangle."""
    return _kernels.tri_means(u.mesh.triangles, u.values)


def lp_norm(w: EdgeFlux, p: float) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    mag = np.hypot(w.vectors[:, 0], w.vectors[:, 1])
    return float(np.sum(w.mesh.areas * mag**p) ** (1.0 / p))


def lp_norm_scalar(u: NodalField, p: float, weight=None) -> float:
    """Centroid-quadrature L^p norm, optionally weighted per triangle."""
    if p < 1:
        raise ValueError("p must be >= 1")
    vals = np.abs(tri_values(u)) ** p * u.mesh.areas
    if weight is not None:
        vals = vals * np.asarray(weight, float)
    return float(np.sum(vals) ** (1.0 / p))


def w1p_norm(u: NodalField, p: float, weight=None) -> float:
    return lp_norm_scalar(u, p, weight) + lp_norm(gradient(u), p)


# ---------------------------------------------------------------------------
# zero-extension onto a common pixel grid


@dataclass(eq=False)
class GridField:
    """Field resampled on the half-cell decomposition of a pixel grid.

    ``data[ix, iy, half]`` (scalar) or ``data[ix, iy, half, :]`` (vector)
    holds the sampled value at the half-cell centroid; half-cell area is
    h^2/2. Zero outside the source domain.
    """

    box: Box
    div: int
    data: np.ndarray

    @property
    def half_area(self):
        h = self.box.side / self.div
        return 0.5 * h * h

    def lp(self, p: float, weight=None) -> float:
        if self.data.ndim == 4:
            mag = np.hypot(self.data[..., 0], self.data[..., 1])
        else:
            mag = np.abs(self.data)
        acc = mag**p
        if weight is not None:
            acc = acc * weight[..., None]
        return float((self.half_area * acc.sum()) ** (1.0 / p))


def lp_gap(a: GridField, b: GridField, p: float, weight=None) -> float:
    if a.box != b.box or a.div != b.div:
        raise ValueError("grid fields must share the same grid")
    return GridField(a.box, a.div, a.data - b.data).lp(p, weight)


def _half_cell_centroids(box, div):
    h = box.side / div
    c = np.arange(div) * h
    X, Y = np.meshgrid(box.x0 + c, box.y0 + c, indexing="ij")
    # centroids of the lower (y<x) and upper (y>x) half-cells
    lower = np.stack([X + 2 * h / 3, Y + h / 3], axis=-1)
    upper = np.stack([X + h / 3, Y + 2 * h / 3], axis=-1)
    return np.stack([lower, upper], axis=2)  # (div, div, 2, 2)


def _locate(mesh: CrackMesh, pts):
    """Triangle index containing each point (structured lookup), -1 outside."""
    m = mesh.grid_div
    h = mesh.box.side / m
    fx = (pts[..., 0] - mesh.box.x0) / h
    fy = (pts[..., 1] - mesh.box.y0) / h
    ix = np.clip(np.floor(fx).astype(np.int64), 0, m - 1)
    iy = np.clip(np.floor(fy).astype(np.int64), 0, m - 1)
    half = ((fy - iy) > (fx - ix)).astype(np.int64)
    return mesh.cell_tri[ix, iy, half]


def extend_by_zero(obj, target: PixelDomain) -> GridField:
    """Resample a field or flux onto the half-cell grid of the target box.

    The source mesh must share the target's bounding box. Values are taken
    at half-cell centroids (exact for piecewise-constant fluxes whenever the
    target grid refines the source grid) and are zero outside the source.
    """
    mesh = obj.mesh
    if mesh.box != target.box:
        raise ValueError("source mesh and target domain boxes differ")
    pts = _half_cell_centroids(target.box, target.resolution)
    tri = _locate(mesh, pts)
    inside = tri >= 0
    tri_safe = np.where(inside, tri, 0)
    if isinstance(obj, EdgeFlux):
        data = obj.vectors[tri_safe]
        data[~inside] = 0.0
        return GridField(target.box, target.resolution, data)
    # P1 field: evaluate the linear interpolant at the sample points
    verts = mesh.vertices[mesh.triangles[tri_safe]]  # (..., 3, 2)
    vals = obj.values[mesh.triangles[tri_safe]]  # (..., 3)
    v0 = verts[..., 0, :]
    d1 = verts[..., 1, :] - v0
    d2 = verts[..., 2, :] - v0
    rp = pts - v0
    det = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    l1 = (rp[..., 0] * d2[..., 1] - rp[..., 1] * d2[..., 0]) / det
    l2 = (d1[..., 0] * rp[..., 1] - d1[..., 1] * rp[..., 0]) / det
    data = vals[..., 0] * (1 - l1 - l2) + vals[..., 1] * l1 + vals[..., 2] * l2
    data[~inside] = 0.0
    return GridField(target.box, target.resolution, data)


def indicator_grid(dom: PixelDomain, target: PixelDomain) -> GridField:
    """Zero-extension of the constant-1 field on dom, sampled like extend_by_zero."""
    if dom.box != target.box:
        raise ValueError("boxes differ")
    pts = _half_cell_centroids(target.box, target.resolution)
    h = dom.cell_size
    ix = np.clip(
        np.floor((pts[..., 0] - dom.box.x0) / h).astype(np.int64), 0, dom.resolution - 1
    )
    iy = np.clip(
        np.floor((pts[..., 1] - dom.box.y0) / h).astype(np.int64), 0, dom.resolution - 1
    )
    return GridField(target.box, target.resolution, dom.open_mask[ix, iy].astype(float))


# ---------------------------------------------------------------------------
# truncation and level flattening


def truncate(u: NodalField, k: float) -> NodalField:
    """Nodal clamp to [-k, k]; commutes with P1 interpolation at the nodes."""
    if k <= 0:
        raise ValueError("truncation level must be positive")
    return NodalField(u.mesh, np.clip(u.values, -k, k))


def _merged_intervals(levels, radius):
    iv = sorted((c - radius, c + radius) for c in levels)
    out = [list(iv[0])]
    for lo, hi in iv[1:]:
        if lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return np.array(out)


def flatten_map(levels, n):
    """The 1-Lipschitz map that freezes values near the given levels.

    Integrates the indicator of the complement of the radius-1/n
    neighborhood of the level set from 0; constant on each neighborhood
    interval, slope one elsewhere.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    iv = _merged_intervals(levels, 1.0 / n)

    def tn(y):
        y = np.asarray(y, float)
        # measure of the neighborhood between 0 and y, with sign
        lo = np.minimum(0.0, y)[..., None]
        hi = np.maximum(0.0, y)[..., None]
        overlap = np.clip(np.minimum(hi, iv[:, 1]) - np.maximum(lo, iv[:, 0]), 0, None)
        return y - np.sign(y) * overlap.sum(axis=-1)

    return tn


def flatten_levels(phi: NodalField, levels, n: int) -> NodalField:
    """Compose the field with the level-flattening map.

    On any triangle whose three nodal values fall in one frozen interval the
    output gradient vanishes.
    """
    tn = flatten_map(levels, n)
    return NodalField(phi.mesh, tn(phi.values))


def mean_normalize(u: NodalField, tri_subset) -> NodalField:
    """Subtract the area-weighted mean over the given triangle subset."""
    idx = np.asarray(tri_subset)
    if idx.dtype == bool:
        idx = np.nonzero(idx)[0]
    if len(idx) == 0:
        raise ValueError("triangle subset must be nonempty")
    areas = u.mesh.areas[idx]
    vals = tri_values(u)[idx]
    mean = float(np.sum(areas * vals) / np.sum(areas))
    return NodalField(u.mesh, u.values - mean)


# ---------------------------------------------------------------------------
# assembly and the discrete Helmholtz split


def stiffness_matrix(mesh: CrackMesh, coeff=None) -> sparse.csr_matrix:
    """P1 stiffness matrix, optionally with a per-triangle coefficient."""
    g = mesh.grad_ops  # (T, 3, 2)
    w = mesh.areas if coeff is None else mesh.areas * np.asarray(coeff, float)
    blocks = np.einsum("tkd,tld,t->tkl", g, g, w)
    tris = mesh.triangles
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    mat = sparse.coo_matrix(
        (blocks.ravel(), (rows, cols)), shape=(mesh.n_vertices, mesh.n_vertices)
    )
    return mat.tocsr()


def grad_load(mesh: CrackMesh, vectors) -> np.ndarray:
    """Nodal vector of integrals of vectors . grad(hat_i)."""
    g = mesh.grad_ops
    contrib = np.einsum("tkd,td,t->tk", g, np.asarray(vectors, float), mesh.areas)
    return np.bincount(
        mesh.triangles.ravel(), weights=contrib.ravel(), minlength=mesh.n_vertices
    )


def helmholtz_split(w: EdgeFlux, p_dual: float = 2.0):
    """L2-orthogonal split w = grad(phi) + sigma with sigma discretely
    divergence-free on each mesh component.

    Returns (gradient part, divergence-free part, potential). The potential
    solves the Neumann Laplacian with the zero-mean gauge per component.
    """
    mesh = w.mesh
    K = stiffness_matrix(mesh)
    b = grad_load(mesh, w.vectors)
    comps = mesh.vertex_components
    phi = np.zeros(mesh.n_vertices)
    for c in np.unique(comps):
        sel = np.nonzero(comps == c)[0]
        if len(sel) < 2:
            continue
        free = sel[1:]  # pin the first vertex of the component
        Kff = K[free][:, free].tocsc()
        phi[free] = spsolve(Kff, b[free])
    pot = NodalField(mesh, phi)
    # zero-mean gauge per component
    tri_comp = comps[mesh.triangles[:, 0]]
    for c in np.unique(tri_comp):
        tris = np.nonzero(tri_comp == c)[0]
        areas = mesh.areas[tris]
        vals = _kernels.tri_means(mesh.triangles[tris], pot.values)
        mean = float(np.sum(areas * vals) / np.sum(areas))
        pot.values[comps == c] -= mean
    gpart = gradient(pot)
    sigma = EdgeFlux(mesh, w.vectors - gpart.vectors)
    return gpart, sigma, pot


def l2_inner(a: EdgeFlux, b: EdgeFlux) -> float:
    return float(np.sum(a.mesh.areas * np.sum(a.vectors * b.vectors, axis=1)))


# ---------------------------------------------------------------------------
# field / flux file formats


def write_field(path, u: NodalField, mesh_name="mesh.txt"):
    with open(path, "w") as f:
        f.write(f"# mesh={mesh_name}\n")
        f.write("vertex_id,value\n")
        for i, v in enumerate(u.values):
            f.write(f"{i},{v:.17g}\n")


def read_field(path, mesh: CrackMesh) -> NodalField:
    vals = np.zeros(mesh.n_vertices)
    with open(path) as f:
        for line in f:
            if line.startswith("#") or line.startswith("vertex_id"):
                continue
            i, v = line.strip().split(",")
            vals[int(i)] = float(v)
    return NodalField(mesh, vals)


def write_flux(path, w: EdgeFlux, mesh_name="mesh.txt"):
    with open(path, "w") as f:
        f.write(f"# mesh={mesh_name}\n")
        f.write("triangle_id,vx,vy\n")
        for i, (vx, vy) in enumerate(w.vectors):
            f.write(f"{i},{vx:.17g},{vy:.17g}\n")


def read_flux(path, mesh: CrackMesh) -> EdgeFlux:
    vecs = np.zeros((mesh.n_triangles, 2))
    with open(path) as f:
        for line in f:
            if line.startswith("#") or line.startswith("triangle_id"):
                continue
            i, vx, vy = line.strip().split(",")
            vecs[int(i)] = (float(vx), float(vy))
    return EdgeFlux(mesh, vecs)
