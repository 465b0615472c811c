"""Monotone Neumann solver by convex minimization with epsilon continuation.

The operator family is A(x, xi) = a(x) (|xi|^2 + eps^2)^((p-2)/2) xi with
a >= a0 > 0 and p in (1, 2]; the zero-order term b |u|^{p-2} u is
regularized the same way. Newton steps on the regularized energy with
Armijo backtracking descend monotonically; epsilon is halved until the
unregularized Euler-Lagrange residual meets tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from . import _kernels
from .fem import NodalField, gradient, tri_values
from .mesh import CrackMesh


class SolverError(RuntimeError):
    """Raised on non-convergence; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class ProblemSpec:
    """Data for -div A(x, grad u) + b |u|^{p-2} u = b f + g with natural
    boundary conditions (and optional Dirichlet vertices)."""

    p: float
    b: float | np.ndarray = 0.0
    f: float | np.ndarray = 0.0
    g_load: float | np.ndarray = 0.0
    a: float | np.ndarray = 1.0
    operator: str = "p_laplacian"  # or "scaled"
    dirichlet: tuple | None = None  # (vertex ids, values)
    epsilon0: float = 1e-2

    def resolve(self, mesh: CrackMesh):
        """Broadcast coefficient data to per-triangle arrays for the mesh."""
        T = mesh.n_triangles

        def arr(v):
            out = np.asarray(v, float)
            if out.ndim == 0:
                return np.full(T, float(out))
            if out.shape != (T,):
                raise ValueError("per-triangle data has wrong length")
            return out

        b = arr(self.b)
        f = arr(self.f)
        g = arr(self.g_load)
        a = arr(self.a) if self.operator == "scaled" else arr(1.0)
        if not (1.0 < self.p <= 2.0):
            raise ValueError("p must lie in (1, 2]")
        if self.epsilon0 <= 0:
            raise ValueError("epsilon0 must be positive")
        if (b < 0).any():
            raise ValueError("weight b must be nonnegative")
        return b, f, g, a

    @classmethod
    def from_functions(cls, mesh, p, b=None, f=None, g=None, a=None, **kw):
        """Sample coefficient callables at triangle centroids."""
        c = mesh.centroids

        def smp(fn, default):
            if fn is None:
                return default
            return fn(c[:, 0], c[:, 1])

        op = "scaled" if a is not None else kw.pop("operator", "p_laplacian")
        return cls(
            p=p,
            b=smp(b, 0.0),
            f=smp(f, 0.0),
            g_load=smp(g, 0.0),
            a=smp(a, 1.0),
            operator=op,
            **kw,
        )


@dataclass
class SolveReport:
    solution: NodalField
    energy_trace: list
    newton_iters: int
    el_residual: float
    epsilon_trace: list
    converged: bool
    message: str = ""


def _component_structure(mesh, b, dirichlet_ids):
    """Classify mesh components; returns (vertex comp labels,
    [(comp, vertices, needs_gauge)])."""
    comps = mesh.vertex_components
    tri_comp = comps[mesh.triangles[:, 0]]
    dset = set(int(i) for i in dirichlet_ids)
    out = []
    for c in np.unique(comps):
        vids = np.nonzero(comps == c)[0]
        tids = np.nonzero(tri_comp == c)[0]
        has_b = bool((b[tids] > 0).any())
        has_dir = any(int(v) in dset for v in vids)
        out.append((int(c), vids, tids, not has_b and not has_dir))
    return comps, out


def energy(mesh, spec: ProblemSpec, values, eps):
    """Regularized convex energy at the given nodal values."""
    b, f, g, a = spec.resolve(mesh)
    h = b * f + g
    grads = _kernels.tri_gradients(mesh.vertices, mesh.triangles, values)
    s2 = grads[:, 0] ** 2 + grads[:, 1] ** 2
    p = spec.p
    e_grad = _kernels.p_energy_sum(mesh.areas, a / p, s2, p, eps)
    um = _kernels.tri_means(mesh.triangles, values)
    e_mass = _kernels.p_energy_sum(mesh.areas, b / p, um * um, p, eps)
    e_load = float(np.sum(mesh.areas * h * um))
    return e_grad + e_mass - e_load


def _residual(mesh, spec, b, f, g, a, values, eps):
    """Assembled Euler-Lagrange residual vector (eps-regularized)."""
    p = spec.p
    h = b * f + g
    grads = _kernels.tri_gradients(mesh.vertices, mesh.triangles, values)
    s2 = grads[:, 0] ** 2 + grads[:, 1] ** 2
    if eps == 0.0:
        w = np.zeros_like(s2)
        nz = s2 > 0
        w[nz] = s2[nz] ** ((p - 2.0) / 2.0)
        w *= a
    else:
        _, w, _ = _kernels.p_terms(s2, p, eps)
        w = w * a
    flux = grads * w[:, None]
    gop = mesh.grad_ops
    contrib = np.einsum("tkd,td,t->tk", gop, flux, mesh.areas)
    um = _kernels.tri_means(mesh.triangles, values)
    if eps == 0.0:
        mw = np.zeros_like(um)
        nz = um != 0
        mw[nz] = np.abs(um[nz]) ** (p - 2.0) * um[nz]
        mw *= b
    else:
        mw = b * (um * um + eps * eps) ** ((p - 2.0) / 2.0) * um
    nodal = mesh.areas * (mw - h) / 3.0
    contrib = contrib + nodal[:, None]
    return np.bincount(
        mesh.triangles.ravel(),
        weights=np.repeat(contrib, 1, axis=0).ravel(),
        minlength=mesh.n_vertices,
    )


def _jacobian(mesh, spec, b, a, values, eps):
    p = spec.p
    grads = _kernels.tri_gradients(mesh.vertices, mesh.triangles, values)
    s2 = grads[:, 0] ** 2 + grads[:, 1] ** 2
    _, w, t = _kernels.p_terms(s2, p, eps)
    w = w * a
    t = t * a
    gop = mesh.grad_ops  # (T, 3, 2)
    bg = np.einsum("tkd,td->tk", gop, grads)  # B^T xi
    blocks = np.einsum("tkd,tld->tkl", gop, gop) * w[:, None, None]
    blocks += bg[:, :, None] * bg[:, None, :] * t[:, None, None]
    um = _kernels.tri_means(mesh.triangles, values)
    q = um * um + eps * eps
    mw = b * (q ** ((p - 2.0) / 2.0) + (p - 2.0) * um * um * q ** ((p - 4.0) / 2.0))
    blocks += mw[:, None, None] / 9.0
    blocks *= mesh.areas[:, None, None]
    tris = mesh.triangles
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    return sparse.coo_matrix(
        (blocks.ravel(), (rows, cols)), shape=(mesh.n_vertices, mesh.n_vertices)
    ).tocsr()


def solve(
    mesh: CrackMesh,
    spec: ProblemSpec,
    *,
    tol_unreg=1e-6,
    tol_reg=1e-10,
    max_newton=200,
    eps_min=1e-8,
    x0=None,
) -> SolveReport:
    """Minimize the regularized energy, then continue eps downward until the
    unregularized residual is small.

    On components carrying neither weight nor Dirichlet data the returned
    representative has zero mean (the solution is only defined up to a
    constant there); the load must balance on such components.
    """
    b, f, g, a = spec.resolve(mesh)
    if spec.operator == "scaled" and (a <= 0).any():
        raise ValueError("scaled operator requires a(x) > 0")
    h = b * f + g
    dir_ids = np.asarray(spec.dirichlet[0], dtype=int) if spec.dirichlet else np.array([], int)
    dir_vals = (
        np.asarray(spec.dirichlet[1], dtype=float) if spec.dirichlet else np.array([])
    )
    comps, comp_info = _component_structure(mesh, b, dir_ids)

    # load compatibility on pure-Neumann components
    pinned = []
    gauge_comps = []
    for c, vids, tids, needs_gauge in comp_info:
        if needs_gauge:
            total = float(np.sum(mesh.areas[tids] * h[tids]))
            scale = float(np.sum(mesh.areas[tids] * np.abs(h[tids]))) + 1e-30
            if abs(total) > 1e-9 * max(scale, 1.0):
                raise ValueError(
                    f"incompatible load on pure-Neumann component {c}: integral {total!r}"
                )
            pinned.append(int(vids[0]))
            gauge_comps.append((c, vids, tids))

    fixed = np.concatenate([dir_ids, np.array(pinned, int)]) if (len(dir_ids) or pinned) else np.array([], int)
    fixed_vals = np.concatenate([dir_vals, np.zeros(len(pinned))]) if len(fixed) else np.array([])
    free = np.setdiff1d(np.arange(mesh.n_vertices), fixed)

    u = np.zeros(mesh.n_vertices) if x0 is None else np.array(x0, float)
    if len(fixed):
        u[fixed] = fixed_vals

    # tolerances scale with the load so the stopping rule is size-invariant
    load_vec = np.bincount(
        mesh.triangles.ravel(),
        weights=np.repeat(mesh.areas * h / 3.0, 3),
        minlength=mesh.n_vertices,
    )
    scale = 1.0 + float(np.linalg.norm(load_vec))

    energy_trace = []
    epsilon_trace = []
    total_iters = 0
    eps = spec.epsilon0
    slope = 1e-4

    while True:
        epsilon_trace.append(eps)
        e = energy(mesh, spec, u, eps)
        energy_trace.append(e)
        for it in range(max_newton):
            r = _residual(mesh, spec, b, f, g, a, u, eps)
            rn = float(np.linalg.norm(r[free])) if len(free) else 0.0
            if rn <= tol_reg * scale:
                break
            J = _jacobian(mesh, spec, b, a, u, eps)
            d = np.zeros(mesh.n_vertices)
            Jff = J[free][:, free].tocsc()
            d[free] = spsolve(Jff, -r[free])
            if not np.all(np.isfinite(d)):
                raise SolverError(
                    "singular Newton system",
                    SolveReport(
                        NodalField(mesh, u), energy_trace, total_iters, rn,
                        epsilon_trace, False,
                    ),
                )
            if np.max(np.abs(d)) <= 1e-14 * (1.0 + np.max(np.abs(u))):
                break  # at floating-point resolution
            gdot = float(r[free] @ d[free])
            # the energy is convex along the ray, so backtrack to its
            # minimum: halve until the values turn back up, keep the best.
            # A roundoff allowance covers decreases below the resolution of
            # the energy value near convergence.
            slack = 1e-13 * (abs(e) + 1.0)
            best_step, best_e = 0.0, e
            prev = None
            step = 1.0
            while step > 1e-14:
                ec = energy(mesh, spec, u + step * d, eps)
                if ec < best_e:
                    best_step, best_e = step, ec
                if prev is not None and ec > prev:
                    break
                prev = ec
                step *= 0.5
            if best_step == 0.0:
                break  # flat along the ray at floating-point resolution
            if best_e > e + slope * best_step * gdot + slack:
                raise SolverError(
                    "line search failed",
                    SolveReport(
                        NodalField(mesh, u),
                        energy_trace,
                        total_iters,
                        rn,
                        epsilon_trace,
                        False,
                    ),
                )
            u = u + best_step * d
            e = best_e
            energy_trace.append(e)
            total_iters += 1
        else:
            raise SolverError(
                "Newton did not converge within max iterations",
                SolveReport(
                    NodalField(mesh, u),
                    energy_trace,
                    total_iters,
                    rn,
                    epsilon_trace,
                    False,
                ),
            )
        r0 = _residual(mesh, spec, b, f, g, a, u, 0.0)
        el = float(np.linalg.norm(r0[free])) if len(free) else 0.0
        if el <= tol_unreg * scale or eps <= eps_min:
            break
        eps = max(eps / 2.0, eps_min)

    sol = NodalField(mesh, u)
    for c, vids, tids in gauge_comps:
        # zero-mean representative, applied per component
        mean = float(
            np.sum(mesh.areas[tids] * _kernels.tri_means(mesh.triangles[tids], sol.values))
            / np.sum(mesh.areas[tids])
        )
        sol.values[vids] -= mean

    met_tol = el <= tol_unreg * scale
    return SolveReport(
        solution=sol,
        energy_trace=energy_trace,
        newton_iters=total_iters,
        el_residual=el,
        epsilon_trace=epsilon_trace,
        converged=True,
        message="" if met_tol else "stopped at the epsilon floor",
    )


# ---------------------------------------------------------------------------
# structural checks on the operator family


@dataclass
class StructureReport:
    monotone: bool
    growth_ok: bool
    coercive: bool
    c1_fit: float
    c2_fit: float
    min_gap: float
    passed: bool


def check_structure(
    p, a=1.0, eps=0.0, samples=10000, seed=0, operator="p_laplacian"
) -> StructureReport:
    """Monte-Carlo check of strict monotonicity, growth, and coercivity for
    the built-in operator family. Accepts a ProblemSpec in place of p."""
    if isinstance(p, ProblemSpec):
        spec = p
        p, a, operator = spec.p, spec.a, spec.operator
    rng = np.random.default_rng(seed)
    avals = np.asarray(a, float).ravel()
    amin = float(avals.min())

    def A(ax, xi):
        s2 = np.sum(xi * xi, axis=-1)
        w = ax * (s2 + eps * eps) ** ((p - 2.0) / 2.0) if eps > 0 else np.where(
            s2 > 0, s2 ** ((p - 2.0) / 2.0), 0.0
        ) * ax
        return xi * w[..., None]

    scale = 10.0 ** rng.uniform(-2, 2, size=samples)
    xi1 = rng.standard_normal((samples, 2)) * scale[:, None]
    xi2 = rng.standard_normal((samples, 2)) * scale[:, None]
    ax = avals[rng.integers(0, len(avals), size=samples)]
    gaps = np.sum((A(ax, xi1) - A(ax, xi2)) * (xi1 - xi2), axis=-1)
    same = np.all(xi1 == xi2, axis=-1)
    min_gap = float(gaps[~same].min()) if (~same).any() else 0.0
    monotone = bool((gaps[~same] > 0).all()) and amin > 0

    n1 = np.linalg.norm(xi1, axis=-1)
    keep = n1 > max(eps, 1e-12)
    ratios = np.linalg.norm(A(ax, xi1), axis=-1)[keep] / n1[keep] ** (p - 1.0)
    c2_fit = float(ratios.max()) if keep.any() else 0.0
    coerc = np.sum(A(ax, xi1) * xi1, axis=-1)[keep] / n1[keep] ** p
    c1_fit = float(coerc.min()) if keep.any() else 0.0
    growth_ok = c2_fit <= float(avals.max()) * (1.0 + 1e-12) + 1e-12
    coercive = amin > 0 and c1_fit > 0
    return StructureReport(
        monotone=monotone,
        growth_ok=growth_ok,
        coercive=coercive,
        c1_fit=c1_fit,
        c2_fit=c2_fit,
        min_gap=min_gap,
        passed=monotone and growth_ok and coercive,
    )


# ---------------------------------------------------------------------------
# manufactured-solution convergence study (p = 2)


@dataclass
class ConvergenceReport:
    ns: list
    l2_errors: list
    h1_errors: list
    l2_rates: list
    h1_rates: list
    energies: list


def manufactured_convergence(levels=4, n0=8) -> ConvergenceReport:
    """Refinement study for -lap(u) + u = (2 pi^2 + 1) cos(pi x) cos(pi y)
    on the unit box, which has zero Neumann flux."""
    from .geometry import PixelDomain
    from .mesh import triangulate

    exact = lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y)
    gx = lambda x, y: -np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)
    gy = lambda x, y: -np.pi * np.cos(np.pi * x) * np.sin(np.pi * y)

    ns, l2s, h1s, ens = [], [], [], []
    for lev in range(levels):
        n = n0 * 2**lev
        mesh = triangulate(PixelDomain.full(n))
        spec = ProblemSpec.from_functions(
            mesh,
            p=2.0,
            b=lambda x, y: np.ones_like(x),
            f=lambda x, y: (2 * np.pi**2 + 1) * exact(x, y),
        )
        rep = solve(mesh, spec)
        u = rep.solution
        c = mesh.centroids
        du = np.array(tri_values(u)) - exact(c[:, 0], c[:, 1])
        l2 = float(np.sqrt(np.sum(mesh.areas * du * du)))
        gv = gradient(u).vectors
        dgx = gv[:, 0] - gx(c[:, 0], c[:, 1])
        dgy = gv[:, 1] - gy(c[:, 0], c[:, 1])
        h1 = float(np.sqrt(np.sum(mesh.areas * (dgx**2 + dgy**2))))
        ns.append(n)
        l2s.append(l2)
        h1s.append(h1)
        ens.append(rep.energy_trace[-1])
    l2r = [float(np.log2(a / b)) for a, b in zip(l2s, l2s[1:])]
    h1r = [float(np.log2(a / b)) for a, b in zip(h1s, h1s[1:])]
    return ConvergenceReport(ns, l2s, h1s, l2r, h1r, ens)


# ---------------------------------------------------------------------------
# problem file format


def write_problem(path, spec: ProblemSpec, extras=None):
    with open(path, "w") as f:
        f.write(f"p = {spec.p:.17g}\n")
        f.write(f"epsilon0 = {spec.epsilon0:.17g}\n")
        f.write(f"operator = {'scaled' if spec.operator == 'scaled' else 'plap'}\n")
        for key, val in (("b", spec.b), ("f", spec.f)):
            if np.ndim(val) == 0:
                f.write(f"{key} = {float(val):.17g}\n")
        if extras:
            for k, v in extras.items():
                f.write(f"{k} = {v}\n")


def read_problem(path, mesh: CrackMesh) -> ProblemSpec:
    """Parse the key = value problem format; values are numbers or file
    paths relative to the problem file."""
    import os

    keys = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            keys[k.strip()] = v.strip()

    base = os.path.dirname(os.path.abspath(path))

    def tri_data(token, default):
        if token is None:
            return default
        try:
            return float(token)
        except ValueError:
            pass
        data = np.loadtxt(os.path.join(base, token), delimiter=",", skiprows=1, ndmin=2)
        out = np.full(mesh.n_triangles, 0.0)
        out[data[:, 0].astype(int)] = data[:, 1]
        return out

    dirichlet = None
    if "dirichlet" in keys:
        data = np.loadtxt(
            os.path.join(base, keys["dirichlet"]), delimiter=",", skiprows=1, ndmin=2
        )
        dirichlet = (data[:, 0].astype(int), data[:, 1])

    op = keys.get("operator", "plap")
    return ProblemSpec(
        p=float(keys.get("p", 2.0)),
        b=tri_data(keys.get("b"), 0.0),
        f=tri_data(keys.get("f"), 0.0),
        g_load=tri_data(keys.get("g"), 0.0),
        a=tri_data(keys.get("a"), 1.0),
        operator="scaled" if op == "scaled" else "p_laplacian",
        dirichlet=dirichlet,
        epsilon0=float(keys.get("epsilon0", 1e-2)),
    )
