"""Rasterized planar domains, compact sets, Hausdorff metrics, and the
dyadic pre-measure estimator behind the admissibility report.

A domain is an open union of grid cells inside an axis-aligned bounding
box; its complement (within the closed box, together with the exterior)
carries the component structure used throughout the experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

# 4-connectivity for complement components; one-cell diagonal walls separate.
_STRUCTURE4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned square bounding box (x0, y0, side)."""

    x0: float
    y0: float
    side: float

    def diameter(self):
        return self.side * math.sqrt(2.0)

    def __eq__(self, other):
        return (
            isinstance(other, Box)
            and self.x0 == other.x0
            and self.y0 == other.y0
            and self.side == other.side
        )

    def __hash__(self):
        return hash((self.x0, self.y0, self.side))


@dataclass(frozen=True, eq=False)
class PixelDomain:
    """Open planar domain given by an n-by-n boolean cell mask.

    ``open_mask[ix, iy]`` is True when the (open) cell interior belongs to
    the domain; ``iy`` increases upward. The exterior of the box always
    represents the unbounded complement component, even for a full mask.
    """

    resolution: int
    open_mask: np.ndarray
    box: Box

    def __post_init__(self):
        mask = np.asarray(self.open_mask, dtype=bool)
        if mask.shape != (self.resolution, self.resolution):
            raise ValueError("mask shape does not match resolution")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "open_mask", mask)

    @property
    def cell_size(self):
        return self.box.side / self.resolution

    def cell_centers(self, mask=None):
        """Coordinates of the centers of the selected cells, shape (m, 2)."""
        if mask is None:
            mask = self.open_mask
        ix, iy = np.nonzero(mask)
        h = self.cell_size
        pts = np.empty((len(ix), 2))
        pts[:, 0] = self.box.x0 + (ix + 0.5) * h
        pts[:, 1] = self.box.y0 + (iy + 0.5) * h
        return pts

    @classmethod
    def full(cls, resolution, box=Box(0.0, 0.0, 1.0)):
        return cls(resolution, np.ones((resolution, resolution), bool), box)

    @classmethod
    def from_predicate(cls, resolution, box, inside):
        """Rasterize ``inside(x, y)`` by the cell-center rule."""
        h = box.side / resolution
        c = (np.arange(resolution) + 0.5) * h
        X = box.x0 + c[:, None] + np.zeros((1, resolution))
        Y = box.y0 + c[None, :] + np.zeros((resolution, 1))
        return cls(resolution, inside(X, Y), box)

    def without_cells(self, cut_mask):
        return PixelDomain(self.resolution, self.open_mask & ~cut_mask, self.box)


def lebesgue_measure(dom: PixelDomain) -> float:
    """Area of the domain: cell count times cell area."""
    return float(np.count_nonzero(dom.open_mask)) * dom.cell_size**2


@dataclass(frozen=True)
class CompactSet:
    """Compact subset of the closed box: a pixel union or a finite point set."""

    kind: str  # "pixel" | "points"
    points: np.ndarray  # (m, 2); pixel kind stores cell centers
    cell_size: float = 0.0  # nonzero only for pixel kind

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.kind not in ("pixel", "points"):
            raise ValueError(f"unknown CompactSet kind {self.kind!r}")

    @classmethod
    def from_points(cls, pts):
        return cls("points", np.asarray(pts, float).reshape(-1, 2))

    @classmethod
    def from_cells(cls, dom: PixelDomain, cell_mask):
        return cls("pixel", _centers_of(dom, cell_mask), dom.cell_size)

    @classmethod
    def empty(cls):
        return cls("points", np.empty((0, 2)))

    def is_empty(self):
        return len(self.points) == 0


def _centers_of(dom, cell_mask):
    ix, iy = np.nonzero(cell_mask)
    h = dom.cell_size
    pts = np.empty((len(ix), 2))
    pts[:, 0] = dom.box.x0 + (ix + 0.5) * h
    pts[:, 1] = dom.box.y0 + (iy + 0.5) * h
    return pts


def _directed_sup_dist(a, b, diam_a):
    """sup_{x in a} dist(x, b) with dist(x, {}) = diam_a and sup {} = 0."""
    if len(a) == 0:
        return 0.0
    if len(b) == 0:
        return diam_a
    d, _ = cKDTree(b).query(a)
    return float(np.max(d))


def hausdorff_distance(k1: CompactSet, k2: CompactSet, diam_a: float) -> float:
    """Hausdorff distance between compact sets in a box of diameter diam_a.

    Pixel sets are represented by their cell-center clouds, so the value is
    exact up to one cell diagonal for pixel unions and exact for point sets.
    The empty-set conventions give d(empty, empty) = 0 and
    d(empty, K) = diam_a for nonempty K.
    """
    if diam_a < 0:
        raise ValueError("diam_a must be nonnegative")
    return max(
        _directed_sup_dist(k1.points, k2.points, diam_a),
        _directed_sup_dist(k2.points, k1.points, diam_a),
    )


@dataclass(frozen=True)
class ComponentLabeling:
    """Connected components of the complement, exterior merged into K_0.

    ``labels[ix, iy]`` is -1 on domain cells, 0 on cells of the unbounded
    component, and 1..m on bounded components. ``representatives`` holds one
    point per component (a cell center, or a box corner when K_0 has no
    cells inside the box).
    """

    domain: PixelDomain
    labels: np.ndarray
    unbounded_id: int
    representatives: dict[int, tuple[float, float]]

    @property
    def n_components(self):
        return len(self.representatives)

    def bounded_ids(self):
        return [k for k in sorted(self.representatives) if k != self.unbounded_id]

    def cells_of(self, comp_id):
        return self.labels == comp_id

    def component_vertices(self, comp_id):
        """Grid-vertex index pairs incident to the component's cells.

        For the unbounded component the vertices of the box boundary are
        always included (the exterior is part of K_0).
        """
        n = self.domain.resolution
        vmask = np.zeros((n + 1, n + 1), bool)
        cells = self.cells_of(comp_id)
        vmask[:-1, :-1] |= cells
        vmask[1:, :-1] |= cells
        vmask[:-1, 1:] |= cells
        vmask[1:, 1:] |= cells
        if comp_id == self.unbounded_id:
            vmask[0, :] = vmask[-1, :] = True
            vmask[:, 0] = vmask[:, -1] = True
        return vmask


def complement_components(dom: PixelDomain) -> ComponentLabeling:
    """4-connected labeling of the complement cells, exterior merged into K_0."""
    closed = ~dom.open_mask
    raw, _ = ndimage.label(closed, structure=_STRUCTURE4)
    # Components touching the box boundary connect to the exterior.
    border_labels = set(np.unique(raw[0, :])) | set(np.unique(raw[-1, :]))
    border_labels |= set(np.unique(raw[:, 0])) | set(np.unique(raw[:, -1]))
    border_labels.discard(0)

    labels = np.full(dom.open_mask.shape, -1, dtype=np.int32)
    labels[raw > 0] = 0  # provisional: everything bounded until renumbered
    reps: dict[int, tuple[float, float]] = {}
    next_id = 1
    h = dom.cell_size
    for lab in range(1, raw.max() + 1):
        cells = raw == lab
        if lab in border_labels:
            labels[cells] = 0
        else:
            labels[cells] = next_id
            ix, iy = np.nonzero(cells)
            reps[next_id] = (
                dom.box.x0 + (ix[0] + 0.5) * h,
                dom.box.y0 + (iy[0] + 0.5) * h,
            )
            next_id += 1
    # Representative for K_0: a cell inside the box if any, else a box corner.
    k0_cells = labels == 0
    if k0_cells.any():
        ix, iy = np.nonzero(k0_cells)
        reps[0] = (dom.box.x0 + (ix[0] + 0.5) * h, dom.box.y0 + (iy[0] + 0.5) * h)
    else:
        reps[0] = (dom.box.x0, dom.box.y0)
    return ComponentLabeling(dom, labels, 0, dict(sorted(reps.items())))


def complementary_distance(dom1: PixelDomain, dom2: PixelDomain) -> float:
    """Hausdorff distance between the complements inside the shared box.

    The box boundary belongs to both complements and is sampled at grid
    spacing along all four sides.
    """
    if dom1.box != dom2.box or dom1.resolution != dom2.resolution:
        raise ValueError("domains must share the same bounding box and grid")
    frame = _frame_points(dom1)
    c1 = np.vstack([dom1.cell_centers(~dom1.open_mask), frame])
    c2 = np.vstack([dom2.cell_centers(~dom2.open_mask), frame])
    return hausdorff_distance(
        CompactSet("pixel", c1, dom1.cell_size),
        CompactSet("pixel", c2, dom2.cell_size),
        dom1.box.diameter(),
    )


def _frame_points(dom):
    n = dom.resolution
    t = np.linspace(0.0, dom.box.side, n + 1)
    x0, y0, s = dom.box.x0, dom.box.y0, dom.box.side
    pts = [
        np.stack([x0 + t, np.full(n + 1, y0)], axis=1),
        np.stack([x0 + t, np.full(n + 1, y0 + s)], axis=1),
        np.stack([np.full(n + 1, x0), y0 + t], axis=1),
        np.stack([np.full(n + 1, x0 + s), y0 + t], axis=1),
    ]
    return np.unique(np.vstack(pts), axis=0)


def premeasure_estimate(e: CompactSet, alpha: float, delta: float) -> float:
    """Greedy dyadic-cover estimate of the (alpha, delta) Hausdorff pre-measure.

    Covers the set by half-open squares of the largest dyadic side <= delta
    (anchored at the origin) and returns count * side**alpha. This upper
    bounds the dyadic pre-measure and decreases in delta for sets whose
    alpha-measure vanishes.
    """
    if not (0.0 < alpha <= 2.0):
        raise ValueError("alpha must lie in (0, 2]")
    if delta <= 0:
        raise ValueError("delta must be positive")
    side = 2.0 ** math.floor(math.log2(delta))
    if e.is_empty():
        return 0.0
    if e.kind == "points" or e.cell_size <= side:
        if e.kind == "pixel" and e.cell_size > 0:
            # Cell squares may straddle dyadic lines: cover the four corners.
            h = e.cell_size / 2.0
            corners = np.concatenate(
                [e.points + [sx * h, sy * h] for sx in (-1, 1) for sy in (-1, 1)]
            )
            idx = np.unique(np.floor(corners / side).astype(np.int64), axis=0)
        else:
            idx = np.unique(np.floor(e.points / side).astype(np.int64), axis=0)
        return float(len(idx)) * side**alpha
    # side < cell: enumerate the dyadic squares intersecting each closed cell
    h = e.cell_size / 2.0
    lo = np.floor((e.points - h) / side).astype(np.int64)
    hi = np.floor((e.points + h) / side).astype(np.int64)
    per_cell = (hi - lo + 1).prod(axis=1)
    if per_cell.sum() > 50_000_000:
        raise ValueError("dyadic cover too large at this delta")
    boxes = set()
    for (lx, ly), (hx, hy) in zip(lo, hi):
        for i in range(lx, hx + 1):
            for j in range(ly, hy + 1):
                boxes.add((i, j))
    return float(len(boxes)) * side**alpha


@dataclass(frozen=True)
class AdmissibilityReport:
    """Trace of dyadic pre-measure estimates for a complement selection.

    The flag is heuristic: it asserts consistency with a vanishing
    (2-p)-dimensional measure of the selection, not the measure itself.
    """

    p: float
    alpha: float
    selection: str
    n_components: int
    deltas: tuple[float, ...]
    trace: tuple[float, ...]
    consistent: bool
    note: str = "heuristic dyadic-cover upper bound"


def is_admissible_estimate(
    dom: PixelDomain, p: float, deltas, selection: str = "components"
) -> AdmissibilityReport:
    """Estimate whether the complement admits a small point selection.

    ``selection="components"`` picks one representative point per
    complement component (always a finite set here). ``selection="cells"``
    forces one point per complement cell, modelling a continuum family with
    uncountably many components (e.g. a fat segment); only the trace decay
    can then certify consistency.
    """
    if not (1.0 <= p < 2.0):
        raise ValueError("p must lie in [1, 2)")
    deltas = [float(d) for d in deltas]
    if len(deltas) < 2 or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be strictly decreasing with length >= 2")
    alpha = 2.0 - p
    labeling = complement_components(dom)
    if selection == "components":
        pts = np.array([labeling.representatives[k] for k in sorted(labeling.representatives)])
        e = CompactSet.from_points(pts)
    elif selection == "cells":
        e = CompactSet.from_points(dom.cell_centers(~dom.open_mask))
        if e.is_empty():
            e = CompactSet.from_points([(dom.box.x0, dom.box.y0)])
    else:
        raise ValueError(f"unknown selection {selection!r}")
    trace = tuple(premeasure_estimate(e, alpha, d) for d in deltas)
    decayed = trace[-1] <= 0.5 * trace[0]
    consistent = decayed or (selection == "components")
    return AdmissibilityReport(
        p=p,
        alpha=alpha,
        selection=selection,
        n_components=labeling.n_components,
        deltas=tuple(deltas),
        trace=trace,
        consistent=consistent,
    )


# ---------------------------------------------------------------------------
# domain file format


def write_domain(path, dom: PixelDomain):
    """Text format: 'pixeldomain n x0 y0 side' then n rows of n chars, top row first."""
    n = dom.resolution
    with open(path, "w") as f:
        f.write(f"pixeldomain {n} {dom.box.x0:.17g} {dom.box.y0:.17g} {dom.box.side:.17g}\n")
        for row in range(n):
            iy = n - 1 - row
            f.write("".join("1" if dom.open_mask[ix, iy] else "0" for ix in range(n)))
            f.write("\n")


def read_domain(path) -> PixelDomain:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 5 or header[0] != "pixeldomain":
            raise ValueError(f"{path}: not a pixeldomain file")
        n = int(header[1])
        box = Box(float(header[2]), float(header[3]), float(header[4]))
        mask = np.zeros((n, n), bool)
        for row in range(n):
            line = f.readline().strip()
            if len(line) != n:
                raise ValueError(f"{path}: bad row length at row {row}")
            iy = n - 1 - row
            mask[:, iy] = np.frombuffer(line.encode(), dtype="S1") == b"1"
    return PixelDomain(n, mask, box)


def write_points_csv(path, pts):
    with open(path, "w") as f:
        f.write("x,y\n")
        for x, y in np.asarray(pts, float).reshape(-1, 2):
            f.write(f"{x:.17g},{y:.17g}\n")


def read_points_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data.reshape(-1, 2)
