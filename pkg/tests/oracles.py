"""Independent oracles used by the tests.

Each oracle is deliberately naive (pairwise distances, cyclic coordinate
search, exhaustive path enumeration) and never shares code with the
implementation paths it checks.
"""

import numpy as np
from scipy.spatial.distance import cdist


def brute_hausdorff(a, b, diam):
    """Pairwise-distance Hausdorff between point clouds with the empty
    conventions dist(x, {}) = diam, sup {} = 0."""
    a = np.asarray(a, float).reshape(-1, 2)
    b = np.asarray(b, float).reshape(-1, 2)
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return diam
    d = cdist(a, b)
    return max(d.min(axis=1).max(), d.min(axis=0).max())


def coordinate_search(fn, x0, tol=1e-8, step0=1.0, max_sweeps=200000):
    """Derivative-free compass search with expanding/shrinking steps.

    Polls +/- step along every coordinate and along the all-ones diagonal
    (additive constants are the flattest direction of the energies this
    oracle is used on). A successful sweep doubles the step, a failed sweep
    halves it; stops once step < tol.
    """
    x = np.array(x0, float)
    f = fn(x)
    n = len(x)
    directions = [e for i in range(n) for e in (np.eye(n)[i], -np.eye(n)[i])]
    ones = np.ones(n)
    directions += [ones, -ones]
    step = step0
    cap = step0 * 256.0
    sweeps = 0
    while step >= tol and sweeps < max_sweeps:
        improved = False
        for d in directions:
            xt = x + step * d
            ft = fn(xt)
            if ft < f - 1e-300:
                x, f = xt, ft
                improved = True
        step = min(step * 2.0, cap) if improved else step * 0.5
        sweeps += 1
    return x, f


def enumerate_simple_paths(adjacency, start, end, max_edges):
    """All simple vertex paths from start to end with at most max_edges edges."""
    out = []
    stack = [(start, [start])]
    while stack:
        v, path = stack.pop()
        if len(path) - 1 > max_edges:
            continue
        if v == end and len(path) > 1:
            out.append(path)
            continue
        if v == end:
            out.append(path)  # degenerate single-vertex path; callers filter
            continue
        for w in sorted(adjacency[v]):
            if w not in path and len(path) <= max_edges:
                stack.append((w, path + [w]))
    return [p for p in out if len(p) >= 2]


def dyadic_cover_count_1d(length, side):
    """Number of half-open dyadic intervals of given side meeting [0, length]."""
    import math

    return int(math.floor(length / side)) + 1
