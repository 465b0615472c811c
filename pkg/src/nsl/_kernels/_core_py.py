"""Vectorized numpy implementations of the per-triangle hot kernels.

These are the reference semantics; the compiled backend in ``_core_c.pyx``
must match them bit-for-bit up to floating-point reassociation.
"""

import numpy as np

NAME = "numpy"


def tri_gradients(xy, tris, values):
    """Gradient of the P1 interpolant, one 2-vector per triangle."""
    p0 = xy[tris[:, 0]]
    p1 = xy[tris[:, 1]]
    p2 = xy[tris[:, 2]]
    d1 = p1 - p0
    d2 = p2 - p0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    e1 = values[tris[:, 1]] - values[tris[:, 0]]
    e2 = values[tris[:, 2]] - values[tris[:, 0]]
    out = np.empty((len(tris), 2))
    out[:, 0] = (e1 * d2[:, 1] - e2 * d1[:, 1]) / det
    out[:, 1] = (-e1 * d2[:, 0] + e2 * d1[:, 0]) / det
    return out


def tri_means(tris, values):
    """Average of the three nodal values per triangle (centroid value)."""
    return (values[tris[:, 0]] + values[tris[:, 1]] + values[tris[:, 2]]) / 3.0


def p_terms(s2, p, eps):
    """Pointwise pieces of the regularized p-energy at squared slope s2.

    Returns (phi, w, t) with
      phi = (s2 + eps^2)^(p/2) - eps^p          (energy density, zero at 0)
      w   = (s2 + eps^2)^((p-2)/2)              (secant weight)
      t   = (p-2) * (s2 + eps^2)^((p-4)/2)      (tangent correction)
    computed from a single power of the shifted slope.
    """
    q = s2 + eps * eps
    base = q ** ((p - 4.0) / 2.0)
    w = base * q
    phi = w * q - eps**p
    t = (p - 2.0) * base
    return phi, w, t


def p_energy_sum(area, coef, s2, p, eps):
    """sum_T area*coef*((s2+eps^2)^(p/2) - eps^p)."""
    q = s2 + eps * eps
    return float(np.sum(area * coef * (q ** (p / 2.0) - eps**p)))
