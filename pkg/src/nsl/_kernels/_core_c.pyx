# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-triangle kernels (see _core_py for the reference semantics)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()

NAME = "cython"


def tri_gradients(double[:, ::1] xy, int[:, ::1] tris, double[::1] values):
    cdef Py_ssize_t T = tris.shape[0]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((T, 2))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t k
    cdef int i0, i1, i2
    cdef double d1x, d1y, d2x, d2y, det, e1, e2
    for k in range(T):
        i0 = tris[k, 0]; i1 = tris[k, 1]; i2 = tris[k, 2]
        d1x = xy[i1, 0] - xy[i0, 0]; d1y = xy[i1, 1] - xy[i0, 1]
        d2x = xy[i2, 0] - xy[i0, 0]; d2y = xy[i2, 1] - xy[i0, 1]
        det = d1x * d2y - d1y * d2x
        e1 = values[i1] - values[i0]
        e2 = values[i2] - values[i0]
        o[k, 0] = (e1 * d2y - e2 * d1y) / det
        o[k, 1] = (-e1 * d2x + e2 * d1x) / det
    return out


def tri_means(int[:, ::1] tris, double[::1] values):
    cdef Py_ssize_t T = tris.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(T)
    cdef double[::1] o = out
    cdef Py_ssize_t k
    for k in range(T):
        o[k] = (values[tris[k, 0]] + values[tris[k, 1]] + values[tris[k, 2]]) / 3.0
    return out


def p_terms(double[::1] s2, double p, double eps):
    cdef Py_ssize_t n = s2.shape[0]
    cdef cnp.ndarray[double, ndim=1] phi = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] w = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] t = np.empty(n)
    cdef double[::1] vphi = phi, vw = w, vt = t
    cdef double q, base, ep = pow(eps, p), e2 = eps * eps
    cdef double ex = (p - 4.0) / 2.0, pm2 = p - 2.0
    cdef Py_ssize_t k
    for k in range(n):
        q = s2[k] + e2
        base = pow(q, ex)
        vw[k] = base * q
        vphi[k] = base * q * q - ep
        vt[k] = pm2 * base
    return phi, w, t


def p_energy_sum(double[::1] area, double[::1] coef, double[::1] s2,
                 double p, double eps):
    cdef Py_ssize_t n = s2.shape[0]
    cdef double acc = 0.0, ep = pow(eps, p), e2 = eps * eps
    cdef Py_ssize_t k
    for k in range(n):
        acc += area[k] * coef[k] * (pow(s2[k] + e2, p / 2.0) - ep)
    return acc
