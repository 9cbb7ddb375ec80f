# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: ball-mass scans and the fold-2 cross-product
contraction.  Contracts match ``_ref.py`` exactly; see there for docs."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

IMPL_NAME = "cython"


def ball_energies(points, masses, centers, radii, double band):
    pts = np.ascontiguousarray(points, dtype=np.float64)
    ms = np.ascontiguousarray(masses, dtype=np.float64)
    ctr = np.ascontiguousarray(np.atleast_2d(centers), dtype=np.float64)
    rad = np.ascontiguousarray(np.atleast_1d(radii), dtype=np.float64)

    cdef double[:, ::1] p = pts
    cdef double[::1] m = ms
    cdef double[:, ::1] c = ctr
    cdef double[::1] r = rad
    out_arr = np.zeros(ctr.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr

    cdef Py_ssize_t nc = ctr.shape[0], np_ = pts.shape[0]
    cdef Py_ssize_t i, k
    cdef double dx, dy, dz, dist, w, acc, lo, hi, cx, cy, cz, rr

    for k in range(nc):
        cx = c[k, 0]
        cy = c[k, 1]
        cz = c[k, 2]
        rr = r[k]
        lo = rr - band
        hi = rr + band
        acc = 0.0
        for i in range(np_):
            dx = p[i, 0] - cx
            dy = p[i, 1] - cy
            dz = p[i, 2] - cz
            dist = sqrt(dx * dx + dy * dy + dz * dz)
            if dist <= lo:
                acc += m[i]
            elif dist < hi and band > 0.0:
                w = (rr - dist + band) / (2.0 * band)
                acc += w * m[i]
        out[k] = acc
    return out_arr


def cross_rhs(du, j_out, j_a, j_b, j_val, g_low, sqrt_g):
    du_arr = np.ascontiguousarray(du, dtype=np.float64)
    g_arr = np.ascontiguousarray(g_low, dtype=np.float64)
    sg_arr = np.ascontiguousarray(sqrt_g, dtype=np.float64)
    io = np.ascontiguousarray(j_out, dtype=np.int64)
    ia = np.ascontiguousarray(j_a, dtype=np.int64)
    ib = np.ascontiguousarray(j_b, dtype=np.int64)
    vv = np.ascontiguousarray(j_val, dtype=np.float64)

    cdef double[:, :, ::1] u = du_arr
    cdef double[:, :, ::1] g = g_arr
    cdef double[::1] sg = sg_arr
    cdef long[::1] jo = io
    cdef long[::1] ja = ia
    cdef long[::1] jb = ib
    cdef double[::1] jv = vv

    cdef Py_ssize_t m_pts = du_arr.shape[0], d = du_arr.shape[2]
    cdef Py_ssize_t nt = io.shape[0]
    out_arr = np.zeros((m_pts, 3, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr

    cdef Py_ssize_t m, t, lam, i
    cdef double a0, a1, a2, b0, b1, b2, c0, c1, c2, coef, s
    cdef double v[3]

    for m in range(m_pts):
        s = 1.0 / (2.0 * sg[m])
        for t in range(nt):
            a0 = u[m, 0, ja[t]]
            a1 = u[m, 1, ja[t]]
            a2 = u[m, 2, ja[t]]
            b0 = u[m, 0, jb[t]]
            b1 = u[m, 1, jb[t]]
            b2 = u[m, 2, jb[t]]
            c0 = a1 * b2 - a2 * b1
            c1 = a2 * b0 - a0 * b2
            c2 = a0 * b1 - a1 * b0
            coef = 2.0 * jv[t]
            i = jo[t]
            v[0] = coef * c0
            v[1] = coef * c1
            v[2] = coef * c2
            for lam in range(3):
                out[m, lam, i] += s * (g[m, lam, 0] * v[0]
                                       + g[m, lam, 1] * v[1]
                                       + g[m, lam, 2] * v[2])
    return out_arr
