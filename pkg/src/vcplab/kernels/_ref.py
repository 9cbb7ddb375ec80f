"""Pure-numpy reference implementations of the hot kernels.

Same contracts as the compiled twin in ``_fast.pyx``; used as the import-time
fallback and as the correctness oracle in the kernel equivalence tests.
"""

import numpy as np

IMPL_NAME = "numpy"


def ball_energies(points, masses, centers, radii, band):
    """Weighted mass inside balls, one ball per (center, radius) pair.

    Cell membership uses a linear transition band of half-width ``band``
    around each sphere, so the result is continuous and nondecreasing in the
    radius: weight = clip((r - dist + band) / (2 band), 0, 1).  ``band = 0``
    gives the sharp indicator.

    points  : (M, 3) cell centers
    masses  : (M,) nonnegative cell masses
    centers : (C, 3) ball centers
    radii   : (C,) ball radii
    returns : (C,) weighted mass per ball
    """
    points = np.asarray(points, dtype=float)
    masses = np.asarray(masses, dtype=float)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    out = np.empty(len(centers))
    for c in range(len(centers)):
        dist = np.linalg.norm(points - centers[c], axis=1)
        if band > 0.0:
            w = np.clip((radii[c] - dist + band) / (2.0 * band), 0.0, 1.0)
        else:
            w = (dist <= radii[c]).astype(float)
        out[c] = w @ masses
    return out


def cross_rhs(du, j_out, j_a, j_b, j_val, g_low, sqrt_g):
    """Cross-product side of the first-order system for fold-2 targets.

    Computes, per sample point m,

        R[m, lam, i] = (1 / (2 sqrt_g[m])) * eps^{a b c} g_low[m, lam, c]
                       * J^i_{jk} du[m, a, j] du[m, b, k]

    where the structure constants J are given as a sparse entry list
    J^{j_out}_{j_a, j_b} = j_val with j_a < j_b (the j_a > j_b half is
    implied by antisymmetry and accounted for with a factor 2).

    du     : (M, 3, d) with du[m, a, i] = d u^i / d x^a
    g_low  : (M, 3, 3) domain metric (index-lowering factor)
    sqrt_g : (M,) metric volume factor
    returns: (M, 3, d)
    """
    du = np.asarray(du, dtype=float)
    _, _, d = du.shape
    j_out = np.asarray(j_out, dtype=np.intp)
    j_val = np.asarray(j_val, dtype=float)
    # cross products of the coordinate-gradient 3-vectors of components a, b
    grad_a = du[:, :, j_a].transpose(0, 2, 1)  # (M, T, 3)
    grad_b = du[:, :, j_b].transpose(0, 2, 1)
    cr = np.cross(grad_a, grad_b)              # eps^{abc} du_a du_b per entry
    scatter = np.zeros((len(j_out), d))
    scatter[np.arange(len(j_out)), j_out] = 2.0 * j_val
    v = np.tensordot(cr, scatter, axes=([1], [0]))  # (M, 3, d)
    out = g_low @ v
    out /= (2.0 * sqrt_g)[:, None, None]
    return out
