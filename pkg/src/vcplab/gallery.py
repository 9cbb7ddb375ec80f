"""Analytic example maps: the verified gallery behind tests and scenarios.

Everything here has a closed-form differential, which keeps the pointwise
diagnostics at roundoff and lets the bubble pipeline use scale-aware radial
quadrature.  The conformal self-maps carry exact inverses so that energies
over corresponding regions can be compared without root finding.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fields import (ChartDomain, MapField, MetricField, TargetStructure,
                     stereo_unproject, stereo_unproject_jacobian)


# ---------------------------------------------------------------------------
# linear gallery into the 7-dimensional structured target

def linear_map_field(domain, matrix, offset=None, target=None):
    """Map x -> offset + A x as an analytic MapField."""
    matrix = np.asarray(matrix, dtype=float)
    d = matrix.shape[0]
    target = target or TargetStructure.g2()
    if target.d != d:
        raise ValueError("matrix rows must match target dimension")
    offset = np.zeros(d) if offset is None else np.asarray(offset, float)

    def evaluator(points):
        points = np.asarray(points, dtype=float)
        return offset + points @ matrix.T

    def diff(points):
        points = np.asarray(points, dtype=float)
        out = np.zeros(points.shape[:-1] + (3, d))
        out[...] = matrix.T
        return out

    return MapField(domain, target, evaluator=evaluator, differential_fn=diff)


def associative_inclusion(domain, scale=1.0):
    """Dilated inclusion of the chart into the calibrated coordinate 3-plane."""
    mat = np.zeros((7, 3))
    mat[:3, :3] = scale * np.eye(3)
    return linear_map_field(domain, mat)


def reversed_inclusion(domain):
    """Orientation-reversing variant: maximally anti-calibrated plane."""
    mat = np.zeros((7, 3))
    mat[:3, :3] = np.diag([1.0, 1.0, -1.0])
    return linear_map_field(domain, mat)


def constant_map(domain, value, target=None):
    value = np.asarray(value, dtype=float)
    target = target or TargetStructure.euclidean(len(value))

    def evaluator(points):
        points = np.asarray(points, dtype=float)
        return np.broadcast_to(value, points.shape[:-1] + value.shape).copy()

    def diff(points):
        points = np.asarray(points, dtype=float)
        return np.zeros(points.shape[:-1] + (3, len(value)))

    return MapField(domain, target, evaluator=evaluator, differential_fn=diff)


# ---------------------------------------------------------------------------
# orientation-preserving conformal self-maps of the chart

@dataclass(frozen=True)
class ConformalMap:
    """Chart self-map with analytic differential and exact inverse."""

    fn: Callable
    dfn: Callable                 # gradient layout: dfn[a, b] = dF^b/dx^a
    inv: Optional["ConformalMap"] = None
    label: str = "conformal"


def dilation(factor, label=None):
    factor = float(factor)

    def fn(p):
        return factor * np.asarray(p, dtype=float)

    def dfn(p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (3, 3))
        out[...] = factor * np.eye(3)
        return out

    fwd = ConformalMap(fn, dfn, label=label or f"dilation({factor:g})")
    if label is None:
        object.__setattr__(fwd, "inv", dilation(1.0 / factor, label="inv"))
        object.__setattr__(fwd.inv, "inv", fwd)
    return fwd


def translation(vector):
    vector = np.asarray(vector, dtype=float)

    def fn(p):
        return np.asarray(p, dtype=float) + vector

    def dfn(p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (3, 3))
        out[...] = np.eye(3)
        return out

    fwd = ConformalMap(fn, dfn, label="translation")
    object.__setattr__(fwd, "inv",
                       ConformalMap(lambda p: np.asarray(p, float) - vector,
                                    dfn, inv=fwd, label="translation-inv"))
    return fwd


def rotation(matrix):
    matrix = np.asarray(matrix, dtype=float)
    if np.linalg.det(matrix) < 0:
        raise ValueError("rotation must preserve orientation")

    def fn(p):
        return np.asarray(p, dtype=float) @ matrix.T

    def dfn(p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (3, 3))
        out[...] = matrix.T
        return out

    fwd = ConformalMap(fn, dfn, label="rotation")
    inv_fn = lambda p: np.asarray(p, dtype=float) @ matrix

    def inv_dfn(p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (3, 3))
        out[...] = matrix
        return out

    object.__setattr__(fwd, "inv", ConformalMap(inv_fn, inv_dfn, inv=fwd,
                                                label="rotation-inv"))
    return fwd


def reflected_inversion(center, radius=1.0):
    """Sphere inversion composed with a plane reflection: an
    orientation-preserving conformal involution of R^3 minus the center.

    M(x) = c + radius^2 S (x - c) / |x - c|^2 with S = diag(1, 1, -1);
    M is its own inverse.
    """
    center = np.asarray(center, dtype=float)
    s_diag = np.array([1.0, 1.0, -1.0])

    def fn(p):
        y = np.asarray(p, dtype=float) - center
        r2 = np.sum(y * y, axis=-1, keepdims=True)
        return center + radius ** 2 * (y * s_diag) / r2

    def dfn(p):
        y = np.asarray(p, dtype=float) - center
        r2 = np.sum(y * y, axis=-1)
        nhat = y / np.sqrt(r2)[..., None]
        lin = np.eye(3) - 2.0 * nhat[..., :, None] * nhat[..., None, :]
        # gradient layout of x -> S lin(x) scaled: dF[a, b] = (lin S)[a, b]
        jac = radius ** 2 / r2[..., None, None] * (lin * s_diag)
        return jac

    fwd = ConformalMap(fn, dfn, label=f"reflected-inversion(r={radius:g})")
    object.__setattr__(fwd, "inv", fwd)
    return fwd


def compose(outer, inner):
    """outer o inner with chained differential and inverse."""
    def fn(p):
        return outer.fn(inner.fn(p))

    def dfn(p):
        ji = np.asarray(inner.dfn(p), dtype=float)
        jo = np.asarray(outer.dfn(inner.fn(p)), dtype=float)
        return np.einsum("...ab,...bc->...ac", ji, jo)

    inv = None
    if outer.inv is not None and inner.inv is not None:
        inv_fn = lambda p: inner.inv.fn(outer.inv.fn(p))

        def inv_dfn(p):
            jo = np.asarray(outer.inv.dfn(p), dtype=float)
            ji = np.asarray(inner.inv.dfn(outer.inv.fn(p)), dtype=float)
            return np.einsum("...ab,...bc->...ac", jo, ji)

        inv = ConformalMap(inv_fn, inv_dfn,
                           label=f"({inner.label} o {outer.label})^-1")
    fwd = ConformalMap(fn, dfn, inv=inv,
                       label=f"{outer.label} o {inner.label}")
    if inv is not None:
        object.__setattr__(inv, "inv", fwd)
    return fwd


def gallery_mobius(center=(1.6, 0.2, -0.3), radius=1.2, factor=1.25):
    """A fixed nontrivial orientation-preserving conformal chart map whose
    inverse is exact; the inversion center sits outside the unit test box."""
    rot_angle = 0.35
    c, s = np.cos(rot_angle), np.sin(rot_angle)
    rot = rotation(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))
    return compose(reflected_inversion(center, radius),
                   compose(dilation(factor), rot))


# ---------------------------------------------------------------------------
# sphere inclusion families (conformal concentration scenarios)

def _embed(values4, d, offset=0):
    out = np.zeros(values4.shape[:-1] + (d,))
    out[..., offset:offset + 4] = values4
    return out


def sphere_blowup_map(domain, rate, center=None, d=4, offset=0,
                      target=None):
    """Chart map x -> round-sphere point of rate*(x - center), embedded.

    The differential is conformal of factor rate * 2/(1 + |rate x|^2); as
    the rate grows the full sphere volume concentrates at the center.
    """
    center = np.zeros(3) if center is None else np.asarray(center, float)
    target = target or TargetStructure.euclidean(d)

    def evaluator(points):
        y = rate * (np.asarray(points, dtype=float) - center)
        return _embed(stereo_unproject(y), d, offset)

    def diff(points):
        y = rate * (np.asarray(points, dtype=float) - center)
        jac = rate * stereo_unproject_jacobian(y)
        out = np.zeros(y.shape[:-1] + (3, d))
        out[..., offset:offset + 4] = jac
        return out

    return MapField(domain, target, evaluator=evaluator, differential_fn=diff)


def mobius_sequence(domain, scale=16.0, center=None):
    """Index ladder of sphere blow-ups: all mass collapses to the center."""
    def generator(n):
        u = sphere_blowup_map(domain, scale * n, center=center)
        return u, MetricField.euclidean()
    return generator


def two_bubble_sequence(domain, scale=16.0, p1=(-0.28, 0.0, 0.0),
                        p2=(0.28, 0.0, 0.0)):
    """Two disjointly supported sphere blow-ups glued in a product target."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    target = TargetStructure.euclidean(8)

    def generator(n):
        rate = scale * n

        def evaluator(points):
            points = np.asarray(points, dtype=float)
            out = np.zeros(points.shape[:-1] + (8,))
            out[..., :4] = stereo_unproject(rate * (points - p1))
            out[..., 4:] = stereo_unproject(rate * (points - p2))
            return out

        def diff(points):
            points = np.asarray(points, dtype=float)
            out = np.zeros(points.shape[:-1] + (3, 8))
            out[..., :4] = rate * stereo_unproject_jacobian(
                rate * (points - p1))
            out[..., 4:] = rate * stereo_unproject_jacobian(
                rate * (points - p2))
            return out

        u = MapField(domain, target, evaluator=evaluator,
                     differential_fn=diff)
        return u, MetricField.euclidean()
    return generator


# ---------------------------------------------------------------------------
# holomorphic curves and fiber functions for the product-target lift

def flat_curve():
    """v(z) = (z, 0, 0); derivative (1, 0, 0)."""
    def v(z):
        z = np.asarray(z)
        out = np.zeros(z.shape + (3,), dtype=complex)
        out[..., 0] = z
        return out

    def dv(z):
        z = np.asarray(z)
        out = np.zeros(z.shape + (3,), dtype=complex)
        out[..., 0] = 1.0
        return out
    return v, dv


def curved_curve(bend=0.25):
    """v(z) = (z, bend z^2, 0); nonconstant conformal factor, dv nonzero."""
    def v(z):
        z = np.asarray(z)
        out = np.zeros(z.shape + (3,), dtype=complex)
        out[..., 0] = z
        out[..., 1] = bend * z * z
        return out

    def dv(z):
        z = np.asarray(z)
        out = np.zeros(z.shape + (3,), dtype=complex)
        out[..., 0] = 1.0
        out[..., 1] = 2.0 * bend * z
        return out
    return v, dv


def constant_curve(value=(0.3 + 0.1j, -0.2 + 0.0j, 0.05 + 0.4j)):
    value = np.asarray(value, dtype=complex)

    def v(z):
        z = np.asarray(z)
        return np.broadcast_to(value, z.shape + (3,)).copy()

    def dv(z):
        z = np.asarray(z)
        return np.zeros(z.shape + (3,), dtype=complex)
    return v, dv


def straight_fiber(speed=1.0):
    """f(x, phi) = speed * phi."""
    def f(points):
        return speed * np.asarray(points, dtype=float)[..., 2]

    def df(points):
        points = np.asarray(points, dtype=float)
        out = np.zeros(points.shape[:-1] + (3,))
        out[..., 2] = speed
        return out
    return f, df


def sheared_fiber(amplitude=0.2):
    """f(x, phi) = phi + amplitude sin(x1 + x2); unit fiber speed."""
    def f(points):
        p = np.asarray(points, dtype=float)
        return p[..., 2] + amplitude * np.sin(p[..., 0] + p[..., 1])

    def df(points):
        p = np.asarray(points, dtype=float)
        out = np.zeros(p.shape[:-1] + (3,))
        c = amplitude * np.cos(p[..., 0] + p[..., 1])
        out[..., 0] = c
        out[..., 1] = c
        out[..., 2] = 1.0
        return out
    return f, df


def lift_domain(resolution=17, half=0.8):
    return ChartDomain("FlatBox",
                       ((-half, half), (-half, half), (0.0, 2.0 * np.pi)),
                       resolution)
