"""Sampled and analytic maps from charted 3-domains into flat structured targets.

Everything lives on a box chart: vertices carry finite-difference stencils,
cell centers carry midpoint quadrature.  Maps can be analytic (an evaluator
callable, optionally with an analytic differential) or grid-sampled.  The
diagnostics implemented here are the pointwise first-order residual of
conformal cross-product preservation, the conformally invariant 3-energy,
the pointwise energy-identity defect against the pulled-back calibration,
the weak-conformality defect, and the 3-harmonic divergence residual,
together with conformal precomposition, stereographic chart utilities, the
holomorphic-curve lift into a product target, and the radial homogeneous
extension of sphere boundary data.
"""

import io
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .vcp import (Calibration, CrossProduct, apply_vcp, builtin_vcp,
                  calibration_from_vcp, decomposable_coeffs,
                  vcp_from_calibration)
from .xalg import conformal_test

PREFACTOR = 3.0 ** -1.5          # 1/(sqrt(3))^3, the canonical energy unit
CRITICAL_TOL = 1e-12             # |du|_g below this counts as a critical point


# ---------------------------------------------------------------------------
# chart domains

@dataclass(frozen=True)
class ChartDomain:
    """Box chart of a 3-domain, either flat or a stereographic sphere chart.

    ``bounds`` is ((lo, hi),) * 3 in chart coordinates and ``resolution`` is
    the vertex count per axis.  A StereoChart additionally carries the sphere
    radius; its chart metric is conformal_factor(x)^2 * euclidean and the
    point at infinity is the projection pole.
    """

    kind: str
    bounds: tuple
    resolution: int
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("FlatBox", "StereoChart"):
            raise ValueError(f"unknown chart kind {self.kind!r}")
        if self.resolution < 5:
            raise ValueError("resolution must be >= 5 for the stencils used")
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if any(hi <= lo for lo, hi in b):
            raise ValueError("empty bounds")
        object.__setattr__(self, "bounds", b)

    @classmethod
    def cube(cls, kind, half_width, resolution, radius=1.0):
        b = ((-half_width, half_width),) * 3
        return cls(kind, b, resolution, radius)

    @property
    def spacing(self):
        n = self.resolution
        return tuple((hi - lo) / (n - 1) for lo, hi in self.bounds)

    @property
    def axes(self):
        n = self.resolution
        return tuple(np.linspace(lo, hi, n) for lo, hi in self.bounds)

    def vertices(self):
        """Vertex lattice, shape (N, N, N, 3)."""
        g = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(g, axis=-1)

    def cell_centers(self):
        """Midpoints of the (N-1)^3 cells, shape (N-1, N-1, N-1, 3)."""
        mids = tuple(0.5 * (a[1:] + a[:-1]) for a in self.axes)
        g = np.meshgrid(*mids, indexing="ij")
        return np.stack(g, axis=-1)

    @property
    def cell_volume(self):
        h = self.spacing
        return h[0] * h[1] * h[2]

    def conformal_factor(self, points):
        """Round-metric factor 2R^2/(R^2+|x|^2) of a stereographic chart."""
        if self.kind != "StereoChart":
            raise ValueError("conformal factor only defined on StereoChart")
        points = np.asarray(points, dtype=float)
        r2 = np.sum(points * points, axis=-1)
        return 2.0 * self.radius ** 2 / (self.radius ** 2 + r2)

    def metric(self):
        """The natural metric of the chart (flat or round pullback)."""
        if self.kind == "FlatBox":
            return MetricField.euclidean()
        return MetricField.conformal(lambda p: self.conformal_factor(p))


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class MetricField:
    """Pointwise symmetric positive-definite metric on a chart.

    ``matrix(points)`` returns (..., 3, 3) arrays; volume and inverse are
    derived on demand.  ``comparability`` is the declared eigenvalue bound
    (eigenvalues within [1/bound, bound] after unit normalization is the
    caller's responsibility to arrange where it matters).
    """

    matrix: Callable
    comparability: float = 2.0

    @classmethod
    def euclidean(cls):
        def mat(points):
            points = np.asarray(points, dtype=float)
            out = np.zeros(points.shape[:-1] + (3, 3))
            out[...] = np.eye(3)
            return out
        return cls(mat, comparability=1.0)

    @classmethod
    def conformal(cls, factor):
        """g = factor(x)^2 * euclidean."""
        def mat(points):
            f = np.asarray(factor(points), dtype=float)
            out = np.zeros(f.shape + (3, 3))
            idx = np.arange(3)
            out[..., idx, idx] = (f * f)[..., None]
            return out
        return cls(mat)

    @classmethod
    def constant(cls, g0):
        g0 = np.asarray(g0, dtype=float)

        def mat(points):
            points = np.asarray(points, dtype=float)
            out = np.zeros(points.shape[:-1] + (3, 3))
            out[...] = g0
            return out
        return cls(mat)

    def volume_factor(self, points):
        return np.sqrt(np.linalg.det(self.matrix(points)))

    def inverse(self, points):
        return np.linalg.inv(self.matrix(points))


# ---------------------------------------------------------------------------
# targets

@dataclass(frozen=True)
class TargetStructure:
    """Flat R^d target chart with an optional cross product and calibration.

    The target metric is the identity.  ``periodic`` marks coordinates that
    live on circles of circumference 2*pi (product targets); map values in
    those slots are compared modulo the period.
    """

    d: int
    vcp: Optional[CrossProduct] = None
    alpha: Optional[Calibration] = None
    periodic: tuple = ()

    @classmethod
    def g2(cls):
        q = builtin_vcp("G2", 7)
        return cls(7, q, calibration_from_vcp(q))

    @classmethod
    def oriented3(cls):
        q = builtin_vcp("HodgeStar", 3)
        return cls(3, q, calibration_from_vcp(q))

    @classmethod
    def euclidean(cls, d):
        return cls(d)

    @classmethod
    def product_cy3(cls):
        """C^3 x S^1 with the product 3-form Re(Upsilon) + dtheta ^ omega.

        Coordinates (x1, y1, x2, y2, x3, y3, theta) with z_j = x_j + i y_j;
        theta is periodic.  The induced 2-fold cross product is derived from
        the form by index raising.
        """
        comps = np.zeros(35)
        from .xalg import subset_index
        idx = subset_index(7, 3)
        entries = {
            # Re[(dx1+i dy1)^(dx2+i dy2)^(dx3+i dy3)]
            (0, 2, 4): 1.0, (0, 3, 5): -1.0, (1, 2, 5): -1.0, (1, 3, 4): -1.0,
            # dtheta ^ (dx1^dy1 + dx2^dy2 + dx3^dy3), theta index 6
            (0, 1, 6): 1.0, (2, 3, 6): 1.0, (4, 5, 6): 1.0,
        }
        for sub, v in entries.items():
            comps[idx[sub]] = v
        alpha = Calibration(7, 3, comps)
        return cls(7, vcp_from_calibration(alpha), alpha, periodic=(6,))


# ---------------------------------------------------------------------------
# map fields and differentials

@dataclass(frozen=True)
class MapField:
    """Map from a chart domain into a structured flat target.

    Analytic mode wraps a pure evaluator (and optionally its differential);
    sampled mode wraps a vertex array of shape (N, N, N, d).
    """

    domain: ChartDomain
    target: TargetStructure
    evaluator: Optional[Callable] = None
    differential_fn: Optional[Callable] = None
    samples: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.evaluator is None) == (self.samples is None):
            raise ValueError("provide exactly one of evaluator or samples")
        if self.samples is not None:
            s = np.asarray(self.samples, dtype=float)
            n = self.domain.resolution
            if s.shape != (n, n, n, self.target.d):
                raise ValueError("samples must have shape (N, N, N, d)")
            if not np.all(np.isfinite(s)):
                raise ValueError("non-finite sample values")
            object.__setattr__(self, "samples", s)

    @property
    def mode(self):
        return "analytic" if self.evaluator is not None else "sampled"

    def eval(self, points):
        points = np.asarray(points, dtype=float)
        if self.evaluator is not None:
            return np.asarray(self.evaluator(points), dtype=float)
        raise ValueError("sampled map cannot be evaluated off the vertex grid")

    def vertex_values(self):
        if self.samples is not None:
            return self.samples
        return self.eval(self.domain.vertices())

    def sample_grid(self):
        """Materialize as a sampled map (drops analytic structure)."""
        return MapField(self.domain, self.target, samples=self.vertex_values())


@dataclass(frozen=True)
class DifferentialSample:
    """Differential values du[..., a, i] = du^i/dx^a at given points."""

    points: np.ndarray
    du: np.ndarray
    scheme: str

    def norm_g(self, metric):
        """Metric-contracted norm |du|_g, flat target metric."""
        ginv = metric.inverse(self.points)
        sq = np.einsum("...ai,...bi,...ab->...", self.du, self.du, ginv)
        return np.sqrt(np.maximum(sq, 0.0))

    def scale_factor(self, metric):
        """Conformal scale lambda(du) = |du|_g / sqrt(3)."""
        return self.norm_g(metric) / np.sqrt(3.0)


def differential(u, scheme="Central2"):
    """Vertex-grid differential of a map field.

    Central2 uses centered second-order stencils (one-sided second-order at
    the box faces for sampled maps; analytic maps evaluate across the faces).
    Analytic requests the supplied closed-form differential.
    """
    if scheme == "Analytic":
        if u.differential_fn is None:
            raise ValueError("map carries no analytic differential")
        pts = u.domain.vertices()
        return DifferentialSample(pts, np.asarray(u.differential_fn(pts),
                                                  dtype=float), scheme)
    if scheme != "Central2":
        raise ValueError(f"unknown scheme {scheme!r}")
    pts = u.domain.vertices()
    h = u.domain.spacing
    if u.mode == "analytic":
        du = _central_at(u, pts, h)
    else:
        vals = u.samples
        cols = [np.gradient(vals, h[a], axis=a, edge_order=2)
                for a in range(3)]
        du = np.stack(cols, axis=-2)  # (N, N, N, 3, d)
    return DifferentialSample(pts, du, scheme)


def differential_at(u, points, step=None):
    """Differential of an analytic map at arbitrary points."""
    points = np.asarray(points, dtype=float)
    if u.differential_fn is not None:
        return np.asarray(u.differential_fn(points), dtype=float)
    if u.mode != "analytic":
        raise ValueError("off-grid differential needs an analytic map")
    if step is None:
        step = min(u.domain.spacing)
    return _central_at(u, points, (step, step, step))


def _central_at(u, points, h):
    cols = []
    for a in range(3):
        e = np.zeros(3)
        e[a] = h[a]
        cols.append((u.eval(points + e) - u.eval(points - e)) / (2 * h[a]))
    return np.stack(cols, axis=-2)


# ---------------------------------------------------------------------------
# regions

@dataclass(frozen=True)
class Region:
    """Measurable chart subset given by a boolean membership test."""

    contains: Callable
    label: str = "region"


def ball_region(center, r):
    center = np.asarray(center, dtype=float)

    def contains(points):
        return np.linalg.norm(points - center, axis=-1) <= r
    return Region(contains, f"ball(r={r:g})")


def annulus_region(center, r_in, r_out):
    center = np.asarray(center, dtype=float)
    if r_in >= r_out:
        raise ValueError("degenerate annulus")

    def contains(points):
        d = np.linalg.norm(points - center, axis=-1)
        return (d > r_in) & (d <= r_out)
    return Region(contains, f"annulus({r_in:g},{r_out:g})")


def box_region(lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)

    def contains(points):
        return np.all((points >= lo) & (points <= hi), axis=-1)
    return Region(contains, "box")


def complement_region(region, label=None):
    return Region(lambda p: ~region.contains(p),
                  label or f"not-{region.label}")


# ---------------------------------------------------------------------------
# energy

@dataclass(frozen=True)
class EnergyReport:
    """Midpoint-rule 3-energy over a chart region.

    ``total`` carries the canonical prefactor 1/(sqrt 3)^3; the raw integral
    of |du|^3 is ``total_unprefactored``.  ``density`` is the per-cell
    prefactored density (1/(sqrt 3)^3)|du|^3 sqrt(g) on cell centers.
    """

    total: float
    density: np.ndarray
    rule: str = "midpoint"
    region_label: str = "all"

    @property
    def total_unprefactored(self):
        return self.total / PREFACTOR


def _cell_density(u, metric, subdivide=1, region=None):
    """Prefactored energy density on cell centers with optional subcell
    refinement of region-boundary cells; returns (density, coverage)."""
    dom = u.domain
    centers = dom.cell_centers()
    if u.mode == "analytic":
        du = differential_at(u, centers)
        norm = DifferentialSample(centers, du, "cell").norm_g(metric)
        dens = PREFACTOR * norm ** 3 * metric.volume_factor(centers)
    else:
        vdu = differential(u, "Central2")
        vnorm = vdu.norm_g(metric)
        vdens = PREFACTOR * vnorm ** 3 * metric.volume_factor(dom.vertices())
        dens = _corner_average(vdens)
    if region is None:
        return dens, np.ones_like(dens)
    cover = _coverage(dom, region, subdivide)
    return dens, cover


def _corner_average(vertex_field):
    f = vertex_field
    return 0.125 * (f[:-1, :-1, :-1] + f[1:, :-1, :-1] + f[:-1, 1:, :-1]
                    + f[:-1, :-1, 1:] + f[1:, 1:, :-1] + f[1:, :-1, 1:]
                    + f[:-1, 1:, 1:] + f[1:, 1:, 1:])


def _coverage(dom, region, subdivide):
    """Fraction of each cell inside the region (subcell midpoint count)."""
    centers = dom.cell_centers()
    inside = region.contains(centers)
    cover = inside.astype(float)
    if subdivide <= 1:
        return cover
    # cells whose vertices disagree with each other straddle the boundary
    vin = region.contains(dom.vertices())
    agree = np.ones_like(inside)
    for sl in _corner_slices():
        agree &= (vin[sl] == inside)
    boundary = ~agree
    if not boundary.any():
        return cover
    h = np.array(dom.spacing)
    s = subdivide
    offs = (np.arange(s) + 0.5) / s - 0.5
    sub = np.stack(np.meshgrid(offs, offs, offs, indexing="ij"),
                   axis=-1).reshape(-1, 3) * h
    bpts = centers[boundary][:, None, :] + sub[None, :, :]
    frac = region.contains(bpts).mean(axis=1)
    cover[boundary] = frac
    return cover


def _corner_slices():
    half = (slice(None, -1), slice(1, None))
    return [ (half[i], half[j], half[k]) for i in range(2)
             for j in range(2) for k in range(2) ]


def energy(u, metric, region=None, subdivide=3):
    """Prefactored 3-energy over a region by the midpoint rule.

    Cells straddling the region boundary are weighted by a subcell midpoint
    coverage fraction.  Raises on empty regions.
    """
    dens, cover = _cell_density(u, metric, subdivide=subdivide, region=region)
    if region is not None and not cover.any():
        raise ValueError(f"empty region {region.label}")
    total = float(np.sum(dens * cover) * u.domain.cell_volume)
    return EnergyReport(total, dens * cover,
                        region_label=region.label if region else "all")


# ---------------------------------------------------------------------------
# pointwise diagnostics

def _vcp_entries(P):
    """Sparse (out, a, b, value) entry list with a < b for a fold-2 product."""
    from .xalg import lex_subsets
    subs = lex_subsets(P.n, 2)
    outs, aas, bbs, vals = [], [], [], []
    for row, (a, b) in enumerate(subs):
        for i in range(P.n):
            v = P.constants[row, i]
            if v != 0.0:
                outs.append(i)
                aas.append(a)
                bbs.append(b)
                vals.append(v)
    return (np.array(outs, dtype=np.int64), np.array(aas, dtype=np.int64),
            np.array(bbs, dtype=np.int64), np.array(vals))


def cross_term(u, metric, du=None):
    """First-order cross-product side of the residual, vertex grid.

    Returns (lhs, rhs, norm) with lhs = (1/sqrt 3)|du|_g du and rhs the
    metric-lowered cross-product contraction of du with the target fold-2
    product.
    """
    if u.target.vcp is None or u.target.vcp.k != 2:
        raise ValueError("target must carry a 2-fold cross product")
    if du is None:
        scheme = "Analytic" if u.differential_fn is not None else "Central2"
        du = differential(u, scheme)
    pts = du.points
    shape = pts.shape[:-1]
    flat_du = du.du.reshape(-1, 3, u.target.d)
    g = metric.matrix(pts).reshape(-1, 3, 3)
    sg = metric.volume_factor(pts).reshape(-1)
    outs, aas, bbs, vals = _vcp_entries(u.target.vcp)
    rhs = kernels.cross_rhs(flat_du, outs, aas, bbs, vals, g, sg)
    norm = du.norm_g(metric).reshape(-1)
    lhs = norm[:, None, None] / np.sqrt(3.0) * flat_du
    return (lhs.reshape(shape + (3, u.target.d)),
            rhs.reshape(shape + (3, u.target.d)), norm.reshape(shape))


def smith_residual_field(u, metric, du=None):
    """Pointwise norm of the first-order preservation residual.

    At critical points (|du|_g below a fixed tolerance) the residual is the
    norm of the cross-product side alone; both sides vanish there for true
    solutions, so the convention only affects reporting.
    """
    lhs, rhs, norm = cross_term(u, metric, du=du)
    diff = lhs - rhs
    res = np.linalg.norm(diff.reshape(diff.shape[:-2] + (-1,)), axis=-1)
    crit = norm < CRITICAL_TOL
    if crit.any():
        rn = np.linalg.norm(rhs.reshape(rhs.shape[:-2] + (-1,)), axis=-1)
        res = np.where(crit, rn, res)
    return res


def pullback_form(u, alpha, region=None):
    """Pullback density alpha(du_1, du_2, du_3) on cells and its integral."""
    if alpha.degree != 3:
        raise ValueError("pullback of a non-3-form on a 3-domain")
    centers = u.domain.cell_centers()
    if u.mode == "analytic":
        du = differential_at(u, centers)
    else:
        vdu = differential(u, "Central2").du
        du = _corner_average_nd(vdu)
    dens = decomposable_coeffs(du) @ alpha.components
    cover = np.ones(dens.shape)
    if region is not None:
        cover = _coverage(u.domain, region, 3)
    integral = float(np.sum(dens * cover) * u.domain.cell_volume)
    return dens, integral


def _corner_average_nd(vertex_field):
    f = vertex_field
    return 0.125 * (f[:-1, :-1, :-1] + f[1:, :-1, :-1] + f[:-1, 1:, :-1]
                    + f[:-1, :-1, 1:] + f[1:, 1:, :-1] + f[1:, :-1, 1:]
                    + f[:-1, 1:, 1:] + f[1:, 1:, 1:])


def energy_identity_defect(u, metric, region=None):
    """Pointwise slack (1/sqrt 3)^3 |du|^3 sqrt(g) - pullback density.

    Nonnegative up to discretization for every map, zero exactly on
    conformally preserving maps; returns (cell field, integral).
    """
    if u.target.alpha is None:
        raise ValueError("target carries no calibration form")
    centers = u.domain.cell_centers()
    if u.mode == "analytic":
        du = differential_at(u, centers)
        pts = centers
    else:
        du = _corner_average_nd(differential(u, "Central2").du)
        pts = centers
    norm = DifferentialSample(pts, du, "cell").norm_g(metric)
    edens = PREFACTOR * norm ** 3 * metric.volume_factor(pts)
    pdens = decomposable_coeffs(du) @ u.target.alpha.components
    defect = edens - pdens
    cover = np.ones(defect.shape)
    if region is not None:
        cover = _coverage(u.domain, region, 3)
    total = float(np.sum(defect * cover) * u.domain.cell_volume)
    return defect, total


def conformality_defect(u, metric, du=None):
    """Frobenius norm of du^T du - (1/3)|du|_g^2 g per vertex."""
    if du is None:
        scheme = "Analytic" if u.differential_fn is not None else "Central2"
        du = differential(u, scheme)
    pull = np.einsum("...ai,...bi->...ab", du.du, du.du)
    g = metric.matrix(du.points)
    norm2 = du.norm_g(metric) ** 2
    defect = pull - norm2[..., None, None] / 3.0 * g
    return np.linalg.norm(defect.reshape(defect.shape[:-2] + (-1,)), axis=-1)


def nharmonic_residual(u, metric):
    """Divergence residual div(sqrt(g) g^{ab} |du|_g du_b) / sqrt(g).

    Centered differences on interior vertices; the outermost vertex layer of
    the returned field is zero-padded.  Returns the Euclidean norm over
    target components per vertex.
    """
    if u.domain.resolution < 7:
        raise ValueError("resolution too low for the nested stencils")
    scheme = "Analytic" if u.differential_fn is not None else "Central2"
    du = differential(u, scheme)
    pts = du.points
    norm = du.norm_g(metric)
    ginv = metric.inverse(pts)
    sg = metric.volume_factor(pts)
    # V^{a i} = sqrt(g) g^{ab} |du|_g du^i_b
    v = np.einsum("..., ...ab,...bi->...ai", sg * norm, ginv, du.du)
    h = u.domain.spacing
    div = np.zeros(pts.shape[:-1] + (u.target.d,))
    for a in range(3):
        div += np.gradient(v[..., a, :], h[a], axis=a, edge_order=2)
    res = np.linalg.norm(div, axis=-1) / sg
    out = np.zeros_like(res)
    out[1:-1, 1:-1, 1:-1] = res[1:-1, 1:-1, 1:-1]
    return out


# ---------------------------------------------------------------------------
# conformal precomposition

def precompose_conformal(u, fmap, dfmap, domain=None, check_points=None,
                         tol=1e-8):
    """Compose an analytic map with a conformal chart self-map.

    ``fmap``/``dfmap`` give F and its 3x3 differential.  F is verified to be
    orientation-preserving conformal (pointwise) on the new domain's vertex
    grid, or on ``check_points`` when given.  Returns u o F with the chained
    analytic differential when u has one.
    """
    if u.mode != "analytic":
        raise ValueError("precomposition needs an analytic map")
    domain = domain or u.domain
    pts = check_points if check_points is not None else domain.vertices()
    jac = np.asarray(dfmap(pts), dtype=float).reshape(-1, 3, 3)
    gram = jac.transpose(0, 2, 1) @ jac
    tr = np.einsum("mii->m", gram) / 3.0
    defect = np.linalg.norm(gram - tr[:, None, None] * np.eye(3), axis=(1, 2))
    if np.any(defect > tol * np.maximum(np.linalg.norm(gram, axis=(1, 2)),
                                        1e-300)):
        raise ValueError("precomposition map fails pointwise conformality")
    if np.any(np.linalg.det(jac) <= 0):
        raise ValueError("precomposition map reverses orientation")

    def evaluator(points):
        return u.eval(fmap(points))

    dfn = None
    if u.differential_fn is not None:
        def dfn(points):
            du = np.asarray(u.differential_fn(fmap(points)), dtype=float)
            jf = np.asarray(dfmap(points), dtype=float)
            # gradient layout: d(u o F)[a, i] = dF[a, b] du(F)[b, i]
            return np.einsum("...ab,...bi->...ai", jf, du)

    return MapField(domain, u.target, evaluator=evaluator,
                    differential_fn=dfn)


# ---------------------------------------------------------------------------
# stereographic chart of the 3-sphere

def stereo_project(points4, radius=1.0, pole_tol=1e-14):
    """Chart coordinates of sphere points, projecting from the south pole."""
    p = np.asarray(points4, dtype=float)
    w = p[..., 3]
    denom = radius + w
    if np.any(np.abs(denom) < pole_tol * radius):
        raise ValueError("stereographic projection undefined at the pole")
    return radius * p[..., :3] / denom[..., None]


def stereo_unproject(x, radius=1.0):
    """Inverse chart map onto the radius-R sphere in R^4."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    denom = radius ** 2 + r2
    out = np.empty(x.shape[:-1] + (4,))
    out[..., :3] = 2.0 * radius ** 2 * x / denom[..., None]
    out[..., 3] = radius * (radius ** 2 - r2) / denom
    return out


def stereo_unproject_jacobian(x, radius=1.0):
    """Differential of the inverse chart map, gradient layout (..., 3, 4)."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    denom = radius ** 2 + r2
    jac = np.zeros(x.shape[:-1] + (3, 4))
    eye = np.eye(3)
    jac[..., :, :3] = 2.0 * radius ** 2 * (
        eye / denom[..., None, None]
        - 2.0 * x[..., :, None] * x[..., None, :] / (denom ** 2)[..., None, None])
    jac[..., :, 3] = -4.0 * radius ** 3 * x / (denom ** 2)[..., None]
    return jac


def stereo_factor(x, radius=1.0):
    """Conformal factor of the inverse chart map: 2R^2/(R^2+|x|^2)."""
    x = np.asarray(x, dtype=float)
    return 2.0 * radius ** 2 / (radius ** 2 + np.sum(x * x, axis=-1))


def north_pole(radius=1.0):
    return np.array([0.0, 0.0, 0.0, radius])


def south_pole(radius=1.0):
    return np.array([0.0, 0.0, 0.0, -radius])


def round_cap_volume(rho, radius=1.0):
    """Round volume of the sphere part outside the chart ball of radius rho.

    Closed form of the integral of the cubed conformal factor over
    |x| > rho; rho = 0 gives the full sphere volume 2 pi^2 R^3.
    """
    s = rho / radius
    inner = np.arctan(s) + (s ** 3 - s) / (1.0 + s ** 2) ** 2
    return radius ** 3 * 4.0 * np.pi * (np.pi / 2.0 - inner)


# ---------------------------------------------------------------------------
# sphere meshes (latitude-longitude midpoints, sin-weighted quadrature)

@dataclass(frozen=True)
class SphereMesh:
    """Latitude-longitude midpoint mesh of the unit 2-sphere."""

    n_theta: int
    n_phi: int

    def __post_init__(self):
        if self.n_theta < 2 or self.n_phi < 4:
            raise ValueError("empty or degenerate sphere mesh")

    @property
    def theta(self):
        n = self.n_theta
        return (np.arange(n) + 0.5) * np.pi / n

    @property
    def phi(self):
        return np.arange(self.n_phi) * 2.0 * np.pi / self.n_phi

    def points(self):
        t, p = np.meshgrid(self.theta, self.phi, indexing="ij")
        return np.stack([np.sin(t) * np.cos(p),
                         np.sin(t) * np.sin(p),
                         np.cos(t)], axis=-1)

    def weights(self):
        dt = np.pi / self.n_theta
        dp = 2.0 * np.pi / self.n_phi
        t, _ = np.meshgrid(self.theta, self.phi, indexing="ij")
        return np.sin(t) * dt * dp

    def tangential_gradient(self, values):
        """Surface gradient squared norm of sampled values (..., d)."""
        dt = np.pi / self.n_theta
        dp = 2.0 * np.pi / self.n_phi
        d_theta = np.gradient(values, dt, axis=0, edge_order=2)
        d_phi = (np.roll(values, -1, axis=1)
                 - np.roll(values, 1, axis=1)) / (2.0 * dp)
        sin_t = np.sin(self.theta)[:, None]
        grad_sq = np.sum(d_theta ** 2, axis=-1) \
            + np.sum(d_phi ** 2, axis=-1) / sin_t ** 2
        return grad_sq

    def integrate(self, values):
        return float(np.sum(values * self.weights()))


def sphere_integral_cubed_du(u, metric, center, r, mesh):
    """Boundary energy integral of |du|_g^3 over the sphere of radius r.

    ``u`` must be analytic; the surface element is the metric one
    (sqrt of the induced area form of g restricted to the sphere is
    approximated by the conformal normalization g ~ f^2 euclid when g is
    conformal; for general g the euclidean element scaled by sqrt(g)^(2/3)
    pointwise is not exact, so conformal or flat metrics are assumed here).
    """
    pts = np.asarray(center, dtype=float) + r * mesh.points()
    du = differential_at(u, pts)
    norm = DifferentialSample(pts, du, "sphere").norm_g(metric)
    g = metric.matrix(pts)
    # conformal factor of the metric: g = f^2 I => area element f^2 r^2 dS
    f2 = np.einsum("...ii->...", g) / 3.0
    return float(np.sum(norm ** 3 * f2 * r ** 2 * mesh.weights()))


# ---------------------------------------------------------------------------
# homogeneous radial extension of sphere boundary data

def homogeneous_extension(boundary, center, n_theta=48, n_phi=96):
    """Radial degree-1 extension of S^2 boundary data into the unit ball.

    For boundary map u and center p, the extension is
    v(r xi) = p + r (u(xi) - p).  Returns (v, ratio) where ratio is

        integral_B(1) |Dv|^3 dx  /  (integral_S2 |du|^3 + integral_S2 |u-p|^3)

    computed on a latitude-longitude mesh.  The numerator uses the exact
    radial structure |Dv(r xi)|^2 = |u(xi)-p|^2 + |grad_S2 u(xi)|^2.
    The ratio is scale invariant and serves as a regression surrogate for
    the extension-energy constant.
    """
    center = np.asarray(center, dtype=float)
    mesh = SphereMesh(n_theta, n_phi)
    pts = mesh.points()
    vals = np.asarray(boundary(pts), dtype=float)
    shifted = vals - center
    grad_sq = mesh.tangential_gradient(vals)
    radial_sq = np.sum(shifted ** 2, axis=-1)
    numerator = mesh.integrate((radial_sq + grad_sq) ** 1.5) / 3.0
    denominator = mesh.integrate(grad_sq ** 1.5) \
        + mesh.integrate(radial_sq ** 1.5)

    def extension(points):
        points = np.asarray(points, dtype=float)
        r = np.linalg.norm(points, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        xi = points / safe[..., None]
        out = center + r[..., None] * (np.asarray(boundary(xi), dtype=float)
                                       - center)
        return np.where(r[..., None] > 0, out, center)

    ratio = numerator / denominator if denominator > 0 else 0.0
    return extension, float(ratio)


# ---------------------------------------------------------------------------
# holomorphic-curve lift into the product target

@dataclass(frozen=True)
class LiftResult:
    """Outcome of lifting a holomorphic curve to the product target."""

    u: MapField
    g3: Optional[MetricField]
    mu_range: tuple
    vol_defect_max: float
    smith_residual_max: float
    degenerate: bool


def lift_holomorphic(curve, dcurve, fiber, dfiber, domain,
                     fprime_floor=1e-8, cr_tol=1e-8):
    """Lift a holomorphic curve and a circle-fiber function to a 3-map.

    curve(z): complex array -> (..., 3) complex values of the curve in C^3;
    dcurve(z): its complex derivative; fiber(points3): circle coordinate
    f(x, phi); dfiber(points3): gradient (..., 3) with the last slot the
    fiber derivative f', required nonvanishing.  The domain chart is
    (x1, x2, phi).

    Builds u(x, phi) = (curve(x), fiber(x, phi)) into the product target,
    the metric mu^2 g_2 + (df)^2 on the domain (unit-scale normalization),
    and verifies the volume compatibility sqrt(det g3) = mu^2 |f'| and the
    first-order residual of u.  A curve with vanishing derivative everywhere
    yields a degenerate lift: the metric collapses, every point is critical,
    and the residual is 0 by convention.
    """
    target = TargetStructure.product_cy3()

    def evaluator(points):
        points = np.asarray(points, dtype=float)
        z = points[..., 0] + 1j * points[..., 1]
        w = np.asarray(curve(z))
        out = np.empty(points.shape[:-1] + (7,))
        out[..., 0:6:2] = w.real
        out[..., 1:6:2] = w.imag
        out[..., 6] = np.asarray(fiber(points), dtype=float)
        return out

    def diff(points):
        points = np.asarray(points, dtype=float)
        z = points[..., 0] + 1j * points[..., 1]
        wp = np.asarray(dcurve(z))
        df = np.asarray(dfiber(points), dtype=float)
        du = np.zeros(points.shape[:-1] + (3, 7))
        du[..., 0, 0:6:2] = wp.real
        du[..., 0, 1:6:2] = wp.imag
        du[..., 1, 0:6:2] = -wp.imag       # d/dx2 = i * dcurve
        du[..., 1, 1:6:2] = wp.real
        du[..., :, 6] = df
        return du

    u = MapField(domain, target, evaluator=evaluator, differential_fn=diff)

    vpts = domain.vertices()
    z = vpts[..., 0] + 1j * vpts[..., 1]
    wp = np.asarray(dcurve(z))
    mu_sq = np.sum(np.abs(wp) ** 2, axis=-1)
    df = np.asarray(dfiber(vpts), dtype=float)
    fprime = df[..., 2]
    if np.min(np.abs(fprime)) < fprime_floor:
        raise ValueError("fiber derivative vanishes somewhere on the grid")

    # Cauchy-Riemann check of the supplied derivative against differences
    hz = min(domain.spacing[0], domain.spacing[1]) * 0.5
    fd_x = (np.asarray(curve(z + hz)) - np.asarray(curve(z - hz))) / (2 * hz)
    scale = max(float(np.max(np.abs(wp))), 1.0)
    cr_defect = float(np.max(np.abs(fd_x - wp))) / scale
    if cr_defect > max(cr_tol, 10.0 * hz ** 2 * scale):
        raise ValueError("curve fails the holomorphicity check")

    mu_max = float(np.sqrt(mu_sq.max()))
    mu_min = float(np.sqrt(mu_sq.min()))
    if mu_max < 1e-12:
        return LiftResult(u, None, (mu_min, mu_max), 0.0, 0.0, True)
    if mu_min < 1e-12:
        raise ValueError("curve derivative vanishes on part of the grid")

    def metric_matrix(points):
        points = np.asarray(points, dtype=float)
        zz = points[..., 0] + 1j * points[..., 1]
        m2 = np.sum(np.abs(np.asarray(dcurve(zz))) ** 2, axis=-1)
        grad = np.asarray(dfiber(points), dtype=float)
        g = np.zeros(points.shape[:-1] + (3, 3))
        g[..., 0, 0] = m2
        g[..., 1, 1] = m2
        g += grad[..., :, None] * grad[..., None, :]
        return g

    g3 = MetricField(metric_matrix)
    vol_defect = np.abs(np.sqrt(np.linalg.det(metric_matrix(vpts)))
                        - mu_sq * np.abs(fprime))
    res = smith_residual_field(u, g3,
                               du=DifferentialSample(vpts, diff(vpts),
                                                     "Analytic"))
    return LiftResult(u, g3, (mu_min, mu_max), float(vol_defect.max()),
                      float(res.max()), False)


# ---------------------------------------------------------------------------
# grid field serialization (documented layout, little-endian)

GRID_MAGIC = "vcplab-grid-v1"


def save_grid(path, domain, array, meta=None, mode="binary"):
    """Write a grid field: one JSON header line, then row-major point data.

    Binary mode stores little-endian float64; text mode stores one value per
    line in C order.  The header records kind, bounds, resolution, radius,
    array shape and the encoding.
    """
    array = np.asarray(array, dtype=float)
    header = {
        "magic": GRID_MAGIC,
        "kind": domain.kind,
        "bounds": domain.bounds,
        "resolution": domain.resolution,
        "radius": domain.radius,
        "shape": list(array.shape),
        "encoding": mode,
        "byteorder": "little",
        "meta": meta or {},
    }
    head = (json.dumps(header) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(head)
        if mode == "binary":
            fh.write(array.astype("<f8").tobytes(order="C"))
        elif mode == "text":
            body = "\n".join(repr(float(v)) for v in array.ravel(order="C"))
            fh.write(body.encode("utf-8"))
        else:
            raise ValueError(f"unknown mode {mode!r}")


def load_grid(path):
    """Read a grid field written by save_grid; returns (domain, array, meta)."""
    with open(path, "rb") as fh:
        head = fh.readline().decode("utf-8")
        header = json.loads(head)
        if header.get("magic") != GRID_MAGIC:
            raise ValueError("not a vcplab grid file")
        shape = tuple(header["shape"])
        if header["encoding"] == "binary":
            data = np.frombuffer(fh.read(), dtype="<f8").reshape(shape)
        else:
            data = np.array([float(t) for t in fh.read().split()],
                            dtype=float).reshape(shape)
    domain = ChartDomain(header["kind"],
                         tuple(tuple(b) for b in header["bounds"]),
                         header["resolution"], header["radius"])
    return domain, data.copy(), header.get("meta", {})
