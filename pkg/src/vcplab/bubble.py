"""Energy concentration, rescaling, and bubble-tree audits for map sequences.

The pipeline follows the constructive three-step recipe: detect points where
ball energies of a sequence stay above threshold, choose center/dilation
pairs by solving a complement-energy level equation over a center lattice,
rescale onto a sphere chart, recurse, and audit energy conservation and neck
collapse along a finite index ladder.  Limits are estimated by extrapolation
over the ladder (reported alongside the raw trend); nothing here asserts an
actual limit.

Energies in this module are UNPREFACTORED (plain integral of |du|_g^3);
reports carry both conventions.  Ball and complement energies around
concentration points are computed with a radial shell quadrature (geometric
shells, Fibonacci direction sets) rather than the box grid, since the grid
cannot resolve the collapsing core scale; off-center balls reuse the radial
profile through exact sphere-cap overlap fractions, which is exact for
radially symmetric densities and is guarded by a reported anisotropy index.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fields import (ChartDomain, DifferentialSample, MapField, MetricField,
                     PREFACTOR, annulus_region, ball_region,
                     complement_region, differential_at, energy,
                     sphere_integral_cubed_du, SphereMesh, stereo_factor)


class NoConcentrationError(RuntimeError):
    """Raised when the complement-energy level equation has no admissible
    solution at this ladder index; the caller must advance the index."""


class CenterGridError(RuntimeError):
    """Raised when the center lattice cannot certify the infimum within the
    requested tolerance (strong anisotropy)."""


class EnergyBoundError(RuntimeError):
    """Raised when an evaluated map violates the declared energy bound."""


class AuditError(RuntimeError):
    """Raised when a guaranteed property fails numerically (e.g. the tree
    does not terminate within the proven depth bound)."""


# ---------------------------------------------------------------------------
# configuration and sequence types

@dataclass(frozen=True)
class BubbleConfig:
    """Thresholds and discretization knobs for the bubble pipeline.

    ``eps0`` (concentration threshold) and ``gamma1`` (small-energy
    homotopy gap) are non-constructive in theory and enter here as
    configuration; ``eta0`` must satisfy eta0 < min(eps0/3, gamma1)/16.
    All energy thresholds are in the unprefactored convention.
    """

    eps0: float
    eta0: float
    gamma1: float
    eps_schedule: tuple          # outer scale eps_k per ladder position k
    detect_radii: tuple = (0.16, 0.08, 0.04, 0.02)
    grid: int = 48
    center_lattice: int = 9
    refine_rounds: int = 2
    shells: int = 96
    directions: int = 320
    solver_tol_frac: float = 1e-3      # level-equation tol as fraction of eta0
    mass_tol: float = 0.02
    bubble_chart_halfwidth: float = 12.0
    bubble_extent: float = 40.0        # chart radius for bubble total energy
    child_detect_radii: tuple = (0.4, 0.2, 0.1, 0.05)
    inj_surrogate: float = 10.0
    extension_const: float = 10.0      # K surrogate for annulus smallness flag

    def __post_init__(self):
        if not 0 < self.eta0 < min(self.eps0 / 3.0, self.gamma1) / 16.0:
            raise ValueError("eta0 must lie below min(eps0/3, gamma1)/16")

    @property
    def solver_tol(self):
        return self.solver_tol_frac * self.eta0

    @classmethod
    def with_defaults(cls, eps0, gamma1=None, eps_schedule=None, **kw):
        gamma1 = eps0 / 3.0 if gamma1 is None else gamma1
        eta0 = 0.9 * min(eps0 / 3.0, gamma1) / 16.0
        if eps_schedule is None:
            eps_schedule = (0.105, 0.21, 0.235, 0.21)
        return cls(eps0=eps0, eta0=eta0, gamma1=gamma1,
                   eps_schedule=tuple(eps_schedule), **kw)


@dataclass(frozen=True)
class MapSequence:
    """Deterministic ladder of maps with a declared energy bound.

    ``generator(n)`` must be pure and return (MapField, MetricField) on a
    common chart domain; ``indices`` is the evaluated ladder.
    """

    indices: tuple
    generator: Callable
    energy_bound: float
    label: str = "sequence"

    def map_at(self, n):
        u, g = self.generator(n)
        return u, g


# ---------------------------------------------------------------------------
# direction sets and radial profiles

def fibonacci_sphere(count):
    """Near-uniform unit direction set."""
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    theta = np.pi * (1.0 + np.sqrt(5.0)) * i
    rho = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([rho * np.cos(theta), rho * np.sin(theta), z], axis=-1)


@dataclass
class RadialProfile:
    """Shellwise angular means of the energy density around a center.

    ``cum`` is the cumulative unprefactored ball energy at the shell radii;
    ``anisotropy`` is the relative angular deviation per shell (0 for
    radially symmetric densities), used to qualify cap-overlap estimates.
    """

    center: np.ndarray
    radii: np.ndarray
    mean_density: np.ndarray
    cum: np.ndarray
    anisotropy: np.ndarray

    @property
    def total(self):
        return float(self.cum[-1])

    def ball(self, r):
        """Ball energy at arbitrary radii by monotone interpolation."""
        return np.interp(r, self.radii, self.cum, left=0.0)

    def solve_ball(self, target):
        """Smallest radius whose ball energy reaches ``target`` (or None)."""
        if target <= 0:
            return float(self.radii[0])
        if target > self.cum[-1]:
            return None
        return float(np.interp(target, self.cum, self.radii))

    def offset_ball(self, delta, r):
        """Energy of B(x, r) with |x - center| = delta via cap overlap.

        Exact when the density is radially symmetric about the profile
        center; the anisotropy index bounds the relative error otherwise.
        """
        t = self.radii
        f = 4.0 * np.pi * t * t * self.mean_density
        delta = max(float(delta), 1e-30)
        cos_cut = (t * t + delta * delta - r * r) / (2.0 * t * delta)
        frac = np.clip(0.5 * (1.0 - cos_cut), 0.0, 1.0)
        head = self.cum[0] * frac[0]
        return head + float(np.trapezoid(f * frac, t))

    def max_anisotropy(self, r_lo, r_hi):
        sel = (self.radii >= r_lo) & (self.radii <= r_hi)
        if not sel.any():
            return 0.0
        return float(self.anisotropy[sel].max())


def radial_profile(u, metric, center, r_max, shells=96, directions=320,
                   r_min=None):
    """Build the radial energy profile of a map around a center point."""
    center = np.asarray(center, dtype=float)
    if r_min is None:
        r_min = 1e-4 * r_max
    radii = np.geomspace(r_min, r_max, shells)
    dirs = fibonacci_sphere(directions)
    pts = center + radii[:, None, None] * dirs[None, :, :]
    du = differential_at(u, pts)
    norm = DifferentialSample(pts, du, "radial").norm_g(metric)
    dens = norm ** 3 * metric.volume_factor(pts)      # unprefactored
    mean = dens.mean(axis=1)
    spread = dens.std(axis=1) / np.maximum(mean, 1e-300)
    f = 4.0 * np.pi * radii * radii * mean
    head = mean[0] * (4.0 * np.pi / 3.0) * radii[0] ** 3
    cum = head + np.concatenate(
        [[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(radii))])
    return RadialProfile(center, radii, mean, cum, spread)


# ---------------------------------------------------------------------------
# energy-density measure grids

@dataclass(frozen=True)
class DensityGrid:
    """Cellwise energy measure of one map: nonnegative density and totals
    in both normalization conventions."""

    domain: ChartDomain
    density: np.ndarray          # unprefactored |du|^3 sqrt(g) per cell
    total_unprefactored: float
    total_prefactored: float

    def cell_masses(self):
        return self.density * self.domain.cell_volume

    def cell_points(self):
        return self.domain.cell_centers().reshape(-1, 3)


def energy_density(u, metric):
    """Cell-center energy measure of a map (unprefactored density)."""
    rep = energy(u, metric)
    dens = rep.density / PREFACTOR
    total = rep.total / PREFACTOR
    return DensityGrid(u.domain, dens, total, rep.total)


# ---------------------------------------------------------------------------
# ladder extrapolation helpers

def aitken_limit(values):
    """Limit estimate of a sequence with roughly geometric error decay."""
    v = np.asarray(values, dtype=float)
    if len(v) < 3:
        return float(v[-1])
    e1, e2, e3 = v[-3], v[-2], v[-1]
    denom = e3 - 2.0 * e2 + e1
    if abs(denom) < 1e-300:
        return float(e3)
    est = e3 - (e3 - e2) ** 2 / denom
    # reject wild extrapolations (non-geometric tails)
    if not np.isfinite(est) or abs(est - e3) > 2.0 * abs(e3 - e2) + 1e-300:
        return float(e3)
    return float(est)


def power_tail_fit(ls, values, power):
    """Least-squares a + b / l^power over the tail; returns intercept a.

    ``values`` may be 1-d or (len(ls), d); the fit is componentwise.
    """
    ls = np.asarray(ls, dtype=float)
    vals = np.asarray(values, dtype=float)
    tail = min(len(ls), 3)
    ls, vals = ls[-tail:], vals[-tail:]
    design = np.stack([np.ones_like(ls), ls ** (-power)], axis=1)
    coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
    return coef[0]


# ---------------------------------------------------------------------------
# concentration detection

@dataclass(frozen=True)
class Concentration:
    """One detected energy concentration: location, extrapolated mass, and
    the raw per-(index, radius) ball-energy table behind the estimate."""

    point: np.ndarray
    mass: float
    ball_table: dict             # radius -> per-index ball energies
    mass_by_radius: dict         # radius -> extrapolated-in-n mass


def _refine_center(u, metric, point, radius, rounds=3, lattice=9):
    """Density-weighted recentering on shrinking lattices.

    Pulls a coarse candidate location onto the concentration core of an
    analytic map; each round evaluates the pointwise density on a lattice
    around the current estimate and recenters at the center of mass.
    """
    point = np.asarray(point, dtype=float).copy()
    half = radius
    for _ in range(rounds):
        offs = np.linspace(-half, half, lattice)
        mesh = np.stack(np.meshgrid(offs, offs, offs, indexing="ij"),
                        axis=-1).reshape(-1, 3)
        pts = point + mesh
        du = differential_at(u, pts)
        dens = DifferentialSample(pts, du, "refine").norm_g(metric) ** 3
        dens = dens * metric.volume_factor(pts)
        total = dens.sum()
        if total <= 0:
            return point
        point = (dens[:, None] * pts).sum(axis=0) / total
        half *= 0.25
    return point


def _propose_candidates(grid, eps0, radius, max_candidates=8):
    """Peak-clustering candidate proposal from a density grid."""
    masses = grid.cell_masses().ravel().copy()
    points = grid.cell_points()
    from .kernels import ball_energies
    candidates = []
    for _ in range(max_candidates):
        j = int(np.argmax(masses))
        if masses[j] <= 0:
            break
        peak = points[j]
        near = np.linalg.norm(points - peak, axis=1) <= radius
        mass_near = float(masses[near].sum())
        if mass_near < 0.25 * eps0:
            break
        com = (masses[near][:, None] * points[near]).sum(axis=0) / mass_near
        candidates.append(com)
        clear = np.linalg.norm(points - peak, axis=1) <= 2.0 * radius
        masses[clear] = 0.0
    return candidates


def detect_concentration(seq, config):
    """Locate points where ball energies stay above eps0/2 along the ladder.

    Candidates are proposed from the finest-index density grid, then kept
    only when the extrapolated-in-n ball energy exceeds eps0/2 at every
    radius of the detection ladder.  Masses are the double-limit estimate:
    extrapolate in the sequence index at each radius, then remove the
    smooth O(r^3) background by a linear fit in r^3.
    """
    if len(seq.indices) < 4:
        raise ValueError("detection needs at least 4 ladder indices")
    maps = {n: seq.map_at(n) for n in seq.indices}
    n_fine = seq.indices[-1]
    u_fine, g_fine = maps[n_fine]
    # propose at the coarsest and finest indices: a collapsing core may be
    # invisible to the fixed grid at fine indices, and absent at coarse ones
    candidates = []
    for n in (seq.indices[0], n_fine):
        u, g = maps[n]
        grid = energy_density(u, g)
        r_loc = max(config.detect_radii[-1], 2.0 * max(u.domain.spacing))
        for cand in _propose_candidates(grid, config.eps0, r_loc):
            if all(np.linalg.norm(cand - c) > 2.0 * r_loc
                   for c in candidates):
                candidates.append(cand)
    candidates = [_refine_center(u_fine, g_fine, c, r_loc)
                  for c in candidates]

    # energy-bound audit with the concentration cores resolved radially
    # (the box grid cannot integrate across a collapsing core)
    r_bound = max(config.detect_radii[0], 4.0 * max(u_fine.domain.spacing))
    for n in seq.indices:
        u, g = maps[n]
        total = _resolved_total(u, g, candidates, r_bound, config)
        if total > seq.energy_bound * 1.02:
            raise EnergyBoundError(
                f"index {n}: energy {total:.3f} exceeds bound "
                f"{seq.energy_bound:.3f}")

    radii = sorted(config.detect_radii, reverse=True)
    found = []
    for cand in candidates:
        table = {}
        for r in radii:
            vals = []
            for n in seq.indices:
                u, g = maps[n]
                prof = radial_profile(u, g, cand, r,
                                      shells=config.shells,
                                      directions=config.directions // 2)
                vals.append(prof.total)
            table[r] = vals
        limits = {r: aitken_limit(v) for r, v in table.items()}
        if min(limits.values()) < 0.5 * config.eps0:
            continue
        # strip the smooth background: limit(r) = m + c r^3
        rs = np.array(sorted(limits))
        ys = np.array([limits[r] for r in rs])
        design = np.stack([np.ones_like(rs), rs ** 3], axis=1)
        coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
        mass = float(coef[0])
        found.append(Concentration(np.asarray(cand, dtype=float), mass,
                                   table, limits))
    found.sort(key=lambda c: -c.mass)
    return found


# ---------------------------------------------------------------------------
# rescaling choice (center lattice + level-equation solve)

@dataclass(frozen=True)
class RescalingRecord:
    """Center/dilation choice at one ladder position.

    ``d_radii`` are the four nested ball radii (eps/(2k^2), eps/k^2, eps,
    2 eps) around the concentration point; the level equation says the
    energy of D4 minus the chosen ball equals eta0 within solver_tol, and
    no scanned center admits a smaller radius with that property.
    """

    k: int
    index: int
    eps_k: float
    d_radii: tuple
    center: np.ndarray
    lam: float
    level_value: float
    solver_tol: float
    total_d4: float
    anisotropy: float
    scan: tuple                  # ((center, solved radius or None), ...)

    def nested(self):
        # at k = 1 the middle balls coincide (eps/k^2 = eps): non-strict
        d1, d2, d3, d4 = self.d_radii
        return d1 < d2 <= d3 < d4


def choose_rescaling(u, metric, x_i, k, eps_k, config, eta0=None):
    """Solve the complement-energy level equation over a center lattice.

    Returns the smallest dilation radius lam (and an attaining center in
    D2) with  E(u; D4 \\ B(c, lam)) = eta0  to solver tolerance, certified
    minimal over the scanned lattice.  Raises NoConcentrationError when the
    level equation has no admissible solution at this index.
    """
    eta0 = config.eta0 if eta0 is None else eta0
    x_i = np.asarray(x_i, dtype=float)
    d1 = eps_k / (2.0 * k * k)
    d2 = eps_k / (k * k)
    d3 = eps_k
    d4 = 2.0 * eps_k
    tol = config.solver_tol

    prof = radial_profile(u, metric, x_i, 1.05 * d4 + d3,
                          shells=config.shells,
                          directions=config.directions)
    total_d4 = prof.ball(d4)
    if total_d4 <= eta0:
        raise NoConcentrationError(
            f"k={k}: total energy {total_d4:.4f} in D4 is at or below "
            f"eta0={eta0:.4f}")

    def solve_center(delta):
        """Smallest r with offset-ball complement equal to eta0, or None."""
        target = total_d4 - eta0
        rs = np.geomspace(max(1e-6 * d1, prof.radii[0]), d1, 64)
        vals = np.array([prof.offset_ball(delta, r) for r in rs])
        if vals[-1] < target:
            return None
        if vals[0] >= target:
            return float(rs[0])
        return float(np.interp(target, vals, rs))

    # lattice over the closed D3 ball (cube intersected with the ball)
    lat = np.linspace(-d3, d3, config.center_lattice)
    mesh = np.stack(np.meshgrid(lat, lat, lat, indexing="ij"),
                    axis=-1).reshape(-1, 3)
    mesh = mesh[np.linalg.norm(mesh, axis=1) <= d3]
    centers = x_i + mesh

    scan = []
    best_c, best_r = None, np.inf
    for c in centers:
        r_c = solve_center(np.linalg.norm(c - x_i))
        scan.append((c, r_c))
        if r_c is not None and r_c < best_r:
            best_c, best_r = c, r_c
    if best_c is None:
        raise NoConcentrationError(
            f"k={k}: no center admits a dilation radius within the "
            f"cap {d1:.4g}; advance the ladder index")

    # local refinement rounds around the best center
    spacing = (lat[1] - lat[0]) if len(lat) > 1 else d3
    for _ in range(config.refine_rounds):
        spacing *= 0.5
        offs = np.linspace(-spacing, spacing, 3)
        sub = np.stack(np.meshgrid(offs, offs, offs, indexing="ij"),
                       axis=-1).reshape(-1, 3)
        for c in best_c + sub:
            if np.linalg.norm(c - x_i) > d3:
                continue
            r_c = solve_center(np.linalg.norm(c - x_i))
            scan.append((c, r_c))
            if r_c is not None and r_c < best_r:
                best_c, best_r = c, r_c

    # among centers tied within solver noise, prefer the most symmetric one
    tie = best_r * (1.0 + 0.02)
    tied = [(np.linalg.norm(c - x_i), r_c, c) for c, r_c in scan
            if r_c is not None and r_c <= tie]
    if tied:
        _, best_r, best_c = min(tied, key=lambda t: (t[0], t[1]))

    # certify the winner with a direct quadrature centered on it
    direct = radial_profile(u, metric, best_c, 1.3 * d1,
                            shells=config.shells,
                            directions=config.directions)
    lam = direct.solve_ball(total_d4 - eta0)
    if lam is None or lam > d1 * (1.0 + 1e-9):
        raise NoConcentrationError(
            f"k={k}: direct solve pushes the dilation past the cap")
    level = total_d4 - direct.ball(lam)
    if abs(level - eta0) > tol:
        raise CenterGridError(
            f"k={k}: level equation off by {abs(level - eta0):.3g} "
            f"(tol {tol:.3g})")
    if np.linalg.norm(best_c - x_i) > d2:
        raise CenterGridError(
            f"k={k}: attaining center escaped D2; lattice too coarse")
    anis = prof.max_anisotropy(0.25 * lam, d1)
    return RescalingRecord(k=k, index=-1, eps_k=eps_k,
                           d_radii=(d1, d2, d3, d4),
                           center=np.asarray(best_c, dtype=float),
                           lam=float(lam), level_value=float(level),
                           solver_tol=tol, total_d4=float(total_d4),
                           anisotropy=float(anis),
                           scan=tuple((np.asarray(c), r) for c, r in scan))


# ---------------------------------------------------------------------------
# rescaling to the bubble chart

def rescale(u, metric, rec, config):
    """Pull a map back by the chosen affine blow-up onto a sphere chart.

    Returns (bubble map, bubble metric): the map w -> u(lam w + c) on a
    stereographic chart, with the chart metric conformal_factor(w)^2 *
    g(lam w + c) normalized to unit scale at the center.  For a flat
    original metric this is exactly the round chart metric; its deviation
    from round decreases with lam in general.
    """
    lam, c = rec.lam, rec.center
    dom = ChartDomain.cube("StereoChart", config.bubble_chart_halfwidth,
                           config.grid)

    def evaluator(w):
        w = np.asarray(w, dtype=float)
        return u.eval(lam * w + c)

    dfn = None
    if u.differential_fn is not None:
        def dfn(w):
            w = np.asarray(w, dtype=float)
            return lam * np.asarray(u.differential_fn(lam * w + c),
                                    dtype=float)

    bubble_map = MapField(dom, u.target, evaluator=evaluator,
                          differential_fn=dfn)

    g_center = metric.matrix(c[None, :])[0]
    scale = float(np.trace(g_center)) / 3.0

    def bubble_metric(points):
        points = np.asarray(points, dtype=float)
        factor = stereo_factor(points) ** 2
        g = metric.matrix(lam * points + c) / scale
        return factor[..., None, None] * g

    return bubble_map, MetricField(bubble_metric)


# ---------------------------------------------------------------------------
# tree construction

@dataclass
class BubbleNode:
    """One vertex of the bubble tree: the base map or an extracted bubble."""

    level: int
    kind: str                                    # "base" or "bubble"
    point: Optional[np.ndarray] = None           # location in parent chart
    mass: Optional[float] = None
    records: tuple = ()                          # RescalingRecord per position
    dropped: tuple = ()                          # ladder positions skipped
    children: list = field(default_factory=list)
    in_unit_chart_ball: Optional[bool] = None    # bubble-point localization

    def walk(self, path=()):
        yield path, self
        for j, child in enumerate(self.children):
            yield from child.walk(path + (j,))


@dataclass
class BubbleTree:
    """Bubble decomposition of a map sequence along a finite ladder."""

    root: BubbleNode
    seq: MapSequence
    config: BubbleConfig

    @property
    def depth(self):
        return max(len(p) for p, _ in self.root.walk())

    def nodes(self):
        return list(self.root.walk())


def _records_for(seq, point, config):
    """Rescaling records over the ladder; positions k = 1..L, skipping
    indices where the level equation is not yet solvable."""
    records, dropped = [], []
    for k, n in enumerate(seq.indices, start=1):
        u, g = seq.map_at(n)
        eps_k = config.eps_schedule[min(k - 1, len(config.eps_schedule) - 1)]
        try:
            rec = choose_rescaling(u, g, point, k, eps_k, config)
        except NoConcentrationError:
            dropped.append(k)
            continue
        records.append(RescalingRecord(k=rec.k, index=n, eps_k=rec.eps_k,
                                       d_radii=rec.d_radii, center=rec.center,
                                       lam=rec.lam,
                                       level_value=rec.level_value,
                                       solver_tol=rec.solver_tol,
                                       total_d4=rec.total_d4,
                                       anisotropy=rec.anisotropy,
                                       scan=rec.scan))
    return tuple(records), tuple(dropped)


def _child_sequence(seq, records, config):
    """Rescaled maps as a sequence indexed by ladder position."""
    by_pos = {rec.k: rec for rec in records}
    positions = tuple(sorted(by_pos))

    def generator(j):
        rec = by_pos[j]
        u, g = seq.map_at(rec.index)
        return rescale(u, g, rec, config)

    bound = seq.energy_bound  # conformal invariance cannot increase energy
    return MapSequence(positions, generator, bound,
                       label=f"{seq.label}:rescaled")


def build_tree(seq, config, max_depth=3):
    """Detect, rescale, and recurse until no concentration remains.

    Depth is bounded by the mass-decrement argument; exceeding either that
    bound or ``max_depth`` is reported as an audit failure since finite
    termination is guaranteed.
    """
    root = BubbleNode(level=0, kind="base")
    _grow(root, seq, config, max_depth, root_mass=None)
    _assert_depth_bound(root, config)
    return BubbleTree(root, seq, config)


def _grow(node, seq, config, max_depth, root_mass):
    found = detect_concentration(seq, config)
    for conc in found:
        if conc.mass < 0.5 * config.eps0 - config.solver_tol:
            continue
        records, dropped = _records_for(seq, conc.point, config)
        child = BubbleNode(level=node.level + 1, kind="bubble",
                           point=conc.point, mass=conc.mass,
                           records=records, dropped=dropped)
        if node.level >= 1:
            # bubble points of rescaled charts localize in the closed
            # unit chart ball (up to grid tolerance)
            tol = 2.0 * max(ChartDomain.cube(
                "StereoChart", config.bubble_chart_halfwidth,
                config.grid).spacing)
            child.in_unit_chart_ball = bool(
                np.linalg.norm(conc.point) <= 1.0 + tol)
        node.children.append(child)
        if node.level + 1 >= max_depth:
            if records:
                raise AuditError("max_depth exceeded while concentrations "
                                 "remain; termination audit failed")
            continue
        if len(records) >= 4:
            child_seq = _child_sequence(seq, records, config)
            sub_config = _child_config(config)
            _grow(child, child_seq, sub_config, max_depth,
                  root_mass or conc.mass)


def _child_config(config):
    from dataclasses import replace
    return replace(config, detect_radii=config.child_detect_radii,
                   eps_schedule=(1.0, 2.0, 2.5, 2.5))


def _assert_depth_bound(root, config):
    for path, node in root.walk():
        if node.kind != "bubble" or not node.children:
            continue
        bound = int(np.ceil(2.0 * (node.mass - 0.5 * config.eps0)
                            / config.eta0)) + 1
        deepest = max(len(p) for p, _ in node.walk())
        if deepest > bound:
            raise AuditError(f"tree depth {deepest} below node {path} "
                             f"exceeds the mass-decrement bound {bound}")


def validate_tree(tree):
    """Structural invariants; returns a list of violation strings."""
    bad = []
    cfg = tree.config
    for path, node in tree.root.walk():
        if node.kind != "bubble":
            continue
        if node.mass < 0.5 * cfg.eps0 - cfg.solver_tol:
            bad.append(f"node {path}: mass {node.mass:.3f} below eps0/2")
        for rec in node.records:
            if not rec.nested():
                bad.append(f"node {path} k={rec.k}: ball nesting violated")
            if rec.lam > rec.d_radii[0] * (1 + 1e-9):
                bad.append(f"node {path} k={rec.k}: lam exceeds cap")
            if abs(rec.level_value - cfg.eta0) > rec.solver_tol:
                bad.append(f"node {path} k={rec.k}: level equation off")
            if np.linalg.norm(rec.center - node.point) > rec.d_radii[1]:
                bad.append(f"node {path} k={rec.k}: center outside D2")
        if node.in_unit_chart_ball is False:
            bad.append(f"node {path}: bubble point outside unit chart ball")
        for child in node.children:
            if child.mass > node.mass - 0.5 * cfg.eta0 + cfg.solver_tol:
                bad.append(f"node {path}: child mass decrement violated")
    return bad


# ---------------------------------------------------------------------------
# energy accounting

@dataclass(frozen=True)
class NodeLedger:
    path: tuple
    mass: float
    bubble_energy: float
    child_mass_sum: float
    tau: float
    tau_in_bracket: bool
    conformal_rows: tuple        # (k, chart energy, original energy)


@dataclass(frozen=True)
class AccountingReport:
    nodes: tuple
    limit_energy: float          # extrapolated lim E(u_n), unprefactored
    base_energy: float           # estimated E(u_infinity)
    bubble_sum: float
    balance_gap: float
    relative_gap: float

    def max_abs_tau(self):
        return max((abs(n.tau) for n in self.nodes), default=0.0)


def _resolved_total(u, g, hotspots, r0, config):
    """Box energy split into radial ball parts and a grid complement."""
    total = 0.0
    region = None
    for p in hotspots:
        prof = radial_profile(u, g, p, r0, shells=config.shells // 2,
                              directions=config.directions // 2)
        total += prof.total
        reg = ball_region(p, r0)
        region = reg if region is None else _union(region, reg)
    if region is None:
        return energy(u, g).total / PREFACTOR
    comp = complement_region(region)
    total += energy(u, g, region=comp).total / PREFACTOR
    return total


def _union(r1, r2):
    from .fields import Region
    return Region(lambda p: r1.contains(p) | r2.contains(p),
                  f"{r1.label}|{r2.label}")


def _node_ledgers(node, node_seq, config, path, rows):
    """Recursive per-node tau ledger; node_seq is the sequence whose
    rescalings produced node.children."""
    for j, child in enumerate(node.children):
        if not child.records:
            continue
        w = config.bubble_extent
        chart_vals, conformal_rows = [], []
        for rec in child.records:
            u, g = node_seq.map_at(rec.index)
            bub, bub_g = rescale(u, g, rec, config)
            prof_b = radial_profile(bub, bub_g, np.zeros(3), w,
                                    shells=config.shells,
                                    directions=config.directions // 2)
            chart_e = prof_b.total
            prof_o = radial_profile(u, g, rec.center, rec.lam * w * 1.01,
                                    shells=config.shells,
                                    directions=config.directions // 2)
            conformal_rows.append((rec.k, chart_e, prof_o.ball(rec.lam * w)))
            chart_vals.append(chart_e)
        rec_last = child.records[-1]
        u, g = node_seq.map_at(rec_last.index)
        prof = radial_profile(u, g, rec_last.center,
                              1.05 * rec_last.d_radii[3],
                              shells=config.shells,
                              directions=config.directions // 2)
        tail = prof.ball(rec_last.d_radii[3]) - prof.ball(rec_last.lam * w)
        bubble_energy = aitken_limit(chart_vals) + max(tail, 0.0)
        child_mass = sum(c.mass for c in child.children)
        tau = child.mass - bubble_energy - child_mass
        bracket = (-config.mass_tol * child.mass - config.solver_tol
                   <= tau <= config.eta0 + config.mass_tol * child.mass)
        rows.append(NodeLedger(path + (j,), child.mass, bubble_energy,
                               child_mass, tau, bool(bracket),
                               tuple(conformal_rows)))
        if child.children and len(child.records) >= 4:
            child_seq = _child_sequence(node_seq, child.records, config)
            _node_ledgers(child, child_seq, _child_config(config),
                          path + (j,), rows)


def energy_accounting(tree, seq=None, config=None):
    """Per-node energy ledgers and the global conservation balance.

    For each bubble node: tau = mass - (bubble energy + child masses),
    where the bubble energy is the ladder-extrapolated chart energy of the
    rescaled maps plus the outer-annulus remainder of the finest original.
    tau must lie in [-tol, eta0 + tol]; on closed-structure scenarios it
    should vanish within the mass tolerance.
    """
    seq = seq or tree.seq
    config = config or tree.config
    rows = []
    _node_ledgers(tree.root, seq, config, (), rows)

    hotspots = [n.point for _, n in tree.root.walk()
                if n.kind == "bubble" and n.level == 1]
    r_ball = max(config.detect_radii[0], 0.05)
    totals = []
    for n in seq.indices:
        u, g = seq.map_at(n)
        totals.append(_resolved_total(u, g, hotspots, r_ball, config))
    limit_energy = aitken_limit(totals)

    base_vals = []
    if hotspots:
        for n in seq.indices:
            u, g = seq.map_at(n)
            region = None
            for p in hotspots:
                reg = ball_region(p, r_ball)
                region = reg if region is None else _union(region, reg)
            comp = complement_region(region)
            base_vals.append(energy(u, g, region=comp).total / PREFACTOR)
        base_energy = max(aitken_limit(base_vals), 0.0)
    else:
        base_energy = limit_energy
    # telescoping over tau = 0 makes the all-levels bubble sum the right
    # companion to the base energy in the conservation ledger
    bubble_sum = sum(r.bubble_energy for r in rows)
    gap = limit_energy - (base_energy + bubble_sum)
    rel = abs(gap) / max(limit_energy, 1e-300)
    return AccountingReport(tuple(rows), limit_energy, base_energy,
                            bubble_sum, gap, rel)


# ---------------------------------------------------------------------------
# neck diagnostics

def _cloud_diameter(points):
    """Exact max pairwise distance of a modest point cloud."""
    pts = np.asarray(points, dtype=float).reshape(-1, points.shape[-1])
    if len(pts) > 1500:
        pts = pts[:: len(pts) // 1500 + 1]
    best = 0.0
    for i in range(0, len(pts), 256):
        block = pts[i:i + 256]
        d = np.linalg.norm(block[:, None, :] - pts[None, :, :], axis=-1)
        best = max(best, float(d.max()))
    return best


@dataclass(frozen=True)
class NeckRow:
    position: int
    rho: float                   # outer annulus radius (eps_k)
    sigma: float                 # inner annulus radius (l * lam_k)
    diameter: float
    grad_scale: float            # eps_k * sup_{boundary} |du|_g
    outer_mean: np.ndarray
    inner_mean: np.ndarray


@dataclass(frozen=True)
class NeckReport:
    rows: tuple
    diam_extrapolant: float
    decreasing_after: int        # burn-in index after which diam decreases
    endpoint_mismatch: float
    base_value: np.ndarray       # extrapolated u_infinity(x_i)
    bubble_value: np.ndarray     # extrapolated bubble value at the far pole
    grad_scale_decreasing: bool


def neck_report(tree, seq=None, config=None, node_path=(0,)):
    """Neck geometry along the ladder for one first-level bubble node.

    The annulus at position l spans radii (l * lam_l, eps_l) around the
    chosen centers.  Reports image diameters (must decrease after burn-in,
    with the power-law extrapolant the acceptance quantity), the boundary
    gradient scale, and the mismatch between the extrapolated base-map
    value at the concentration point and the extrapolated bubble value at
    the chart's point at infinity.
    """
    seq = seq or tree.seq
    config = config or tree.config
    node = tree.root
    for j in node_path:
        node = node.children[j]
    if node.kind != "bubble" or not node.records:
        raise ValueError("node has no rescaling records")

    dirs = fibonacci_sphere(220)
    rows = []
    for pos, rec in enumerate(node.records, start=1):
        u, g = seq.map_at(rec.index)
        rho = rec.eps_k
        sigma = pos * rec.lam
        if sigma >= rho:
            raise ValueError(f"annulus degenerate at position {pos}: "
                             f"sigma {sigma:.4g} >= rho {rho:.4g}")
        radii = np.geomspace(sigma, rho, 24)
        pts = rec.center + radii[:, None, None] * dirs[None, :, :]
        img = u.eval(pts)
        diam = _cloud_diameter(img.reshape(-1, img.shape[-1]))
        # boundary gradient scale at the outer radius
        bpts = rec.center + rho * dirs
        du = differential_at(u, bpts)
        gnorm = DifferentialSample(bpts, du, "b").norm_g(g)
        grad_scale = float(rho * gnorm.max())
        outer = u.eval(rec.center + 0.75 * rho * dirs).mean(axis=0)
        inner = u.eval(rec.center + sigma * dirs).mean(axis=0)
        rows.append(NeckRow(pos, rho, sigma, diam, grad_scale, outer, inner))

    ls = np.array([r.position for r in rows], dtype=float)
    diams = np.array([r.diameter for r in rows])
    drops = np.diff(diams)
    dec_after = 0
    for i in range(len(drops)):
        if np.all(drops[i:] < 0):
            dec_after = i
            break
    else:
        dec_after = len(drops)
    extrap = float(power_tail_fit(ls, diams, 1.0))
    outer_lim = power_tail_fit(ls, np.array([r.outer_mean for r in rows]), 2.0)
    inner_lim = power_tail_fit(ls, np.array([r.inner_mean for r in rows]), 2.0)
    mismatch = float(np.linalg.norm(outer_lim - inner_lim))
    grads = np.array([r.grad_scale for r in rows])
    return NeckReport(tuple(rows), extrap, dec_after, mismatch,
                      outer_lim, inner_lim,
                      bool(np.all(np.diff(grads) < 0)))


# ---------------------------------------------------------------------------
# annulus energy ratio

@dataclass(frozen=True)
class AnnulusRatio:
    ratio: float
    preconditions_met: bool
    annulus_energy: float
    boundary_in: float           # r_in * integral over the inner sphere
    boundary_out: float          # r_out * integral over the outer sphere
    diameters: tuple
    degenerate: bool


def annulus_energy_ratio(u, metric, center, r_in, r_out, config,
                         mesh=(24, 48)):
    """Annulus energy over its boundary-sphere energies, scale-normalized.

    ratio = E(B(r_out) \\ B(r_in)) / (r_in I_in + r_out I_out) with
    I = integral of |du|_g^3 over the boundary sphere; both numerator and
    denominator are dilation invariant.  ``preconditions_met`` records the
    smallness hypotheses: boundary image diameters below the injectivity
    surrogate, and E + K (r_in I_in + r_out I_out) < gamma1 / 8.
    """
    center = np.asarray(center, dtype=float)
    if r_in >= r_out:
        raise ValueError("degenerate annulus")
    prof = radial_profile(u, metric, center, 1.02 * r_out,
                          shells=config.shells,
                          directions=config.directions // 2)
    e_ann = prof.ball(r_out) - prof.ball(r_in)
    smesh = SphereMesh(*mesh)
    i_in = sphere_integral_cubed_du(u, metric, center, r_in, smesh)
    i_out = sphere_integral_cubed_du(u, metric, center, r_out, smesh)
    b_in, b_out = r_in * i_in, r_out * i_out
    denom = b_in + b_out
    dirs = fibonacci_sphere(200)
    d_in = _cloud_diameter(u.eval(center + r_in * dirs))
    d_out = _cloud_diameter(u.eval(center + r_out * dirs))
    degenerate = denom < 1e-14
    if degenerate:
        ratio = 0.0 if e_ann < 1e-12 else np.inf
        return AnnulusRatio(float(ratio), False, float(e_ann),
                            float(b_in), float(b_out), (d_in, d_out), True)
    small = (d_in + d_out < config.inj_surrogate
             and e_ann + config.extension_const * denom
             < config.gamma1 / 8.0)
    return AnnulusRatio(float(e_ann / denom), bool(small), float(e_ann),
                        float(b_in), float(b_out), (d_in, d_out), False)


def energy_gap_surrogate(u, metric, config, sample=2048):
    """Small-energy bubbles must be flat: returns (energy, sup|du|_g, ok).

    A map on the bubble chart whose total chart energy falls below eps0 is
    expected to be constant; the check samples the chart ball and flags
    nonvanishing derivatives.  Used as a sanity gate on extracted bubbles.
    """
    prof = radial_profile(u, metric, np.zeros(3), config.bubble_extent,
                          shells=config.shells,
                          directions=config.directions // 2)
    chart_energy = prof.total
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1.0, 1.0, (sample, 3))
    pts = pts[np.linalg.norm(pts, axis=1) <= 1.0]
    du = differential_at(u, pts)
    sup = float(DifferentialSample(pts, du, "gap").norm_g(metric).max())
    ok = chart_energy >= config.eps0 or sup <= 1e-8
    return float(chart_energy), sup, bool(ok)
