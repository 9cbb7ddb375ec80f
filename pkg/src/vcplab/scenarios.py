"""Builtin verification scenarios and their runners.

A scenario is a named, fully parameterized run of one of the three suites:
``vcp-suite`` (algebra axioms and identities), ``field-gallery`` (pointwise
and integrated diagnostics over the analytic gallery), or ``bubble-run``
(the concentration pipeline with audits).  Runners return (tables, summary,
passed) where tables is {table name: (header, rows)}; every threshold they
assert against comes from the scenario parameters, not from code.
"""

import numpy as np

from . import bubble as bub
from . import gallery as gal
from . import vcp
from .fields import (ChartDomain, MetricField, TargetStructure, ball_region,
                     differential, energy, energy_identity_defect,
                     lift_holomorphic, nharmonic_residual, conformality_defect,
                     precompose_conformal, smith_residual_field, PREFACTOR)
from .xalg import conformal_test, frobenius

SPHERE_VOLUME = 2.0 * np.pi ** 2
MOBIUS_MASS = SPHERE_VOLUME / PREFACTOR     # unprefactored bubble mass


# ---------------------------------------------------------------------------
# suite: vcp algebra

def run_vcp_suite(params, out_rows):
    samples = int(params["samples"])
    seed = int(params["seed"])
    tol_axiom = float(params["tol_axiom"])
    tol_identity = float(params["tol_identity"])
    rng = np.random.default_rng(seed)
    passed = True

    builtins = [("HodgeStar", 3), ("HodgeStar", 7), ("Complex", 2),
                ("Complex", 6), ("G2", 7), ("Spin7", 8)]
    for tag, n in builtins:
        P = vcp.builtin_vcp(tag, n)
        orth, metric = vcp.axiom_defect(P, samples=samples, seed=seed)
        out_rows.append((f"{tag}({n})", samples, "orth_defect", orth))
        out_rows.append((f"{tag}({n})", samples, "metric_defect", metric))
        passed &= orth <= tol_axiom and metric <= tol_axiom

    for tag, n in [("G2", 7), ("Spin7", 8)]:
        P = vcp.builtin_vcp(tag, n)
        worst = 0.0
        for _ in range(samples):
            us = vcp.random_unit_vectors(rng, n, P.k - 1)
            w = vcp.random_unit_vectors(rng, n, 1)[0]
            worst = max(worst,
                        vcp.fundamental_identity_defect(P, us, w))
        out_rows.append((f"{tag}({n})", samples, "fundamental_identity",
                         worst))
        passed &= worst <= tol_identity

    C = vcp.builtin_vcp("Complex", 6)
    w = vcp.random_unit_vectors(rng, 6, 1)[0]
    k1 = vcp.fundamental_identity_defect(C, [], w)
    out_rows.append(("Complex(6)", 1, "square_is_minus_identity", k1))
    passed &= k1 == 0.0

    for tag, n in builtins:
        P = vcp.builtin_vcp(tag, n)
        alpha = vcp.calibration_from_vcp(P)
        cm = vcp.comass_estimate(alpha, samples=samples, seed=seed + 1)
        out_rows.append((f"{tag}({n})", samples, "comass_estimate", cm))
        passed &= cm <= 1.0 + 1e-10

    # generalized-gap / linear-residual agreement on a mixed gallery
    G = vcp.builtin_vcp("G2", 7)
    P3 = vcp.builtin_vcp("HodgeStar", 3)
    mismatches = 0
    worst_gap = 0.0
    for i in range(100):
        a_smith = (0.5 + rng.random()) * vcp.random_gray_map(rng, G, 3)
        a_rand = rng.standard_normal((7, 3))
        for a in (a_smith, a_rand):
            gap = vcp.generalized_calibration_gap(a, G)
            res = vcp.smith_defect_linear(a, P3, G)
            worst_gap = min(worst_gap, gap)
            if (gap <= 1e-10) != (res <= 1e-10):
                mismatches += 1
    out_rows.append(("G2(7)", 200, "gap_residual_mismatches", mismatches))
    out_rows.append(("G2(7)", 200, "min_gap", worst_gap))
    passed &= mismatches == 0 and worst_gap >= -1e-12
    return passed


# ---------------------------------------------------------------------------
# suite: field gallery

def _gallery_maps(n_grid):
    dom = ChartDomain("FlatBox", ((0.0, 1.0),) * 3, n_grid)
    eu = MetricField.euclidean()
    maps = [("inclusion", gal.associative_inclusion(dom), eu),
            ("dilation", gal.associative_inclusion(dom, scale=2.0), eu)]
    fmap = gal.gallery_mobius()
    composed = precompose_conformal(gal.associative_inclusion(dom), fmap.fn,
                                    fmap.dfn)
    maps.append(("mobius-precomposed", composed, eu))
    return dom, eu, maps


def run_field_gallery(params, out_rows):
    grids = [int(n) for n in params["grids"]]
    tol_res = float(params["tol_residual"])
    tol_defect = float(params["tol_identity_defect"])
    order_floor = float(params["order_floor"])
    passed = True

    fd_maxima = {}
    nh_maxima = {}
    for n_grid in grids:
        dom, eu, maps = _gallery_maps(n_grid)
        for name, u, g in maps:
            res = smith_residual_field(u, g)
            out_rows.append((name, n_grid, "residual_analytic",
                             float(res.max())))
            passed &= float(res.max()) <= tol_res
            conf = conformality_defect(u, g)
            out_rows.append((name, n_grid, "conformality_defect",
                             float(conf.max())))
            _, tot = energy_identity_defect(u, g)
            out_rows.append((name, n_grid, "identity_defect_total",
                             float(abs(tot))))
            passed &= abs(tot) <= tol_defect
            rep = energy(u, g)
            out_rows.append((name, n_grid, "energy", rep.total))
            out_rows.append((name, n_grid, "energy_unprefactored",
                             rep.total_unprefactored))
            sampled = u.sample_grid()
            fd_res = smith_residual_field(sampled, g)
            out_rows.append((name, n_grid, "residual_fd",
                             float(fd_res.max())))
            fd_maxima.setdefault(name, []).append(float(fd_res.max()))
            nh = nharmonic_residual(u, g)
            out_rows.append((name, n_grid, "nharmonic_max", float(nh.max())))
            nh_maxima.setdefault(name, []).append(float(nh.max()))

    # observed convergence orders over the refinement ladder
    for name, vals in fd_maxima.items():
        order = _observed_order(grids, vals)
        out_rows.append((name, 0, "residual_fd_order", order))
        if name == "mobius-precomposed":
            passed &= order >= 1.8
    for name, vals in nh_maxima.items():
        if max(vals) < 1e-12:
            continue
        order = _observed_order(grids, vals)
        out_rows.append((name, 0, "nharmonic_order", order))
        passed &= order >= order_floor
    return passed


def _observed_order(grids, values):
    grids = np.asarray(grids, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 1e-14
    if keep.sum() < 2:
        return np.inf
    slope, _ = np.polyfit(np.log(grids[keep]), np.log(values[keep]), 1)
    return float(-slope)


def run_holo_lift(params, out_rows):
    n_grid = int(params["grid"])
    tol_res = float(params["tol_residual"])
    tol_vol = float(params["tol_volume"])
    passed = True
    dom = gal.lift_domain(resolution=n_grid)
    cases = [("flat-curve/unit-fiber", gal.flat_curve(),
              gal.straight_fiber(1.0)),
             ("flat-curve/double-fiber", gal.flat_curve(),
              gal.straight_fiber(2.0)),
             ("curved-curve/unit-fiber", gal.curved_curve(),
              gal.straight_fiber(1.0)),
             ("curved-curve/sheared-fiber", gal.curved_curve(),
              gal.sheared_fiber(0.2))]
    for name, (v, dv), (f, df) in cases:
        lift = lift_holomorphic(v, dv, f, df, dom)
        out_rows.append((name, n_grid, "volume_defect_max",
                         lift.vol_defect_max))
        out_rows.append((name, n_grid, "residual_max",
                         lift.smith_residual_max))
        out_rows.append((name, n_grid, "mu_min", lift.mu_range[0]))
        passed &= lift.vol_defect_max <= tol_vol
        passed &= lift.smith_residual_max <= tol_res
    degen = lift_holomorphic(*gal.constant_curve(), *gal.straight_fiber(1.0),
                             dom)
    out_rows.append(("constant-curve", n_grid, "degenerate",
                     float(degen.degenerate)))
    out_rows.append(("constant-curve", n_grid, "residual_max",
                     degen.smith_residual_max))
    passed &= degen.degenerate and degen.smith_residual_max == 0.0
    return passed


# ---------------------------------------------------------------------------
# suite: bubble runs

def _bubble_domain(name, n_grid):
    if name == "two-bubble":
        return ChartDomain.cube("FlatBox", 0.78, n_grid)
    return ChartDomain.cube("FlatBox", 0.5, n_grid)


def build_bubble_sequence(name, params):
    n_grid = int(params["grid"])
    ladder = tuple(int(n) for n in params["ladder"])
    scale = float(params["scale"])
    dom = _bubble_domain(name, n_grid)
    if name == "mobius-s3":
        gen = gal.mobius_sequence(dom, scale=scale)
        bound = 1.02 * MOBIUS_MASS
        expected = [(np.zeros(3), MOBIUS_MASS)]
    elif name == "two-bubble":
        gen = gal.two_bubble_sequence(dom, scale=scale)
        bound = 2.1 * MOBIUS_MASS
        expected = [(np.array([-0.28, 0.0, 0.0]), MOBIUS_MASS),
                    (np.array([0.28, 0.0, 0.0]), MOBIUS_MASS)]
    elif name == "no-bubble":
        u = gal.associative_inclusion(dom)
        gen = lambda n: (u, MetricField.euclidean())
        bound = energy(u, MetricField.euclidean()).total_unprefactored * 1.01
        expected = []
    else:
        raise KeyError(f"unknown bubble scenario {name!r}")
    seq = bub.MapSequence(ladder, gen, bound, label=name)
    return seq, expected


def bubble_config(params):
    return bub.BubbleConfig.with_defaults(
        eps0=float(params["eps0"]),
        gamma1=float(params["gamma1"]) if params.get("gamma1") else None,
        eps_schedule=tuple(float(e) for e in params["eps_schedule"]),
        detect_radii=tuple(float(r) for r in params["detect_radii"]),
        grid=int(params["grid"]))


def run_bubble(name, params, tables):
    """Full pipeline run; fills per-level, per-neck and ledger tables."""
    seq, expected = build_bubble_sequence(name, params)
    config = bubble_config(params)
    mass_tol = float(params["mass_tol"])
    passed = True

    tree = bub.build_tree(seq, config, max_depth=int(params["max_depth"]))
    violations = bub.validate_tree(tree)
    first_level = [n for _, n in tree.root.walk()
                   if n.kind == "bubble" and n.level == 1]
    passed &= len(first_level) == len(expected)
    passed &= not violations

    level_rows = []
    for path, node in tree.root.walk():
        if node.kind != "bubble":
            continue
        for rec in node.records:
            level_rows.append(("/".join(map(str, path)), rec.k, rec.index,
                               rec.eps_k, rec.lam,
                               rec.center[0], rec.center[1], rec.center[2],
                               rec.level_value, node.mass))
    tables["levels"] = (("node", "k", "n", "eps_k", "lambda_k",
                         "c1", "c2", "c3", "level_value", "mass"),
                        level_rows)

    # masses against construction
    mass_rows = []
    for point, mass_oracle in expected:
        best = min(first_level,
                   key=lambda nd: np.linalg.norm(nd.point - point),
                   default=None)
        if best is None:
            passed = False
            continue
        rel = abs(best.mass - mass_oracle) / mass_oracle
        loc = float(np.linalg.norm(best.point - point))
        mass_rows.append((point[0], point[1], point[2], best.mass,
                          mass_oracle, rel, loc))
        passed &= rel <= mass_tol
    tables["masses"] = (("x1", "x2", "x3", "mass", "oracle",
                         "rel_error", "location_error"), mass_rows)

    if not expected:
        tables["ledger"] = (("quantity", "value"),
                            [("tree_depth", tree.depth),
                             ("violations", len(violations))])
        return tree, passed

    acct = bub.energy_accounting(tree)
    ledger_rows = [("limit_energy", acct.limit_energy),
                   ("base_energy", acct.base_energy),
                   ("bubble_sum", acct.bubble_sum),
                   ("balance_gap", acct.balance_gap),
                   ("relative_gap", acct.relative_gap)]
    for row in acct.nodes:
        node_id = "/".join(map(str, row.path))
        ledger_rows.append((f"tau[{node_id}]", row.tau))
        passed &= row.tau_in_bracket
        passed &= abs(row.tau) <= mass_tol * row.mass
        for k, chart_e, orig_e in row.conformal_rows:
            gap = abs(chart_e - orig_e) / max(orig_e, 1e-300)
            ledger_rows.append((f"conformal_gap[{node_id},k={k}]", gap))
            passed &= gap <= 2.0 * mass_tol
    passed &= acct.relative_gap <= mass_tol
    tables["ledger"] = (("quantity", "value"), ledger_rows)

    neck_rows = []
    for j in range(len(first_level)):
        neck = bub.neck_report(tree, node_path=(j,))
        for row in neck.rows:
            ann = bub.annulus_energy_ratio(
                *seq.map_at(tree.root.children[j].records[row.position - 1]
                            .index),
                tree.root.children[j].records[row.position - 1].center,
                row.sigma, row.rho, config)
            neck_rows.append((j, row.position, row.rho, row.sigma,
                              row.diameter, row.grad_scale, ann.ratio,
                              int(ann.preconditions_met)))
        passed &= neck.diam_extrapolant <= float(params["neck_extrap_tol"])
        passed &= neck.endpoint_mismatch <= float(params["endpoint_tol"])
        passed &= neck.decreasing_after <= 1
        neck_rows.append((j, 0, 0.0, 0.0, neck.diam_extrapolant,
                          neck.endpoint_mismatch, 0.0, 1))
    tables["necks"] = (("bubble", "l", "rho", "sigma", "diam_or_extrap",
                        "grad_or_endpoint", "annulus_ratio", "flag"),
                       neck_rows)
    return tree, passed


# ---------------------------------------------------------------------------
# registry

DEFAULTS = {
    "vcp-suite": {
        "module": "vcp-suite",
        "parameters": {"samples": 2000, "seed": 7, "tol_axiom": 1e-12,
                       "tol_identity": 1e-10},
    },
    "associative-plane": {
        "module": "field-gallery",
        "parameters": {"grids": [16, 32, 48], "tol_residual": 1e-10,
                       "tol_identity_defect": 1e-6, "order_floor": 0.8,
                       "seed": 7},
    },
    "holo-lift": {
        "module": "field-gallery",
        "parameters": {"grid": 17, "tol_residual": 1e-8,
                       "tol_volume": 1e-10, "seed": 7},
    },
    "mobius-s3": {
        "module": "bubble-run",
        "parameters": {"grid": 48, "ladder": [8, 16, 32, 64], "scale": 16.0,
                       "eps0": 0.5 * MOBIUS_MASS, "gamma1": None,
                       "eps_schedule": [0.105, 0.21, 0.235, 0.21],
                       "detect_radii": [0.16, 0.08, 0.04, 0.02],
                       "mass_tol": 0.02, "neck_extrap_tol": 0.01,
                       "endpoint_tol": 1e-3, "max_depth": 3, "seed": 7},
    },
    "two-bubble": {
        "module": "bubble-run",
        "parameters": {"grid": 48, "ladder": [8, 16, 32, 64], "scale": 16.0,
                       "eps0": 0.5 * MOBIUS_MASS, "gamma1": None,
                       "eps_schedule": [0.105, 0.21, 0.235, 0.21],
                       "detect_radii": [0.16, 0.08, 0.04, 0.02],
                       "mass_tol": 0.02, "neck_extrap_tol": 0.01,
                       "endpoint_tol": 1e-3, "max_depth": 3, "seed": 7},
    },
    "no-bubble": {
        "module": "bubble-run",
        "parameters": {"grid": 32, "ladder": [8, 16, 32, 64], "scale": 16.0,
                       "eps0": 0.5 * MOBIUS_MASS, "gamma1": None,
                       "eps_schedule": [0.105, 0.21, 0.235, 0.21],
                       "detect_radii": [0.16, 0.08, 0.04, 0.02],
                       "mass_tol": 0.02, "neck_extrap_tol": 0.01,
                       "endpoint_tol": 1e-3, "max_depth": 3, "seed": 7},
    },
}


def scenario_names(module_filter=None):
    names = sorted(DEFAULTS)
    if module_filter:
        names = [n for n in names if DEFAULTS[n]["module"] == module_filter]
    return names


def run_scenario(name, parameters):
    """Execute a scenario; returns (tables, summary dict, passed)."""
    if name not in DEFAULTS:
        raise KeyError(f"unknown scenario {name!r}")
    module = DEFAULTS[name]["module"]
    tables = {}
    rows = []
    if module == "vcp-suite":
        passed = run_vcp_suite(parameters, rows)
        tables["defects"] = (("product", "samples", "quantity", "value"),
                             rows)
    elif module == "field-gallery":
        if name == "holo-lift":
            passed = run_holo_lift(parameters, rows)
        else:
            passed = run_field_gallery(parameters, rows)
        tables["diagnostics"] = (("scenario", "N", "quantity", "value"),
                                 rows)
    elif module == "bubble-run":
        _, passed = run_bubble(name, parameters, tables)
    else:
        raise KeyError(f"unknown module {module!r}")
    summary = {"scenario": name, "module": module, "passed": bool(passed)}
    key_numbers = {}
    for tname, (header, trows) in tables.items():
        key_numbers[tname] = len(trows)
    summary["table_rows"] = key_numbers
    return tables, summary, bool(passed)
