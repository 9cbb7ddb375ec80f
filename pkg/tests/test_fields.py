import numpy as np
import pytest

from vcplab import gallery as gal
from vcplab.fields import (ChartDomain, MapField, MetricField, SphereMesh,
                           TargetStructure, ball_region, box_region,
                           conformality_defect, differential, differential_at,
                           energy, energy_identity_defect,
                           homogeneous_extension, lift_holomorphic, load_grid,
                           nharmonic_residual, precompose_conformal,
                           pullback_form, round_cap_volume, save_grid,
                           smith_residual_field, stereo_factor, stereo_project,
                           stereo_unproject, stereo_unproject_jacobian,
                           north_pole, south_pole, PREFACTOR)


def grid_domain(n=17, lo=0.0, hi=1.0):
    return ChartDomain("FlatBox", ((lo, hi),) * 3, n)


class TestDifferential:
    def test_constant_map(self, euclid):
        dom = grid_domain()
        u = gal.constant_map(dom, np.arange(4.0))
        du = differential(u.sample_grid(), "Central2")
        assert np.abs(du.du).max() == 0.0

    def test_linear_exact(self, rng, euclid):
        dom = grid_domain()
        mat = rng.standard_normal((5, 3))
        u = gal.linear_map_field(dom, mat, target=TargetStructure.euclidean(5))
        du = differential(u.sample_grid(), "Central2")
        np.testing.assert_allclose(du.du, np.broadcast_to(
            mat.T, du.du.shape), atol=1e-12)

    def test_quadratic_sampled_interior(self):
        # h = 0.05 grid; oracle is the analytic derivative
        dom = ChartDomain("FlatBox", ((0.0, 1.0),) * 3, 21)
        tgt = TargetStructure.euclidean(2)

        def f(p):
            p = np.asarray(p, float)
            out = np.zeros(p.shape[:-1] + (2,))
            out[..., 0] = p[..., 0] ** 2
            return out

        u = MapField(dom, tgt, evaluator=f).sample_grid()
        du = differential(u, "Central2")
        exact = 2.0 * dom.vertices()[..., 0]
        err = np.abs(du.du[..., 0, 0] - exact)
        assert err[1:-1, :, :].max() <= 1e-10
        # one-sided face stencils stay second order (exact on quadratics)
        assert err.max() <= 1e-9

    def test_analytic_scheme_requires_differential(self, unit_domain,
                                                   g2_target):
        u = MapField(unit_domain, g2_target,
                     evaluator=lambda p: np.zeros(
                         np.asarray(p).shape[:-1] + (7,)))
        with pytest.raises(ValueError):
            differential(u, "Analytic")

    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            ChartDomain("FlatBox", ((0, 1),) * 3, 4)


class TestEnergy:
    def test_unit_inclusion(self, euclid):
        u = gal.associative_inclusion(grid_domain())
        rep = energy(u, euclid)
        assert rep.total == pytest.approx(1.0, abs=1e-12)
        assert rep.total_unprefactored == pytest.approx(3.0 ** 1.5, rel=1e-12)

    def test_constant_zero(self, euclid):
        u = gal.constant_map(grid_domain(), np.ones(7))
        assert energy(u, euclid).total == 0.0

    def test_additive_over_disjoint_regions(self, euclid):
        u = gal.associative_inclusion(grid_domain(n=21))
        left = box_region([0, 0, 0], [0.5, 1, 1])
        right = box_region([0.5, 0, 0], [1, 1, 1])
        total = energy(u, euclid).total
        parts = (energy(u, euclid, region=left).total
                 + energy(u, euclid, region=right).total)
        assert parts == pytest.approx(total, rel=1e-3)

    def test_empty_region(self, euclid):
        u = gal.associative_inclusion(grid_domain())
        with pytest.raises(ValueError):
            energy(u, euclid, region=ball_region([50.0, 0, 0], 0.1))

    def test_sphere_identity_two_charts(self):
        # round sphere volume from two stereographic charts
        total = 0.0
        for hemisphere in (+1.0, -1.0):
            dom = ChartDomain.cube("StereoChart", 1.0, 48)

            def ident(p, s=hemisphere):
                q = stereo_unproject(p)
                q[..., 3] *= s
                out = np.zeros(np.asarray(p).shape[:-1] + (4,))
                out[...] = q
                return out

            def dident(p, s=hemisphere):
                j = stereo_unproject_jacobian(p)
                j[..., 3] *= s
                return j

            u = MapField(dom, TargetStructure.euclidean(4),
                         evaluator=ident, differential_fn=dident)
            total += energy(u, dom.metric(),
                            region=ball_region(np.zeros(3), 1.0)).total
        assert total == pytest.approx(2.0 * np.pi ** 2, rel=0.01)

    def test_cap_volume_closed_form(self):
        assert round_cap_volume(0.0) == pytest.approx(2 * np.pi ** 2)
        # quadrature oracle
        r = np.linspace(2.0, 60.0, 4000)
        f = 4 * np.pi * r ** 2 * (2 / (1 + r ** 2)) ** 3
        tail = np.trapezoid(f, r)
        assert round_cap_volume(2.0) == pytest.approx(tail, rel=1e-3)


class TestPointwiseDiagnostics:
    def test_inclusion_residual_zero(self, euclid):
        u = gal.associative_inclusion(grid_domain())
        assert smith_residual_field(u, euclid).max() == 0.0

    def test_dilation_scale_invariance(self, euclid):
        u = gal.associative_inclusion(grid_domain(), scale=2.0)
        assert smith_residual_field(u, euclid).max() <= 1e-14

    def test_reversed_constant_residual(self, euclid):
        u = gal.reversed_inclusion(grid_domain())
        res = smith_residual_field(u, euclid)
        np.testing.assert_allclose(res, 2.0 * np.sqrt(3.0), rtol=1e-12)

    def test_critical_point_convention(self, euclid):
        u = gal.constant_map(grid_domain(), np.zeros(7),
                             target=TargetStructure.g2())
        assert smith_residual_field(u, euclid).max() == 0.0

    def test_structure_mismatch(self, euclid):
        u = gal.constant_map(grid_domain(), np.zeros(4))
        with pytest.raises(ValueError):
            smith_residual_field(u, euclid)

    def test_pullback_inclusion(self, euclid, g2_target):
        u = gal.associative_inclusion(grid_domain())
        dens, integral = pullback_form(u, g2_target.alpha)
        np.testing.assert_allclose(dens, 1.0, atol=1e-13)
        assert integral == pytest.approx(1.0, abs=1e-12)

    def test_pullback_orientation_flip(self, euclid, g2_target):
        u = gal.reversed_inclusion(grid_domain())
        _, integral = pullback_form(u, g2_target.alpha)
        assert integral == pytest.approx(-1.0, abs=1e-12)

    def test_pullback_constant(self, euclid, g2_target):
        u = gal.constant_map(grid_domain(), np.ones(7), TargetStructure.g2())
        dens, integral = pullback_form(u, g2_target.alpha)
        assert np.abs(dens).max() == 0.0 and integral == 0.0

    def test_identity_defect_cases(self, euclid):
        u = gal.associative_inclusion(grid_domain())
        dens, total = energy_identity_defect(u, euclid)
        assert np.abs(dens).max() <= 1e-13
        rev = gal.reversed_inclusion(grid_domain())
        dens, total = energy_identity_defect(rev, euclid)
        np.testing.assert_allclose(dens, 2.0, atol=1e-8)
        assert total == pytest.approx(2.0, abs=1e-8)

    def test_identity_defect_positive_on_perturbation(self, euclid):
        dom = grid_domain()

        def f(p):
            p = np.asarray(p, float)
            out = np.zeros(p.shape[:-1] + (7,))
            out[..., :3] = p
            out[..., 3] = 0.15 * np.sin(2 * p[..., 0]) * p[..., 1]
            return out

        u = MapField(dom, TargetStructure.g2(), evaluator=f)
        dens, total = energy_identity_defect(u, euclid)
        assert total > 1e-4
        assert dens.min() >= -1e-10

    def test_conformality_defect(self, euclid):
        u = gal.associative_inclusion(grid_domain(), scale=2.0)
        assert conformality_defect(u, euclid).max() <= 1e-12
        mat = np.zeros((7, 3))
        mat[0, 0], mat[1, 1], mat[2, 2] = 1.0, 2.0, 1.0
        v = gal.linear_map_field(grid_domain(), mat)
        # du^T du = diag(1, 4, 1); defect strictly positive
        assert conformality_defect(v, euclid).min() > 0.5
        w = gal.constant_map(grid_domain(), np.zeros(7))
        assert conformality_defect(w, euclid).max() == 0.0

    def test_nharmonic_linear_and_constant(self, euclid):
        u = gal.associative_inclusion(grid_domain())
        assert nharmonic_residual(u, euclid).max() <= 1e-12
        c = gal.constant_map(grid_domain(), np.ones(7))
        assert nharmonic_residual(c, euclid).max() == 0.0

    def test_nharmonic_quadratic_oracle(self, euclid):
        # u = (x1^2, 0, ...): div(|du| du) = 8 x1 for x1 > 0
        dom = ChartDomain("FlatBox", ((0.2, 1.2),) * 3, 21)

        def f(p):
            p = np.asarray(p, float)
            out = np.zeros(p.shape[:-1] + (7,))
            out[..., 0] = p[..., 0] ** 2
            return out

        u = MapField(dom, TargetStructure.g2(), evaluator=f)
        res = nharmonic_residual(u, euclid)
        x1 = dom.vertices()[..., 0]
        err = np.abs(res - 8.0 * x1)[2:-2, 2:-2, 2:-2]
        h = dom.spacing[0]
        assert err.max() <= 20.0 * h ** 2


class TestPrecompose:
    def test_identity_map(self, euclid):
        u = gal.associative_inclusion(grid_domain())
        ident = gal.dilation(1.0)
        v = precompose_conformal(u, ident.fn, ident.dfn)
        pts = grid_domain().vertices()
        np.testing.assert_allclose(v.eval(pts), u.eval(pts), atol=0)

    def test_dilation_residual_and_energy(self, euclid):
        dom = ChartDomain("FlatBox", ((0.0, 0.5),) * 3, 17)
        u = gal.associative_inclusion(ChartDomain("FlatBox",
                                                  ((0.0, 1.0),) * 3, 17))
        f = gal.dilation(2.0)
        v = precompose_conformal(u, f.fn, f.dfn, domain=dom)
        assert smith_residual_field(v, euclid).max() <= 1e-12
        # energy of u o F over F^{-1}(A) equals energy of u over A
        reg = ball_region([0.5, 0.5, 0.5], 0.3)
        pre = ball_region([0.25, 0.25, 0.25], 0.15)
        e_u = energy(u, euclid, region=reg).total
        e_v = energy(v, euclid, region=pre).total
        assert e_v == pytest.approx(e_u, rel=5e-3)

    def test_mobius_involution_and_residual(self, euclid, rng):
        f = gal.reflected_inversion((1.6, 0.2, -0.3), 1.2)
        pts = rng.uniform(0, 1, (50, 3))
        np.testing.assert_allclose(f.fn(f.fn(pts)), pts, atol=1e-12)
        # differential against finite differences
        jac = f.dfn(pts)
        h = 1e-6
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            fd = (f.fn(pts + e) - f.fn(pts - e)) / (2 * h)
            np.testing.assert_allclose(jac[:, a, :], fd, atol=1e-6)
        u = gal.associative_inclusion(grid_domain())
        v = precompose_conformal(u, f.fn, f.dfn)
        assert smith_residual_field(v, euclid).max() <= 1e-12

    def test_nonconformal_rejected(self, euclid):
        u = gal.associative_inclusion(grid_domain())

        def bad(p):
            p = np.asarray(p, float)
            return p * np.array([1.0, 2.0, 1.0])

        def dbad(p):
            p = np.asarray(p, float)
            out = np.zeros(p.shape[:-1] + (3, 3))
            out[...] = np.diag([1.0, 2.0, 1.0])
            return out

        with pytest.raises(ValueError):
            precompose_conformal(u, bad, dbad)

    def test_orientation_reversal_rejected(self, euclid):
        u = gal.associative_inclusion(grid_domain())

        def refl(p):
            return np.asarray(p, float) * np.array([1.0, 1.0, -1.0])

        def drefl(p):
            p = np.asarray(p, float)
            out = np.zeros(p.shape[:-1] + (3, 3))
            out[...] = np.diag([1.0, 1.0, -1.0])
            return out

        with pytest.raises(ValueError):
            precompose_conformal(u, refl, drefl)


class TestStereographic:
    def test_pole_and_equator(self):
        np.testing.assert_allclose(stereo_project(north_pole()), np.zeros(3),
                                   atol=0)
        eq = np.array([0.6, 0.8, 0.0, 0.0])
        assert np.linalg.norm(stereo_project(eq)) == pytest.approx(1.0)

    def test_roundtrip(self, rng):
        x = rng.standard_normal((200, 3)) * 3.0
        np.testing.assert_allclose(stereo_project(stereo_unproject(x)), x,
                                   atol=1e-13)
        on_sphere = stereo_unproject(x)
        assert np.abs(np.linalg.norm(on_sphere, axis=-1) - 1.0).max() < 1e-14

    def test_pole_rejected(self):
        with pytest.raises(ValueError):
            stereo_project(south_pole())

    def test_factor_from_jacobian(self, rng):
        # oracle: differentiate the inverse chart map numerically
        x = rng.standard_normal((20, 3))
        jac = stereo_unproject_jacobian(x)
        h = 1e-6
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            fd = (stereo_unproject(x + e) - stereo_unproject(x - e)) / (2 * h)
            np.testing.assert_allclose(jac[:, a, :], fd, atol=1e-7)
        gram = np.einsum("mai,mbi->mab", jac, jac)
        lam = stereo_factor(x)
        np.testing.assert_allclose(
            gram, lam[:, None, None] ** 2 * np.eye(3), atol=1e-12)
        assert stereo_factor(np.zeros(3)) == pytest.approx(2.0)


class TestLift:
    def test_flat_curve_unit_fiber(self):
        dom = gal.lift_domain(resolution=13)
        lift = lift_holomorphic(*gal.flat_curve(), *gal.straight_fiber(1.0),
                                dom)
        assert lift.mu_range == pytest.approx((1.0, 1.0))
        assert lift.vol_defect_max <= 1e-10
        assert lift.smith_residual_max <= 1e-10
        g = lift.g3.matrix(np.zeros((1, 3)))[0]
        np.testing.assert_allclose(g, np.eye(3), atol=1e-14)

    def test_rescaled_fiber(self):
        dom = gal.lift_domain(resolution=13)
        lift = lift_holomorphic(*gal.flat_curve(), *gal.straight_fiber(2.0),
                                dom)
        assert lift.vol_defect_max <= 1e-10
        assert lift.smith_residual_max <= 1e-10

    def test_curved_cases(self):
        dom = gal.lift_domain(resolution=13)
        for fiber in (gal.straight_fiber(1.0), gal.sheared_fiber(0.2)):
            lift = lift_holomorphic(*gal.curved_curve(), *fiber, dom)
            assert lift.vol_defect_max <= 1e-10
            assert lift.smith_residual_max <= 1e-10

    def test_degenerate_constant_curve(self):
        dom = gal.lift_domain(resolution=13)
        lift = lift_holomorphic(*gal.constant_curve(),
                                *gal.straight_fiber(1.0), dom)
        assert lift.degenerate
        assert lift.smith_residual_max == 0.0
        assert lift.g3 is None

    def test_vanishing_fiber_speed_rejected(self):
        dom = gal.lift_domain(resolution=13)

        def f(points):
            p = np.asarray(points, float)
            return np.sin(p[..., 2])

        def df(points):
            p = np.asarray(points, float)
            out = np.zeros(p.shape[:-1] + (3,))
            out[..., 2] = np.cos(p[..., 2])
            return out

        with pytest.raises(ValueError):
            lift_holomorphic(*gal.flat_curve(), f, df, dom)

    def test_antiholomorphic_rejected(self):
        dom = gal.lift_domain(resolution=13)
        v, dv = gal.flat_curve()

        def vbar(z):
            return v(np.conj(z))

        with pytest.raises(ValueError):
            lift_holomorphic(vbar, dv, *gal.straight_fiber(1.0), dom)


class TestHomogeneousExtension:
    def test_constant_boundary(self):
        p = np.array([1.0, 2.0, 3.0])
        ext, ratio = homogeneous_extension(
            lambda xi: np.broadcast_to(p, np.asarray(xi).shape[:-1]
                                       + (3,)).copy(), p)
        assert ratio == 0.0
        np.testing.assert_allclose(ext(np.array([[0.3, 0.1, -0.2]])),
                                   [p], atol=1e-14)

    def test_equatorial_inclusion_against_3d_quadrature(self):
        # independent oracle: finite differences of the returned extension
        # on a 3d grid over the unit ball
        ext, ratio = homogeneous_extension(lambda xi: np.asarray(xi, float),
                                           np.zeros(3), n_theta=64,
                                           n_phi=128)
        closed_form = np.sqrt(3.0) / (1.0 + 2.0 * np.sqrt(2.0))
        assert ratio == pytest.approx(closed_form, rel=1e-3)
        n = 41
        axis = np.linspace(-0.999, 0.999, n)
        pts = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
        h = 1e-5
        grads = []
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            grads.append((ext(pts + e) - ext(pts - e)) / (2 * h))
        du = np.stack(grads, axis=-2)
        inside = np.linalg.norm(pts, axis=-1) <= 1.0 - 2 * h
        dens = np.sqrt(np.einsum("...ai,...ai->...", du, du)) ** 3
        numerator = dens[inside].sum() * (axis[1] - axis[0]) ** 3
        mesh = SphereMesh(64, 128)
        xi = mesh.points()
        denom = mesh.integrate(mesh.tangential_gradient(xi) ** 1.5) \
            + mesh.integrate(np.ones(xi.shape[:-1]))
        assert numerator / denom == pytest.approx(ratio, rel=0.02)

    def test_scaling_invariance(self):
        base = lambda xi: np.asarray(xi, float)
        _, r1 = homogeneous_extension(base, np.zeros(3))
        _, r2 = homogeneous_extension(lambda xi: 3.0 * base(xi), np.zeros(3))
        assert r1 == pytest.approx(r2, rel=1e-12)

    def test_empty_mesh_rejected(self):
        with pytest.raises(ValueError):
            homogeneous_extension(lambda xi: np.asarray(xi, float),
                                  np.zeros(3), n_theta=1, n_phi=2)


class TestSerialization:
    @pytest.mark.parametrize("mode", ["binary", "text"])
    def test_roundtrip(self, tmp_path, rng, mode):
        dom = grid_domain(n=7)
        arr = rng.standard_normal((7, 7, 7, 4))
        path = tmp_path / f"field.{mode}"
        save_grid(path, dom, arr, meta={"quantity": "test"}, mode=mode)
        dom2, arr2, meta = load_grid(path)
        assert dom2 == dom
        np.testing.assert_array_equal(arr, arr2)
        assert meta == {"quantity": "test"}

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b'{"magic": "nope"}\n')
        with pytest.raises(ValueError):
            load_grid(path)
