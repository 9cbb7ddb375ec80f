import numpy as np
import pytest

from vcplab import vcp
from vcplab.vcp import (apply_vcp, axiom_defect, builtin_vcp,
                        calibrated_defect, calibration_from_vcp,
                        comass_estimate, dump_table, decomposable_coeffs,
                        fundamental_identity_defect,
                        generalized_calibration_gap, load_table,
                        random_gray_map, random_orthonormal_frame,
                        random_rotation, random_unit_vectors,
                        smith_defect_linear, tuple_defects,
                        vcp_from_calibration, CrossProduct)
from vcplab.xalg import conformal_test, frobenius

E3 = np.eye(3)
E7 = np.eye(7)

ALL_BUILTINS = [("HodgeStar", 3), ("HodgeStar", 4), ("HodgeStar", 7),
                ("Complex", 2), ("Complex", 6), ("G2", 7), ("Spin7", 8)]


def inclusion_map(cols=3, rows=7):
    out = np.zeros((rows, cols))
    out[:cols, :cols] = np.eye(cols)
    return out


class TestBuiltins:
    @pytest.mark.parametrize("tag,n", ALL_BUILTINS)
    def test_axioms(self, tag, n):
        P = builtin_vcp(tag, n)
        orth, metric = axiom_defect(P, samples=1500, seed=3)
        assert orth <= 1e-12 and metric <= 1e-12

    def test_hodge3_table(self):
        P = builtin_vcp("HodgeStar", 3)
        np.testing.assert_allclose(P(E3[0], E3[1]), E3[2], atol=0)
        np.testing.assert_allclose(P(E3[1], E3[2]), E3[0], atol=0)
        np.testing.assert_allclose(P(E3[2], E3[0]), E3[1], atol=0)

    def test_complex2_table(self):
        P = builtin_vcp("Complex", 2)
        np.testing.assert_allclose(P(np.array([1.0, 0.0])), [0.0, 1.0])
        np.testing.assert_allclose(P(np.array([0.0, 1.0])), [-1.0, 0.0])

    def test_g2_convention_rows(self, g2):
        np.testing.assert_allclose(g2(E7[0], E7[1]), E7[2], atol=0)
        np.testing.assert_allclose(g2(E7[0], E7[2]), -E7[1], atol=0)

    def test_illegal_pairings(self):
        for tag, n in [("G2", 6), ("Spin7", 7), ("Complex", 5),
                       ("HodgeStar", 9), ("Nope", 7)]:
            with pytest.raises(ValueError):
                builtin_vcp(tag, n)

    def test_corrupted_table_detected(self, g2):
        constants = g2.constants.copy()
        row = np.flatnonzero(constants[0])[0]
        constants[0, row] = -constants[0, row]
        bad = CrossProduct(7, 2, constants, "corrupted")
        _, metric = axiom_defect(bad, samples=200, seed=0)
        assert metric > 0.5

    def test_degenerate_tuple_contributes_zero(self, g2):
        v = np.arange(1.0, 8.0)
        orth, metric = tuple_defects(g2, np.array([v, v]))
        assert orth <= 1e-12 and metric <= 1e-12


class TestApply:
    def test_antisymmetry_in_arguments(self, g2, rng):
        v, w = rng.standard_normal((2, 7))
        np.testing.assert_allclose(g2(v, w), -g2(w, v), atol=1e-14)
        np.testing.assert_allclose(g2(v, v), np.zeros(7), atol=1e-15)

    def test_multilinearity(self, g2, rng):
        u, v, w = rng.standard_normal((3, 7))
        lhs = g2(u + 2.0 * v, w)
        np.testing.assert_allclose(lhs, g2(u, w) + 2.0 * g2(v, w),
                                   atol=1e-13)

    def test_dimension_mismatch(self, g2):
        with pytest.raises(ValueError):
            g2(np.ones(6), np.ones(6))
        with pytest.raises(ValueError):
            g2(np.ones(7))


class TestCalibration:
    def test_volume_form(self, star3):
        alpha = calibration_from_vcp(star3)
        assert alpha.as_dict() == {(0, 1, 2): 1.0}

    def test_area_form(self):
        alpha = calibration_from_vcp(builtin_vcp("Complex", 2))
        assert alpha.as_dict() == {(0, 1): 1.0}

    def test_g2_form_components(self, g2):
        alpha = calibration_from_vcp(g2)
        assert alpha.as_dict() == vcp.G2_FORM

    def test_comass_bound(self, g2, spin7):
        for P in (g2, spin7):
            cm = comass_estimate(calibration_from_vcp(P), samples=4000,
                                 seed=5)
            assert cm <= 1.0 + 1e-12

    def test_vcp_roundtrip_through_form(self, g2):
        back = vcp_from_calibration(calibration_from_vcp(g2))
        np.testing.assert_allclose(back.constants, g2.constants, atol=0)

    def test_calibrated_defects(self, g2, star3):
        phi = calibration_from_vcp(g2)
        assert calibrated_defect(phi, E7[:3]) == pytest.approx(0.0, abs=1e-14)
        reversed_frame = np.array([E7[1], E7[0], E7[2]])
        assert calibrated_defect(phi, reversed_frame) == pytest.approx(2.0)
        vol = calibration_from_vcp(star3)
        rot = random_rotation(np.random.default_rng(1), 3)
        assert calibrated_defect(vol, rot.T) == pytest.approx(0.0, abs=1e-12)

    def test_non_orthonormal_frame_rejected(self, g2):
        phi = calibration_from_vcp(g2)
        with pytest.raises(ValueError):
            calibrated_defect(phi, 1.1 * E7[:3])


class TestFundamentalIdentity:
    def test_complex_case_reduces_to_square(self):
        P = builtin_vcp("Complex", 6)
        w = np.arange(1.0, 7.0)
        assert fundamental_identity_defect(P, [], w) == 0.0

    @pytest.mark.parametrize("tag,n", [("G2", 7), ("Spin7", 8)])
    def test_random_sweep(self, tag, n, rng):
        P = builtin_vcp(tag, n)
        worst = 0.0
        for _ in range(400):
            us = random_unit_vectors(rng, n, P.k - 1)
            w = random_unit_vectors(rng, n, 1)[0]
            worst = max(worst, fundamental_identity_defect(P, us, w))
        assert worst <= 1e-10

    def test_w_inside_span_vanishes(self, g2):
        assert fundamental_identity_defect(g2, [E7[0]], E7[0]) \
            == pytest.approx(0.0, abs=1e-14)

    def test_dependent_tuple_rejected(self, spin7):
        with pytest.raises(ValueError):
            fundamental_identity_defect(
                spin7, [E7[0].tolist() + [0.0],
                        (2 * np.eye(8))[0]], np.ones(8))

    def test_surjectivity_reconstruction(self, g2, rng):
        # decomposable preimages: u2 = -P(u1 ^ v) reconstructs v
        for _ in range(100):
            frame = random_orthonormal_frame(rng, 7, 2)
            u1, v = frame
            u2 = -g2(u1, v)
            np.testing.assert_allclose(g2(u1, u2), v, atol=1e-10)


class TestLinearResiduals:
    def test_zero_map(self, star3, g2):
        assert smith_defect_linear(np.zeros((7, 3)), star3, g2) == 0.0

    @pytest.mark.parametrize("scale", [1.0, 2.0, 0.5])
    def test_calibrated_inclusion(self, scale, star3, g2):
        assert smith_defect_linear(scale * inclusion_map(), star3, g2) \
            <= 1e-14

    def test_reversed_inclusion(self, star3, g2):
        a = inclusion_map() @ np.diag([1.0, 1.0, -1.0])
        assert smith_defect_linear(a, star3, g2) \
            == pytest.approx(2.0 * np.sqrt(3.0))

    def test_fold_mismatch(self, g2):
        with pytest.raises(ValueError):
            smith_defect_linear(np.zeros((7, 4)), builtin_vcp("HodgeStar", 4),
                                g2)

    def test_composition_closure(self, star3, g2, rng):
        for _ in range(50):
            b = (0.3 + rng.random()) * random_gray_map(rng, g2, 3)
            a = (0.3 + rng.random()) * random_rotation(rng, 3)
            assert smith_defect_linear(b @ a, star3, g2) <= 1e-10

    def test_conformal_isomorphism_characterization(self, star3, rng):
        # 3x3 preserving maps are exactly positive multiples of rotations
        for _ in range(50):
            c = (0.2 + 2 * rng.random()) * random_rotation(rng, 3)
            assert smith_defect_linear(c, star3, star3) <= 1e-10
        for _ in range(50):
            a = rng.standard_normal((3, 3))
            ok, _ = conformal_test(a, tol=1e-8)
            preserving = smith_defect_linear(a, star3, star3) <= 1e-10
            if preserving:
                assert ok and np.linalg.det(a) > 0
        refl = np.diag([1.0, 1.0, -1.0])
        assert smith_defect_linear(refl, star3, star3) > 0.1

    def test_gray_iff_unit_scale(self, star3, g2, rng):
        gray = random_gray_map(rng, g2, 3)
        assert smith_defect_linear(gray, star3, g2, lam=1.0) <= 1e-12
        scaled = 2.0 * gray
        assert smith_defect_linear(scaled, star3, g2) <= 1e-12
        assert smith_defect_linear(scaled, star3, g2, lam=1.0) > 0.1
        ok, lam = conformal_test(gray)
        assert ok and lam == pytest.approx(1.0)


class TestGeneralizedGap:
    def test_inclusion_and_reversal(self, g2):
        assert generalized_calibration_gap(inclusion_map(), g2) \
            == pytest.approx(0.0, abs=1e-12)
        rev = inclusion_map() @ np.diag([1.0, 1.0, -1.0])
        assert generalized_calibration_gap(rev, g2) == pytest.approx(2.0)

    def test_nonnegative_sweep_and_equivalence(self, star3, g2, rng):
        for _ in range(400):
            a = rng.standard_normal((7, 3))
            gap = generalized_calibration_gap(a, g2)
            assert gap >= -1e-12
            res = smith_defect_linear(a, star3, g2)
            assert (gap <= 1e-10) == (res <= 1e-10)
        for _ in range(100):
            a = (0.4 + rng.random()) * random_gray_map(rng, g2, 3)
            assert generalized_calibration_gap(a, g2) <= 1e-10
            assert smith_defect_linear(a, star3, g2) <= 1e-10


class TestTables:
    def test_roundtrip(self, g2):
        text = dump_table(g2)
        back = load_table(text)
        np.testing.assert_allclose(back.constants, g2.constants, atol=0)
        assert (back.n, back.k) == (7, 2)

    def test_alternate_convention_injection(self, g2):
        # a mirrored convention loads fine and still passes the axioms
        flipped = {k: -v for k, v in vcp.G2_FORM.items()}
        lines = ["7 2 Mirror"]
        for (i, j, k), v in flipped.items():
            lines.append(f"{i+1} {j+1} {k+1} {v!r}")
            lines.append(f"{i+1} {k+1} {j+1} {-v!r}")
            lines.append(f"{j+1} {k+1} {i+1} {v!r}")
        alt = load_table("\n".join(lines))
        orth, metric = axiom_defect(alt, samples=500, seed=0)
        assert orth <= 1e-12 and metric <= 1e-12

    def test_corrupt_table_loads_but_fails_axioms(self, g2):
        text = dump_table(g2)
        lines = text.splitlines()
        parts = lines[1].split()
        parts[-1] = repr(-float(parts[-1]))
        lines[1] = " ".join(parts)
        bad = load_table("\n".join(lines))
        _, metric = axiom_defect(bad, samples=200, seed=0)
        assert metric > 0.1
