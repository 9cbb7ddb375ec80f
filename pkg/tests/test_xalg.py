from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcplab import xalg
from vcplab.xalg import (Multivector, conformal_test, exterior_power,
                         frobenius, hadamard_gap, wedge)


def basis(n, *idx):
    return Multivector.basis(n, idx)


class TestWedge:
    def test_basis_bivector(self):
        e1 = basis(3, 0)
        e2 = basis(3, 1)
        out = wedge(e1, e2)
        np.testing.assert_allclose(out.coeffs, [1.0, 0.0, 0.0])

    def test_repeated_factor_vanishes(self):
        e1 = basis(3, 0)
        assert wedge(e1, e1).norm() == 0.0

    def test_bilinear_with_antisymmetry(self):
        e1, e2 = basis(3, 0), basis(3, 1)
        out = wedge(e1 + e2, e2)
        np.testing.assert_allclose(out.coeffs, wedge(e1, e2).coeffs)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            wedge(basis(3, 0), basis(4, 1))

    def test_degree_overflow(self):
        with pytest.raises(ValueError):
            wedge(wedge(basis(3, 0), basis(3, 1)),
                  wedge(basis(3, 0), basis(3, 2)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 1_000_000))
    def test_graded_anticommutativity(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(3, 8))
        k1 = int(r.integers(1, 3))
        k2 = int(r.integers(1, min(3, n - k1) + 1))
        a = Multivector(n, k1, r.standard_normal(len(xalg.lex_subsets(n, k1))))
        b = Multivector(n, k2, r.standard_normal(len(xalg.lex_subsets(n, k2))))
        ab = wedge(a, b)
        ba = wedge(b, a)
        sign = (-1.0) ** (k1 * k2)
        np.testing.assert_allclose(ab.coeffs, sign * ba.coeffs, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 1_000_000))
    def test_wedge_matches_decomposable_minors(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(3, 9))
        vs = r.standard_normal((3, n))
        from vcplab.vcp import decomposable_coeffs
        step = wedge(wedge(Multivector.vector(vs[0]),
                           Multivector.vector(vs[1])),
                     Multivector.vector(vs[2]))
        np.testing.assert_allclose(step.coeffs, decomposable_coeffs(vs),
                                   atol=1e-12)


class TestExteriorPower:
    def test_identity(self):
        out = exterior_power(np.eye(3), 2)
        np.testing.assert_allclose(out, np.eye(3))

    def test_scalar_map(self):
        out = exterior_power(2.0 * np.eye(3), 2)
        np.testing.assert_allclose(out, 4.0 * np.eye(3))

    def test_against_direct_evaluation(self, rng):
        # oracle: evaluate A v_i ^ A v_j on all basis pairs directly
        a = rng.standard_normal((3, 3))
        out = exterior_power(a, 2)
        from vcplab.vcp import decomposable_coeffs
        cols = []
        for (i, j) in xalg.lex_subsets(3, 2):
            cols.append(decomposable_coeffs(np.array([a[:, i], a[:, j]])))
        oracle = np.array(cols).T
        np.testing.assert_allclose(out, oracle, atol=1e-12)

    def test_functorial(self, rng):
        for _ in range(25):
            a = rng.standard_normal((5, 4))
            b = rng.standard_normal((4, 3))
            lhs = exterior_power(a @ b, 2)
            rhs = exterior_power(a, 2) @ exterior_power(b, 2)
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_top_power_is_determinant(self, rng):
        a = rng.standard_normal((4, 4))
        np.testing.assert_allclose(exterior_power(a, 4)[0, 0],
                                   np.linalg.det(a), atol=1e-12)

    def test_degree_out_of_range(self):
        with pytest.raises(ValueError):
            exterior_power(np.eye(3), 4)


class TestNorms:
    def test_frobenius_examples(self):
        assert frobenius(np.eye(3)) == pytest.approx(np.sqrt(3))
        assert frobenius(np.diag([1.0, 2.0, 2.0])) == pytest.approx(3.0)
        assert frobenius(2 * np.eye(3)) == pytest.approx(2 * np.sqrt(3))

    def test_frobenius_equals_column_norms(self, rng):
        a = rng.standard_normal((7, 3))
        assert frobenius(a) == pytest.approx(
            np.sqrt(sum(np.linalg.norm(a[:, j]) ** 2 for j in range(3))))


class TestConformal:
    def test_scaled_identity(self):
        ok, lam = conformal_test(2.0 * np.eye(3))
        assert ok and lam == pytest.approx(2.0)

    def test_distinct_singular_values(self):
        ok, lam = conformal_test(np.diag([1.0, 2.0]))
        assert not ok
        assert lam == pytest.approx(np.sqrt(5.0 / 2.0))

    def test_scaled_isometric_injection(self):
        inc = np.zeros((7, 3))
        inc[:3, :3] = np.eye(3)
        ok, lam = conformal_test(3.0 * inc)
        assert ok and lam == pytest.approx(3.0)

    def test_zero_map_flagged_degenerate(self):
        ok, lam = conformal_test(np.zeros((7, 3)))
        assert not ok and lam == 0.0

    def test_composition_scale_law(self, rng):
        # |AB| = |A||B|/sqrt(n) for conformal A: R^n -> R^m, B: R^n -> R^n
        from vcplab.vcp import random_orthonormal_frame, random_rotation
        for _ in range(50):
            a = 1.7 * random_orthonormal_frame(rng, 7, 3).T
            b = 0.8 * random_rotation(rng, 3)
            lhs = frobenius(a @ b)
            rhs = frobenius(a) * frobenius(b) / np.sqrt(3)
            assert lhs == pytest.approx(rhs, abs=1e-12)


class TestHadamard:
    def test_conformal_gap_zero(self, rng):
        from vcplab.vcp import random_orthonormal_frame
        a = 2.5 * random_orthonormal_frame(rng, 7, 3).T
        assert abs(hadamard_gap(a, 2)) < 1e-10
        assert abs(hadamard_gap(a, 3)) < 1e-10

    def test_diag_example(self):
        # oracle: direct determinant and norm evaluation
        a = np.diag([1.0, 2.0, 3.0])
        oracle = (1.0 / 27.0) * frobenius(a) ** 6 - np.linalg.det(a) ** 2
        assert oracle == pytest.approx(2744.0 / 27.0 - 36.0)
        assert hadamard_gap(a, 3) == pytest.approx(oracle, abs=1e-10)

    def test_gap_nonnegative_sweep(self, rng):
        # oracle route: trace identities for the elementary symmetric sums
        worst = np.inf
        for _ in range(1000):
            a = rng.standard_normal((7, 3))
            for r in (2, 3):
                g = hadamard_gap(a, r)
                worst = min(worst, g)
                b = a.T @ a
                tr, tr2 = np.trace(b), np.trace(b @ b)
                e_r = ((tr ** 2 - tr2) / 2.0 if r == 2
                       else np.linalg.det(b))
                oracle = 3.0 ** (-r) * comb(3, r) * tr ** r - e_r
                assert g == pytest.approx(oracle, rel=1e-9, abs=1e-9)
        assert worst >= -1e-12

    def test_hadamard_vectors(self, rng):
        from vcplab.vcp import decomposable_coeffs, random_orthonormal_frame
        for _ in range(200):
            vs = rng.standard_normal((3, 5))
            lhs = np.linalg.norm(decomposable_coeffs(vs))
            rhs = np.prod(np.linalg.norm(vs, axis=1))
            assert lhs <= rhs + 1e-12
        # equality on orthogonal frames
        frame = 1.3 * random_orthonormal_frame(rng, 6, 3)
        lhs = np.linalg.norm(decomposable_coeffs(frame))
        rhs = np.prod(np.linalg.norm(frame, axis=1))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_top_norm_bound_with_equality_iff_conformal(self, rng):
        from vcplab.vcp import random_rotation
        a = rng.standard_normal((3, 3))
        bound = 3.0 ** -1.5 * frobenius(a) ** 3
        assert abs(exterior_power(a, 3)[0, 0]) <= bound + 1e-12
        c = 1.4 * random_rotation(rng, 3)
        assert abs(exterior_power(c, 3)[0, 0]) == pytest.approx(
            3.0 ** -1.5 * frobenius(c) ** 3, rel=1e-12)

    def test_degree_range(self):
        with pytest.raises(ValueError):
            hadamard_gap(np.eye(3), 1)
