import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings

from app.core.errors import ArgumentError, NumericError
from app.services.ga_core import (
    AlgebraSignature,
    Multivector,
    basis_blade,
    basis_vector,
    bivector,
    bivector_masks,
    blade_name,
    blade_product,
    blade_tables,
    canonical_order,
    clifford_conjugate,
    commutator,
    even_part,
    exp_bivector,
    exp_scaled_series,
    exp_series,
    geometric_product,
    grade_involution,
    grade_project,
    grades,
    inner_product,
    inverse,
    is_even,
    linear_combine,
    norm_squared,
    outer_product,
    reverse,
    scalar,
    scalar_part,
    vector,
    zero,
)
from tests.conftest import SIGNATURES, Builders, seeds, signatures

CASES = 1000


def max_error(a: Multivector, b: Multivector) -> float:
    return float(np.max(np.abs(a.coeffs - b.coeffs)))


class TestSignature:
    @pytest.mark.parametrize("p, q", [(0, 0), (-1, 2), (13, 0), (6, 7)])
    def test_rejects_out_of_range(self, p, q):
        with pytest.raises(ArgumentError):
            AlgebraSignature(p, q)

    def test_dimensions(self):
        sig = AlgebraSignature(1, 3)
        assert (sig.n, sig.dim, sig.even_dim, sig.bivector_count) == (4, 16, 8, 6)
        assert str(sig) == "Cl(1,3)"
        assert not sig.is_euclidean

    def test_metric(self):
        sig = AlgebraSignature(1, 2)
        assert [sig.metric(k) for k in range(3)] == [1, -1, -1]


class TestBlades:
    def test_canonical_order_sorts_by_grade_then_mask(self):
        assert canonical_order(AlgebraSignature(3)) == [0, 1, 2, 4, 3, 5, 6, 7]

    def test_bivector_serialization_order(self):
        names = [blade_name(m) for m in bivector_masks(AlgebraSignature(4))]
        assert names == ["e12", "e13", "e23", "e14", "e24", "e34"]

    @pytest.mark.parametrize("mask, name", [(0, "1"), (1, "e1"), (5, "e13"), (7, "e123"), (1 | 1 << 9, "e1_10")])
    def test_blade_name(self, mask, name):
        assert blade_name(mask) == name

    def test_anticommuting_basis_vectors(self, cl3):
        assert blade_product(cl3, 0b001, 0b010) == (1, 0b011)
        assert blade_product(cl3, 0b010, 0b001) == (-1, 0b011)

    @pytest.mark.parametrize("p, q, square", [(1, 0, 1), (0, 1, -1)])
    def test_basis_vector_squares(self, p, q, square):
        assert blade_product(AlgebraSignature(p, q), 1, 1) == (square, 0)

    def test_bivector_squares_to_minus_one(self, cl2):
        assert blade_product(cl2, 0b11, 0b11) == (-1, 0)

    def test_mask_out_of_range(self, cl2):
        with pytest.raises(ArgumentError):
            blade_product(cl2, 4, 1)

    @pytest.mark.parametrize("p, q", [(p, q) for p in range(5) for q in range(5) if 1 <= p + q <= 4])
    def test_geometric_product_matches_blade_product(self, p, q):
        sig = AlgebraSignature(p, q)
        for a, b in product(range(sig.dim), repeat=2):
            sign, blade = blade_product(sig, a, b)
            result = geometric_product(basis_blade(sig, a), basis_blade(sig, b))
            assert result.allclose(basis_blade(sig, blade, float(sign)), 0.0)

    def test_tables_are_cached_and_read_only(self, cl3):
        tables = blade_tables(cl3)
        assert tables is blade_tables(AlgebraSignature(3, 0))
        with pytest.raises(ValueError):
            tables.signs[0, 0] = 5.0


class TestMultivector:
    def test_coefficients_are_copied_and_frozen(self, cl2):
        raw = np.zeros(4)
        mv = Multivector(cl2, raw)
        raw[0] = 1.0
        assert mv[0] == 0.0
        with pytest.raises(ValueError):
            mv.coeffs[0] = 2.0

    def test_rejects_wrong_shape(self, cl2):
        with pytest.raises(ArgumentError):
            Multivector(cl2, [1.0, 2.0])

    def test_rejects_non_finite(self, cl2):
        with pytest.raises(NumericError):
            Multivector(cl2, [np.nan, 0, 0, 0])

    def test_signature_mismatch(self, cl2, cl3):
        with pytest.raises(ArgumentError):
            geometric_product(scalar(cl2, 1.0), scalar(cl3, 1.0))
        with pytest.raises(ArgumentError):
            linear_combine([(1.0, scalar(cl2, 1.0)), (1.0, scalar(cl3, 1.0))])

    def test_operators(self, cl3):
        e1, e2 = basis_vector(cl3, 1), basis_vector(cl3, 2)
        e12 = basis_blade(cl3, 0b011)
        assert (e1 * e2).allclose(e12)
        assert (e1 ^ e2).allclose(e12)
        assert (e1 ^ e1).allclose(zero(cl3))
        assert (e1 | e12).allclose(e2)
        assert (~e12).allclose(-e12)
        assert (2.0 * e1 - e1).allclose(e1)
        assert (e1 + 1.0)[0] == 1.0
        assert (e12 / 2.0)[0b011] == 0.5

    def test_linear_combine_requires_terms(self):
        with pytest.raises(ArgumentError):
            linear_combine([])

    def test_grades(self, cl3):
        A = scalar(cl3, 2.0) + basis_blade(cl3, 0b101)
        assert grades(A) == [0, 2]
        assert is_even(A)
        assert grade_project(A, 2).allclose(basis_blade(cl3, 0b101))

    @pytest.mark.parametrize("k", [-1, 4])
    def test_grade_out_of_range(self, cl3, k):
        with pytest.raises(ArgumentError):
            grade_project(scalar(cl3, 1.0), k)

    def test_vector_constructor_checks_length(self, cl3):
        with pytest.raises(ArgumentError):
            vector(cl3, [1.0, 2.0])


class TestIdentities:
    @pytest.mark.parametrize("sig", SIGNATURES, ids=str)
    def test_metric_law(self, sig, build):
        quadratic = np.array([sig.metric(k) for k in range(sig.n)], dtype=float)
        for _ in range(CASES):
            v = build.vector(sig)
            values = v.coeffs[[1 << k for k in range(sig.n)]]
            assert max_error(v * v, scalar(sig, float(quadratic @ values ** 2))) <= 1e-10

    @pytest.mark.parametrize("sig", SIGNATURES, ids=str)
    def test_associativity(self, sig, build):
        for _ in range(CASES):
            A, B, C = build.multivector(sig), build.multivector(sig), build.multivector(sig)
            assert max_error((A * B) * C, A * (B * C)) <= 1e-10

    @pytest.mark.parametrize("sig", SIGNATURES, ids=str)
    def test_reverse_is_anti_automorphism(self, sig, build):
        for _ in range(CASES):
            A, B = build.multivector(sig), build.multivector(sig)
            assert max_error(reverse(A * B), reverse(B) * reverse(A)) <= 1e-10

    @pytest.mark.parametrize("sig", SIGNATURES, ids=str)
    def test_reverse_grade_signs(self, sig):
        for mask in range(sig.dim):
            k = bin(mask).count("1")
            expected = (-1) ** (k * (k - 1) // 2)
            assert reverse(basis_blade(sig, mask))[mask] == expected

    @pytest.mark.parametrize("sig", SIGNATURES, ids=str)
    def test_even_subalgebra_closure(self, sig, build):
        for _ in range(CASES):
            assert is_even(build.even(sig) * build.even(sig))

    @hypothesis_settings(max_examples=50, deadline=None)
    @given(sig=signatures, seed=seeds)
    def test_distributivity(self, sig, seed):
        build = Builders(np.random.default_rng(seed))
        A, B, C = build.multivector(sig), build.multivector(sig), build.multivector(sig)
        assert max_error(A * (B + C), A * B + A * C) <= 1e-10

    @hypothesis_settings(max_examples=50, deadline=None)
    @given(sig=signatures, seed=seeds)
    def test_outer_and_inner_parts_of_vector_products(self, sig, seed):
        build = Builders(np.random.default_rng(seed))
        u, v = build.vector(sig), build.vector(sig)
        assert max_error(u * v, inner_product(u, v) + outer_product(u, v)) <= 1e-10
        assert max_error(commutator(u, v), outer_product(u, v)) <= 1e-10

    def test_involutions(self, cl3, build):
        A = build.multivector(cl3)
        assert max_error(grade_involution(grade_involution(A)), A) == 0.0
        assert max_error(clifford_conjugate(A), grade_involution(reverse(A))) == 0.0
        assert max_error(even_part(A), grade_project(A, 0) + grade_project(A, 2)) <= 1e-15

    def test_euclidean_norm_is_coefficient_norm(self, cl3, build):
        A = build.multivector(cl3)
        assert norm_squared(A) == pytest.approx(float(np.sum(A.coeffs ** 2)), abs=1e-12)


class TestInverse:
    def test_vector_inverse(self, cl13, build):
        v = build.vector(cl13)
        assert (v * inverse(v)).allclose(scalar(cl13, 1.0), 1e-10)

    def test_rotor_inverse_is_reverse(self, cl3, build):
        R = build.rotor(cl3)
        assert inverse(R).allclose(reverse(R), 1e-12)

    def test_non_versor(self):
        sig = AlgebraSignature(1, 0)
        with pytest.raises(ArgumentError):
            inverse(scalar(sig, 1.0) + basis_vector(sig, 1))


class TestExponential:
    def test_zero(self, cl3):
        assert exp_bivector(zero(cl3)).allclose(scalar(cl3, 1.0), 0.0)

    def test_rejects_other_grades(self, cl3):
        with pytest.raises(ArgumentError):
            exp_bivector(basis_vector(cl3, 1))

    def test_circular_closed_form(self, cl3):
        theta = 0.7
        R = exp_bivector(bivector(cl3, [theta, 0.0, 0.0]))
        assert R[0] == pytest.approx(math.cos(theta))
        assert R[0b011] == pytest.approx(math.sin(theta))

    def test_hyperbolic_closed_form(self):
        sig = AlgebraSignature(1, 1)
        B = basis_blade(sig, 0b11, 0.8)
        assert scalar_part(B * B) == pytest.approx(0.64)
        R = exp_bivector(B)
        assert R[0] == pytest.approx(math.cosh(0.8))
        assert R[0b11] == pytest.approx(math.sinh(0.8))

    @pytest.mark.parametrize("sig", [AlgebraSignature(3, 0), AlgebraSignature(1, 3), AlgebraSignature(2, 2)], ids=str)
    def test_branches_agree_with_series(self, sig, build, rng):
        for _ in range(200):
            B = outer_product(build.vector(sig), build.vector(sig))
            # keep both |B| and every coefficient within 3
            size = max(math.sqrt(abs(scalar_part(B * B))), float(np.max(np.abs(B.coeffs))))
            B = B * (rng.uniform(0.0, 3.0) / size)
            assert max_error(exp_bivector(B), exp_series(B, 30)) <= 1e-9

    def test_non_simple_bivector_uses_series(self):
        sig = AlgebraSignature(4, 0)
        e12, e34 = basis_blade(sig, 0b0011, 1.2), basis_blade(sig, 0b1100, -0.4)
        expected = exp_bivector(e12) * exp_bivector(e34)
        assert max_error(exp_bivector(e12 + e34), expected) <= 1e-9

    def test_scaled_series_matches_long_series(self, cl3, build):
        B = build.bivector(cl3, 2.0)
        assert max_error(exp_scaled_series(B), exp_series(B, 60)) <= 1e-10

    def test_euclidean_exponential_is_unit_rotor(self, cl3, build):
        for _ in range(100):
            R = exp_bivector(build.bivector(cl3, 3.0))
            assert is_even(R)
            assert norm_squared(R) == pytest.approx(1.0, abs=1e-9)
