import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.errors import ArgumentError
from app.schemas.schemas import PositionalConfig, TransformSpec
from app.services.ga_core import (
    AlgebraSignature,
    basis_blade,
    basis_vector,
    bivector,
    exp_bivector,
    geometric_product,
    norm_squared,
    scalar,
    vector,
)
from app.services.spinor import (
    analogy_apply,
    apply_one_sided,
    apply_versor,
    bivector_log,
    canonical_rotor,
    compose,
    default_positional_config,
    interpolate_rotor,
    make_rotor,
    orbit_table,
    phrase_embedding,
    plane_blade,
    positional_rotor,
    rank_by_similarity,
    reflect,
    rotor_log,
    sandwich,
    similarity,
    versor_parity,
)


def plane_matrix(n: int, i: int, j: int, theta: float) -> np.ndarray:
    """Rotation by theta turning e_i towards e_j (0-based indices)."""
    m = np.eye(n)
    m[i, i] = m[j, j] = math.cos(theta)
    m[j, i] = math.sin(theta)
    m[i, j] = -math.sin(theta)
    return m


def coords(v, n):
    return v.coeffs[[1 << k for k in range(n)]]


class TestRotations:
    @pytest.mark.parametrize("n", [2, 3])
    def test_sandwich_matches_rotation_matrix(self, n, rng):
        sig = AlgebraSignature(n)
        pairs = [(i, j) for j in range(n) for i in range(j)]
        for _ in range(100):
            i, j = pairs[rng.integers(len(pairs))]
            theta = rng.uniform(-2 * math.pi, 2 * math.pi)
            values = rng.normal(size=n)
            R = make_rotor(basis_blade(sig, (1 << i) | (1 << j)), theta)
            rotated = sandwich(R, vector(sig, values))
            assert np.max(np.abs(coords(rotated, n) - plane_matrix(n, i, j, theta) @ values)) <= 1e-9

    def test_quarter_turn(self, cl2):
        R = make_rotor(plane_blade(cl2, (1, 2)), math.pi / 2)
        assert sandwich(R, basis_vector(cl2, 1)).allclose(basis_vector(cl2, 2), 1e-12)

    def test_rotor_is_unit_and_even(self, cl3):
        R = make_rotor(plane_blade(cl3, (1, 3)), 1.1)
        assert norm_squared(R) == pytest.approx(1.0, abs=1e-12)

    def test_non_unit_plane(self, cl3):
        with pytest.raises(ArgumentError):
            make_rotor(basis_blade(cl3, 0b011, 2.0), 1.0)

    def test_non_simple_plane(self):
        sig = AlgebraSignature(4)
        with pytest.raises(ArgumentError):
            make_rotor(basis_blade(sig, 0b0011) + basis_blade(sig, 0b1100), 1.0)

    def test_sandwich_requires_unit_rotor(self, cl3):
        with pytest.raises(ArgumentError):
            sandwich(scalar(cl3, 2.0), basis_vector(cl3, 1))


class TestSpinorPeriod:
    def test_one_sided_action_has_720_degree_period(self, cl3, build):
        plane = plane_blade(cl3, (1, 2))
        psi = build.rotor(cl3)
        assert apply_one_sided(make_rotor(plane, 2 * math.pi), psi).allclose(-psi, 1e-9)
        assert apply_one_sided(make_rotor(plane, 4 * math.pi), psi).allclose(psi, 1e-9)

    def test_two_sided_action_has_360_degree_period(self, cl3):
        v = basis_vector(cl3, 1) + basis_vector(cl3, 3)
        R = make_rotor(plane_blade(cl3, (1, 2)), 2 * math.pi)
        assert sandwich(R, v).allclose(v, 1e-9)

    def test_orbit_table(self, cl2):
        plane = plane_blade(cl2, (1, 2))
        rows = orbit_table(plane, make_rotor(plane, 0.3), basis_vector(cl2, 1), 8)
        assert [r.one_sided_sign for r in rows] == [1, 0, 0, 0, -1, 0, 0, 0, 1]
        assert [r.two_sided_identity for r in rows] == [True, False, False, False, True,
                                                        False, False, False, True]
        assert rows[-1].angle_deg == pytest.approx(720.0)

    def test_orbit_table_needs_steps(self, cl2):
        with pytest.raises(ArgumentError):
            orbit_table(plane_blade(cl2, (1, 2)), scalar(cl2, 1.0), basis_vector(cl2, 1), 0)


class TestReflections:
    def test_reflect_vector(self, cl3):
        e1, e2 = basis_vector(cl3, 1), basis_vector(cl3, 2)
        assert reflect(e1, e1).allclose(-e1, 1e-12)
        assert reflect(e1, e2).allclose(e2, 1e-12)

    def test_reflect_requires_unit_axis(self, cl3):
        with pytest.raises(ArgumentError):
            reflect(basis_vector(cl3, 1) * 2.0, basis_vector(cl3, 2))

    def test_two_reflections_rotate_by_twice_the_angle(self, cl3, build):
        phi = 0.4
        n1 = basis_vector(cl3, 1)
        n2 = vector(cl3, [math.cos(phi), math.sin(phi), 0.0])
        V = compose([TransformSpec.reflection(n2), TransformSpec.reflection(n1)])
        assert versor_parity(V) == 0
        v = build.vector(cl3)
        expected = sandwich(make_rotor(plane_blade(cl3, (1, 2)), 2 * phi), v)
        assert apply_versor(V, v).allclose(expected, 1e-10)
        assert apply_versor(V, v).allclose(reflect(n2, reflect(n1, v)), 1e-10)

    def test_compose_applies_rightmost_first(self, cl3):
        plane12, plane23 = plane_blade(cl3, (1, 2)), plane_blade(cl3, (2, 3))
        V = compose([TransformSpec.rotation(plane23, math.pi / 2), TransformSpec.rotation(plane12, math.pi / 2)])
        # e1 -> e2 under the first turn, then e2 -> e3
        assert sandwich(V, basis_vector(cl3, 1)).allclose(basis_vector(cl3, 3), 1e-12)

    def test_odd_versor(self, cl3):
        assert versor_parity(compose([TransformSpec.reflection(basis_vector(cl3, 2))])) == 1

    def test_compose_empty(self):
        with pytest.raises(ArgumentError):
            compose([])

    def test_transform_spec_needs_operand(self):
        with pytest.raises(ValidationError):
            TransformSpec(kind="rotation", angle=1.0)


class TestPositions:
    @pytest.mark.parametrize("p, q, planes", [
        (3, 0, [(1, 2)]),
        (4, 0, [(1, 2), (3, 4)]),
        (1, 3, [(2, 3)]),
        (1, 1, []),
    ])
    def test_default_planes(self, p, q, planes):
        assert default_positional_config(AlgebraSignature(p, q)).planes == planes

    def test_overlapping_planes_rejected(self):
        with pytest.raises(ValidationError):
            PositionalConfig(planes=[(1, 2), (2, 3)])

    def test_position_zero_is_identity(self, cl3):
        cfg = default_positional_config(cl3)
        assert positional_rotor(0, cfg, cl3).allclose(scalar(cl3, 1.0), 0.0)

    def test_positions_compose_additively(self):
        sig = AlgebraSignature(4)
        cfg = default_positional_config(sig)
        combined = geometric_product(positional_rotor(2, cfg, sig), positional_rotor(3, cfg, sig))
        assert combined.allclose(positional_rotor(5, cfg, sig), 1e-12)

    def test_negative_position(self, cl3):
        with pytest.raises(ArgumentError):
            positional_rotor(-1, default_positional_config(cl3), cl3)


class TestAnalogies:
    def test_similarity_of_identical_spinors(self, cl3, build):
        psi = build.rotor(cl3)
        assert similarity(psi, psi) == pytest.approx(1.0)
        assert similarity(psi, -psi) == pytest.approx(-1.0)

    def test_ranking_breaks_ties_by_index(self, cl3):
        one = scalar(cl3, 1.0)
        ranking = rank_by_similarity(one, [one, basis_blade(cl3, 0b011), one])
        assert [index for index, _ in ranking] == [0, 2, 1]

    def test_empty_vocabulary(self, cl3):
        with pytest.raises(ArgumentError):
            rank_by_similarity(scalar(cl3, 1.0), [])

    def test_analogy_apply_finds_target(self, cl3, build):
        R = make_rotor(plane_blade(cl3, (1, 2)), math.pi / 3)
        vocab = [build.rotor(cl3) for _ in range(6)]
        vocab.append(geometric_product(R, vocab[2]))
        assert analogy_apply(R, vocab[2], vocab)[0][0] == 6

    def test_canonical_rotor(self, cl3):
        R = make_rotor(plane_blade(cl3, (1, 2)), 3 * math.pi)
        assert canonical_rotor(R)[0] >= 0.0

    def test_phrase_embedding_is_ordered_product(self, cl3, build):
        a, b = build.rotor(cl3), build.rotor(cl3)
        assert phrase_embedding([a, b]).allclose(geometric_product(a, b))
        with pytest.raises(ArgumentError):
            phrase_embedding([])


class TestLogarithm:
    @pytest.mark.parametrize("theta", [0.2, 1.0, 3.0, 5.5])
    def test_rotor_log_inverts_make_rotor(self, cl3, theta):
        plane = plane_blade(cl3, (2, 3))
        found, angle = rotor_log(make_rotor(plane, theta))
        assert angle == pytest.approx(theta)
        assert found.allclose(plane, 1e-9)

    def test_identity_log(self, cl3):
        assert rotor_log(scalar(cl3, 1.0)) == (None, 0.0)
        assert rotor_log(scalar(cl3, -1.0)) == (None, pytest.approx(2 * math.pi))

    def test_bivector_log_round_trip(self, cl3, build):
        R = build.rotor(cl3)
        assert exp_bivector(bivector_log(R)).allclose(R, 1e-10)

    def test_interpolation_halves_the_turn(self, cl3, build):
        R = build.rotor(cl3)
        half = interpolate_rotor(R, 0.5)
        assert geometric_product(half, half).allclose(R, 1e-10)

    def test_minus_one_has_no_plane(self, cl3):
        with pytest.raises(ArgumentError):
            bivector_log(scalar(cl3, -1.0))

    def test_bivector_helper(self, cl3):
        assert bivector(cl3, [1.0, 0.0, 0.0]).allclose(plane_blade(cl3, (1, 2)))
