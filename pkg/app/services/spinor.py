"""Spinor word representations and their geometric transformations.

Word-level transforms act one-sidedly on spinors (``R psi``), which keeps the
sign flip of a 2π turn. Grade-1 probes are rotated two-sidedly (``R v R†``).
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import ArgumentError
from app.schemas.schemas import OrbitRow, PositionalConfig, TransformKind, TransformSpec
from app.services.ga_core import (
    AlgebraSignature,
    Multivector,
    basis_blade,
    even_part,
    exp_bivector,
    geometric_product,
    grade_involution,
    grade_project,
    inverse,
    is_even,
    is_homogeneous,
    norm_squared,
    reverse,
    scalar,
    scalar_part,
)

logger = logging.getLogger(__name__)


def _check_same(*items: Multivector) -> None:
    sig = items[0].sig
    for item in items[1:]:
        if item.sig != sig:
            raise ArgumentError(f"signature mismatch: {sig} vs {item.sig}")


def check_unit_bivector(plane: Multivector, tol: Optional[float] = None) -> float:
    """Return plane² (≈ -1 circular, ≈ +1 hyperbolic) or raise."""
    tol = settings.UNIT_TOLERANCE if tol is None else tol
    if plane.sig.n < 2 or not is_homogeneous(plane, 2):
        raise ArgumentError("rotation plane must be a bivector")
    square = geometric_product(plane, plane)
    s = scalar_part(square)
    if np.max(np.abs(square.coeffs[1:])) > tol or abs(abs(s) - 1.0) > tol:
        raise ArgumentError(f"rotation plane must be a unit simple bivector, plane² = {s:.6g}")
    return s


def check_unit_vector(axis: Multivector, tol: Optional[float] = None) -> float:
    tol = settings.UNIT_TOLERANCE if tol is None else tol
    if not is_homogeneous(axis, 1):
        raise ArgumentError("reflection axis must be a grade-1 vector")
    s = norm_squared(axis)
    if abs(abs(s) - 1.0) > tol:
        raise ArgumentError(f"reflection axis must be unit, norm² = {s:.6g}")
    return s


def check_rotor(R: Multivector, tol: Optional[float] = None) -> None:
    tol = settings.UNIT_TOLERANCE if tol is None else tol
    if not is_even(R):
        raise ArgumentError("rotor must be even-grade")
    if abs(norm_squared(R) - 1.0) > tol:
        raise ArgumentError(f"rotor must be unit, norm² = {norm_squared(R):.12g}")


def is_rotor(R: Multivector, tol: Optional[float] = None) -> bool:
    try:
        check_rotor(R, tol)
    except ArgumentError:
        return False
    return True


def make_rotor(plane: Multivector, theta: float) -> Multivector:
    """R = exp(-(θ/2) B) for a unit bivector B."""
    check_unit_bivector(plane)
    return exp_bivector(plane * (-theta / 2.0))


def sandwich(R: Multivector, v: Multivector) -> Multivector:
    """R v R⁻¹ with R⁻¹ = R† for a unit rotor."""
    _check_same(R, v)
    check_rotor(R)
    return geometric_product(geometric_product(R, v), reverse(R))


def reflect(axis: Multivector, v: Multivector) -> Multivector:
    """n v̂ n⁻¹: -n v n⁻¹ on vectors, n ψ n⁻¹ on even spinors."""
    _check_same(axis, v)
    check_unit_vector(axis)
    return geometric_product(geometric_product(axis, grade_involution(v)), inverse(axis))


def apply_one_sided(R: Multivector, psi: Multivector) -> Multivector:
    _check_same(R, psi)
    return geometric_product(R, psi)


def apply_versor(V: Multivector, x: Multivector) -> Multivector:
    """Versor action: V x V⁻¹ for even versors, V x̂ V⁻¹ for odd ones."""
    _check_same(V, x)
    operand = x if is_even(V) else grade_involution(x)
    return geometric_product(geometric_product(V, operand), inverse(V))


def versor_parity(V: Multivector) -> int:
    """0 for even versors, 1 for odd versors."""
    if is_even(V):
        return 0
    if not np.any(even_part(V).coeffs):
        return 1
    raise ArgumentError("mixed-parity multivector is not a versor")


def transform_versor(spec: TransformSpec) -> Multivector:
    if spec.kind == TransformKind.ROTATION:
        return make_rotor(spec.plane, spec.angle)
    check_unit_vector(spec.axis)
    return spec.axis


def compose(transforms: Sequence[TransformSpec]) -> Multivector:
    """Product of versors; the rightmost transform applies first."""
    transforms = list(transforms)
    if not transforms:
        raise ArgumentError("compose needs at least one transform")
    versors = [transform_versor(spec) for spec in transforms]
    _check_same(*versors)
    result = versors[0]
    for versor in versors[1:]:
        result = geometric_product(result, versor)
    return result


# -- positions ----------------------------------------------------------------

def default_positional_config(sig: AlgebraSignature) -> PositionalConfig:
    """Disjoint circular planes: consecutive positive indices, then consecutive negative ones."""
    planes: List[Tuple[int, int]] = []
    for start, count in ((1, sig.p), (sig.p + 1, sig.q)):
        for k in range(count // 2):
            planes.append((start + 2 * k, start + 2 * k + 1))
    return PositionalConfig(planes=planes)


def plane_blade(sig: AlgebraSignature, plane: Tuple[int, int]) -> Multivector:
    i, j = plane
    if j > sig.n:
        raise ArgumentError(f"plane e{i}{j} does not exist in {sig}")
    return basis_blade(sig, (1 << (i - 1)) | (1 << (j - 1)))


def positional_rotor(p: int, cfg: PositionalConfig, sig: AlgebraSignature) -> Multivector:
    """R_p = prod_k rotor(plane_k, p * base * decay^k); R_0 = 1."""
    if p < 0:
        raise ArgumentError(f"position must be non-negative, got {p}")
    result = scalar(sig, 1.0)
    for k, plane in enumerate(cfg.planes):
        theta = p * cfg.base_frequency * cfg.frequency_decay ** k
        result = geometric_product(result, make_rotor(plane_blade(sig, plane), theta))
    return result


def apply_position(R_p: Multivector, psi: Multivector) -> Multivector:
    _check_same(R_p, psi)
    return geometric_product(R_p, psi)


def phrase_embedding(spinors: Sequence[Multivector]) -> Multivector:
    spinors = list(spinors)
    if not spinors:
        raise ArgumentError("phrase_embedding needs at least one spinor")
    _check_same(*spinors)
    result = spinors[0]
    for psi in spinors[1:]:
        result = geometric_product(result, psi)
    return result


# -- analogies ----------------------------------------------------------------

def similarity(a: Multivector, b: Multivector) -> float:
    """<a† b>_0 normalized by both norms."""
    _check_same(a, b)
    denom = math.sqrt(abs(norm_squared(a) * norm_squared(b)))
    if denom == 0.0:
        return 0.0
    return scalar_part(geometric_product(reverse(a), b)) / denom


def rank_by_similarity(query: Multivector, vocab_spinors: Sequence[Multivector]) -> List[Tuple[int, float]]:
    if len(vocab_spinors) == 0:
        raise ArgumentError("vocabulary is empty")
    scored = [(index, similarity(query, psi)) for index, psi in enumerate(vocab_spinors)]
    return sorted(scored, key=lambda item: (-item[1], item[0]))


def analogy_apply(R: Multivector, psi_source: Multivector,
                  vocab_spinors: Sequence[Multivector]) -> List[Tuple[int, float]]:
    """Rank vocabulary tokens against R psi_source; ties go to the lower index."""
    check_rotor(R)
    return rank_by_similarity(apply_one_sided(R, psi_source), vocab_spinors)


def canonical_rotor(R: Multivector) -> Multivector:
    """Fix the global sign so that the scalar part is non-negative."""
    return -R if scalar_part(R) < 0 else R


# -- logarithm and interpolation ------------------------------------------------

def bivector_log(R: Multivector, tol: Optional[float] = None) -> Multivector:
    """B with exp(B) = R for a rotor R = a + B' whose bivector part squares to a negative scalar."""
    tol = settings.UNIT_TOLERANCE if tol is None else tol
    check_rotor(R, tol)
    a = scalar_part(R)
    part = grade_project(R, 2) if R.sig.n >= 2 else scalar(R.sig, 0.0)
    if np.max(np.abs((R - part).coeffs[1:])) > tol:
        raise ArgumentError("rotor has grade-4 content; no simple logarithm")
    if not np.any(part.coeffs):
        if a > 0:
            return part
        raise ArgumentError("-1 has no unique logarithm plane")
    square = geometric_product(part, part)
    s = scalar_part(square)
    if s >= 0 or np.max(np.abs(square.coeffs[1:])) > tol:
        raise ArgumentError("rotor log is only defined for circular (simple) rotors")
    size = math.sqrt(-s)
    angle = math.atan2(size, a)
    return part * (angle / size)


def rotor_log(R: Multivector) -> Tuple[Optional[Multivector], float]:
    """(plane, θ) with R = make_rotor(plane, θ) and θ in [0, 2π]."""
    check_rotor(R)
    if R.sig.n < 2 or not np.any(grade_project(R, 2).coeffs):
        return (None, 0.0) if scalar_part(R) > 0 else (None, 2.0 * math.pi)
    B = bivector_log(R)
    half = math.sqrt(-scalar_part(geometric_product(B, B)))
    return -B / half, 2.0 * half


def interpolate_rotor(R: Multivector, t: float) -> Multivector:
    """exp(t log R): the fraction t of the transformation R."""
    return exp_bivector(bivector_log(R) * t)


def orbit_table(plane: Multivector, psi: Multivector, probe: Multivector, steps: int,
                tol: float = 1e-9) -> List[OrbitRow]:
    """One-sided vs two-sided orbits over a 720° turn in ``steps`` increments."""
    if steps < 1:
        raise ArgumentError(f"steps must be positive, got {steps}")
    _check_same(plane, psi, probe)
    rows = []
    for step in range(steps + 1):
        theta = 4.0 * math.pi * step / steps
        R = make_rotor(plane, theta)
        moved = apply_one_sided(R, psi)
        if moved.allclose(psi, tol):
            sign = 1
        elif moved.allclose(-psi, tol):
            sign = -1
        else:
            sign = 0
        rows.append(OrbitRow(
            step=step,
            angle_deg=math.degrees(theta),
            one_sided_sign=sign,
            two_sided_identity=sandwich(R, probe).allclose(probe, tol),
        ))
    return rows
