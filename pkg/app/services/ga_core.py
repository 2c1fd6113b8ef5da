"""Dense Clifford algebra Cl(p, q).

Blades are bitmasks: bit k set means basis vector e_(k+1) is present. The
canonical order sorts blades by grade (popcount), then by bitmask value.
Coefficient arrays are indexed by bitmask, not by canonical position.

The dense geometric product costs O(4^n) multiply-adds per call.
"""
import functools
import logging
import math
from dataclasses import dataclass
from numbers import Real
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import ArgumentError, NumericError

logger = logging.getLogger(__name__)


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def _popcount_array(values: np.ndarray, bits: int) -> np.ndarray:
    total = np.zeros_like(values)
    for k in range(bits):
        total += (values >> k) & 1
    return total


@dataclass(frozen=True)
class AlgebraSignature:
    """The pair (p, q): p basis vectors square to +1, q square to -1."""

    p: int
    q: int = 0

    def __post_init__(self):
        if not isinstance(self.p, int) or not isinstance(self.q, int):
            raise ArgumentError(f"signature entries must be integers, got ({self.p!r}, {self.q!r})")
        if self.p < 0 or self.q < 0:
            raise ArgumentError(f"signature entries must be non-negative, got ({self.p}, {self.q})")
        if not 1 <= self.p + self.q <= settings.MAX_DIMENSION:
            raise ArgumentError(
                f"p + q must lie in [1, {settings.MAX_DIMENSION}], got {self.p + self.q}"
            )

    @property
    def n(self) -> int:
        return self.p + self.q

    @property
    def dim(self) -> int:
        return 1 << self.n

    @property
    def even_dim(self) -> int:
        return 1 << (self.n - 1)

    @property
    def bivector_count(self) -> int:
        return self.n * (self.n - 1) // 2

    @property
    def is_euclidean(self) -> bool:
        return self.q == 0

    def metric(self, index: int) -> int:
        """Square of basis vector ``index`` (0-based)."""
        return 1 if index < self.p else -1

    def __str__(self) -> str:
        return f"Cl({self.p},{self.q})"


def blade_name(mask: int) -> str:
    if mask == 0:
        return "1"
    indices = [k + 1 for k in range(mask.bit_length()) if mask >> k & 1]
    sep = "" if indices[-1] < 10 else "_"
    return "e" + sep.join(str(i) for i in indices)


def canonical_order(sig: AlgebraSignature) -> List[int]:
    return sorted(range(sig.dim), key=lambda mask: (popcount(mask), mask))


def bivector_masks(sig: AlgebraSignature) -> List[int]:
    """Grade-2 blades in serialization order: e12, e13, e23, e14, e24, e34, ..."""
    return [mask for mask in canonical_order(sig) if popcount(mask) == 2]


def even_masks(sig: AlgebraSignature) -> List[int]:
    return [mask for mask in canonical_order(sig) if popcount(mask) % 2 == 0]


def _check_mask(sig: AlgebraSignature, mask) -> int:
    if isinstance(mask, bool) or not isinstance(mask, (int, np.integer)):
        raise ArgumentError(f"blade bitmask must be an integer, got {mask!r}")
    if not 0 <= mask < sig.dim:
        raise ArgumentError(f"blade bitmask {mask} out of range for {sig} (dim {sig.dim})")
    return int(mask)


def _reorder_sign(a: int, b: int) -> int:
    # For every basis vector of b, count the vectors of a it has to pass.
    a >>= 1
    swaps = 0
    while a:
        swaps += popcount(a & b)
        a >>= 1
    return -1 if swaps & 1 else 1


def blade_product(sig: AlgebraSignature, a: int, b: int) -> Tuple[int, int]:
    """Sign and canonical blade of e_a e_b."""
    a = _check_mask(sig, a)
    b = _check_mask(sig, b)
    sign = _reorder_sign(a, b)
    common = a & b
    for k in range(sig.n):
        if common >> k & 1:
            sign *= sig.metric(k)
    return sign, a ^ b


@dataclass(frozen=True)
class BladeTables:
    """Per-signature lookup tables. Arrays are read-only.

    ``signs[i, j]`` is the sign of e_i e_j and ``xor[i, j] = i ^ j``. The
    ``*_gather`` tables are re-indexed by result blade: ``gp_gather[i, k]``
    is the sign of e_i e_(i^k), so that (AB)_k = sum_i a_i b_(i^k) gp_gather[i, k].
    """

    signs: np.ndarray
    xor: np.ndarray
    gp_gather: np.ndarray
    outer_gather: np.ndarray
    inner_gather: np.ndarray
    outer_signs: np.ndarray
    inner_signs: np.ndarray
    grades: np.ndarray
    reverse_signs: np.ndarray
    involution_signs: np.ndarray


@functools.lru_cache(maxsize=None)
def blade_tables(sig: AlgebraSignature) -> BladeTables:
    n, dim = sig.n, sig.dim
    if n >= 10:
        logger.warning("building %dx%d blade tables for %s", dim, dim, sig)
    idx = np.arange(dim, dtype=np.int64)
    left = idx[:, None]
    right = idx[None, :]

    swaps = np.zeros((dim, dim), dtype=np.int64)
    for shift in range(1, n):
        swaps += _popcount_array((left >> shift) & right, n)
    negative_mask = ((1 << sig.q) - 1) << sig.p
    negatives = _popcount_array(left & right & negative_mask, n)
    signs = np.where((swaps + negatives) % 2 == 0, 1.0, -1.0)

    xor = left ^ right
    outer_signs = np.where((left & right) == 0, signs, 0.0)
    inner_signs = np.where((left & right) == left, signs, 0.0)

    def gather(table: np.ndarray) -> np.ndarray:
        return np.take_along_axis(table, xor, axis=1)

    grades = _popcount_array(idx, n)
    reverse_signs = np.where((grades * (grades - 1) // 2) % 2 == 0, 1.0, -1.0)
    involution_signs = np.where(grades % 2 == 0, 1.0, -1.0)

    arrays = [signs, xor, gather(signs), gather(outer_signs), gather(inner_signs),
              outer_signs, inner_signs, grades, reverse_signs, involution_signs]
    for arr in arrays:
        arr.setflags(write=False)
    return BladeTables(*arrays)


class Multivector:
    """Immutable dense multivector over a fixed signature."""

    __slots__ = ("_sig", "_coeffs")

    def __init__(self, sig: AlgebraSignature, coeffs: Iterable[float]):
        arr = np.array(coeffs, dtype=np.float64)
        if arr.shape != (sig.dim,):
            raise ArgumentError(f"{sig} needs {sig.dim} coefficients, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite coefficient in multivector over {sig}")
        arr.setflags(write=False)
        self._sig = sig
        self._coeffs = arr

    @property
    def sig(self) -> AlgebraSignature:
        return self._sig

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    def __getitem__(self, mask: int) -> float:
        return float(self._coeffs[_check_mask(self._sig, mask)])

    def __neg__(self) -> "Multivector":
        return Multivector(self._sig, -self._coeffs)

    def __add__(self, other) -> "Multivector":
        if isinstance(other, Real):
            other = scalar(self._sig, float(other))
        return linear_combine([(1.0, self), (1.0, other)])

    __radd__ = __add__

    def __sub__(self, other) -> "Multivector":
        if isinstance(other, Real):
            other = scalar(self._sig, float(other))
        return linear_combine([(1.0, self), (-1.0, other)])

    def __rsub__(self, other) -> "Multivector":
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Multivector):
            return geometric_product(self, other)
        if isinstance(other, Real):
            return Multivector(self._sig, self._coeffs * float(other))
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, Real):
            return Multivector(self._sig, self._coeffs * float(other))
        return NotImplemented

    def __truediv__(self, other):
        if isinstance(other, Real):
            return Multivector(self._sig, self._coeffs / float(other))
        return NotImplemented

    def __xor__(self, other: "Multivector") -> "Multivector":
        return outer_product(self, other)

    def __or__(self, other: "Multivector") -> "Multivector":
        return inner_product(self, other)

    def __invert__(self) -> "Multivector":
        return reverse(self)

    def allclose(self, other: "Multivector", tol: float = 1e-10) -> bool:
        _same_signature(self, other)
        return bool(np.max(np.abs(self._coeffs - other._coeffs)) <= tol)

    def __repr__(self) -> str:
        terms = [
            f"{self._coeffs[mask]:.6g}*{blade_name(mask)}" if mask else f"{self._coeffs[mask]:.6g}"
            for mask in canonical_order(self._sig)
            if self._coeffs[mask] != 0
        ]
        return f"Multivector[{self._sig}]({' + '.join(terms) or '0'})"


# -- constructors -----------------------------------------------------------

def zero(sig: AlgebraSignature) -> Multivector:
    return Multivector(sig, np.zeros(sig.dim))


def scalar(sig: AlgebraSignature, value: float) -> Multivector:
    coeffs = np.zeros(sig.dim)
    coeffs[0] = value
    return Multivector(sig, coeffs)


def basis_blade(sig: AlgebraSignature, mask: int, value: float = 1.0) -> Multivector:
    coeffs = np.zeros(sig.dim)
    coeffs[_check_mask(sig, mask)] = value
    return Multivector(sig, coeffs)


def basis_vector(sig: AlgebraSignature, index: int) -> Multivector:
    """e_index, with 1-based index as written in formulas."""
    if not 1 <= index <= sig.n:
        raise ArgumentError(f"basis vector e{index} does not exist in {sig}")
    return basis_blade(sig, 1 << (index - 1))


def vector(sig: AlgebraSignature, values: Sequence[float]) -> Multivector:
    if len(values) != sig.n:
        raise ArgumentError(f"{sig} vectors have {sig.n} components, got {len(values)}")
    coeffs = np.zeros(sig.dim)
    for k, value in enumerate(values):
        coeffs[1 << k] = value
    return Multivector(sig, coeffs)


def bivector(sig: AlgebraSignature, values: Sequence[float]) -> Multivector:
    """Bivector from coefficients in serialization order (e12, e13, e23, e14, ...)."""
    masks = bivector_masks(sig)
    if len(values) != len(masks):
        raise ArgumentError(f"{sig} bivectors have {len(masks)} components, got {len(values)}")
    coeffs = np.zeros(sig.dim)
    coeffs[masks] = values
    return Multivector(sig, coeffs)


def bivector_coefficients(B: Multivector) -> np.ndarray:
    return B.coeffs[bivector_masks(B.sig)].copy()


# -- products ---------------------------------------------------------------

def _same_signature(A: Multivector, B: Multivector) -> None:
    if not isinstance(A, Multivector) or not isinstance(B, Multivector):
        raise ArgumentError("operands must be multivectors")
    if A.sig != B.sig:
        raise ArgumentError(f"signature mismatch: {A.sig} vs {B.sig}")


def gather_product(gather_signs: np.ndarray, xor: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(a * b)_k = sum_i a_i b_(i^k) gather_signs[i, k] on raw coefficient arrays."""
    return (gather_signs * a[:, None] * b[xor]).sum(axis=0)


def geometric_product(A: Multivector, B: Multivector) -> Multivector:
    _same_signature(A, B)
    t = blade_tables(A.sig)
    return Multivector(A.sig, gather_product(t.gp_gather, t.xor, A.coeffs, B.coeffs))


def outer_product(A: Multivector, B: Multivector) -> Multivector:
    _same_signature(A, B)
    t = blade_tables(A.sig)
    return Multivector(A.sig, gather_product(t.outer_gather, t.xor, A.coeffs, B.coeffs))


def inner_product(A: Multivector, B: Multivector) -> Multivector:
    """Left contraction A ⌋ B."""
    _same_signature(A, B)
    t = blade_tables(A.sig)
    return Multivector(A.sig, gather_product(t.inner_gather, t.xor, A.coeffs, B.coeffs))


def commutator(A: Multivector, B: Multivector) -> Multivector:
    return linear_combine([(0.5, geometric_product(A, B)), (-0.5, geometric_product(B, A))])


# -- unary ------------------------------------------------------------------

def reverse(A: Multivector) -> Multivector:
    return Multivector(A.sig, A.coeffs * blade_tables(A.sig).reverse_signs)


def grade_involution(A: Multivector) -> Multivector:
    return Multivector(A.sig, A.coeffs * blade_tables(A.sig).involution_signs)


def clifford_conjugate(A: Multivector) -> Multivector:
    return grade_involution(reverse(A))


def grade_mask(sig: AlgebraSignature, k: int) -> np.ndarray:
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or not 0 <= k <= sig.n:
        raise ArgumentError(f"grade {k!r} out of range [0, {sig.n}] for {sig}")
    return blade_tables(sig).grades == k


def grade_project(A: Multivector, k: int) -> Multivector:
    return Multivector(A.sig, np.where(grade_mask(A.sig, k), A.coeffs, 0.0))


def even_part(A: Multivector) -> Multivector:
    return Multivector(A.sig, np.where(blade_tables(A.sig).grades % 2 == 0, A.coeffs, 0.0))


def scalar_part(A: Multivector) -> float:
    return float(A.coeffs[0])


def grades(A: Multivector) -> List[int]:
    return sorted({int(g) for g in blade_tables(A.sig).grades[A.coeffs != 0]})


def is_even(A: Multivector) -> bool:
    return bool(np.all(A.coeffs[blade_tables(A.sig).grades % 2 == 1] == 0))


def is_homogeneous(A: Multivector, k: int) -> bool:
    return bool(np.all(A.coeffs[~grade_mask(A.sig, k)] == 0))


def linear_combine(terms: Sequence[Tuple[float, Multivector]]) -> Multivector:
    terms = list(terms)
    if not terms:
        raise ArgumentError("linear_combine needs at least one term")
    sig = terms[0][1].sig
    total = np.zeros(sig.dim)
    for weight, mv in terms:
        if not isinstance(mv, Multivector) or mv.sig != sig:
            raise ArgumentError(f"signature mismatch in linear_combine: expected {sig}")
        total = total + float(weight) * mv.coeffs
    return Multivector(sig, total)


def norm_squared(psi: Multivector) -> float:
    """<psi† psi>_0. Non-negative in Cl(n, 0); may be negative in mixed signatures."""
    return scalar_part(geometric_product(reverse(psi), psi))


def inverse(A: Multivector, tol: Optional[float] = None) -> Multivector:
    """Versor inverse reverse(A) / (A reverse(A)); requires A reverse(A) to be a nonzero scalar."""
    tol = settings.UNIT_TOLERANCE if tol is None else tol
    square = geometric_product(A, reverse(A))
    s = scalar_part(square)
    if abs(s) <= tol or np.max(np.abs(square.coeffs[1:]), initial=0.0) > tol * max(1.0, abs(s)):
        raise ArgumentError(f"{A!r} is not an invertible versor")
    return reverse(A) / s


def is_unit(A: Multivector, tol: Optional[float] = None) -> bool:
    tol = settings.UNIT_TOLERANCE if tol is None else tol
    return abs(norm_squared(A) - 1.0) <= tol


# -- exponential --------------------------------------------------------------

def exp_series(B: Multivector, terms: int = 30) -> Multivector:
    """Plain truncated Taylor series sum_{k<terms} B^k / k!."""
    result = scalar(B.sig, 1.0)
    term = scalar(B.sig, 1.0)
    for k in range(1, terms):
        term = geometric_product(term, B) / k
        result = result + term
    return result


def scaling_steps(B: Multivector, threshold: Optional[float] = None) -> int:
    """Number of halvings that bring max |coefficient| down to ``threshold``."""
    threshold = settings.SCALING_THRESHOLD if threshold is None else threshold
    peak = float(np.max(np.abs(B.coeffs)))
    if peak <= threshold:
        return 0
    return int(math.ceil(math.log2(peak / threshold)))


def exp_scaled_series(B: Multivector, terms: Optional[int] = None) -> Multivector:
    """Scaling and squaring: exp(B) = exp(B / 2^s)^(2^s)."""
    terms = settings.SERIES_TERMS if terms is None else terms
    steps = scaling_steps(B)
    result = exp_series(B / float(2 ** steps), terms)
    for _ in range(steps):
        result = geometric_product(result, result)
    return result


def _require_bivector(B: Multivector) -> None:
    if not isinstance(B, Multivector):
        raise ArgumentError("exp_bivector expects a multivector")
    if B.sig.n < 2:
        if np.any(B.coeffs != 0):
            raise ArgumentError(f"{B.sig} has no bivectors")
        return
    if not is_homogeneous(B, 2):
        raise ArgumentError(f"exp_bivector expects a pure bivector, got grades {grades(B)}")


def exp_bivector(B: Multivector, epsilon: Optional[float] = None) -> Multivector:
    """exp(B) for a bivector B; the result is always even-grade.

    Simple bivectors with B² a negative (positive) scalar use the circular
    (hyperbolic) closed form; null and non-simple bivectors use scaling and
    squaring.
    """
    epsilon = settings.BRANCH_EPSILON if epsilon is None else epsilon
    _require_bivector(B)
    if not np.any(B.coeffs):
        return scalar(B.sig, 1.0)
    square = geometric_product(B, B)
    s = scalar_part(square)
    simple = not np.any(np.abs(square.coeffs[1:]) > epsilon * max(1.0, abs(s)))
    if simple and s < -epsilon:
        size = math.sqrt(-s)
        return linear_combine([(math.cos(size), scalar(B.sig, 1.0)), (math.sin(size) / size, B)])
    if simple and s > epsilon:
        size = math.sqrt(s)
        return linear_combine([(math.cosh(size), scalar(B.sig, 1.0)), (math.sinh(size) / size, B)])
    return exp_scaled_series(B)
