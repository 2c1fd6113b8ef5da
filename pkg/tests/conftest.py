import numpy as np
import pytest
from hypothesis import strategies as st

from app.services.ga_core import (
    AlgebraSignature,
    Multivector,
    bivector,
    even_part,
    exp_bivector,
    vector,
)

SIGNATURES = [AlgebraSignature(2, 0), AlgebraSignature(3, 0), AlgebraSignature(1, 3)]

signatures = st.sampled_from(SIGNATURES + [AlgebraSignature(0, 2), AlgebraSignature(2, 1)])
seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


class Builders:
    """Random multivectors drawn from one seeded generator."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def multivector(self, sig: AlgebraSignature, scale: float = 1.0) -> Multivector:
        return Multivector(sig, self.rng.normal(scale=scale, size=sig.dim))

    def even(self, sig: AlgebraSignature, scale: float = 1.0) -> Multivector:
        return even_part(self.multivector(sig, scale))

    def vector(self, sig: AlgebraSignature, scale: float = 1.0) -> Multivector:
        return vector(sig, self.rng.normal(scale=scale, size=sig.n))

    def bivector(self, sig: AlgebraSignature, scale: float = 1.0) -> Multivector:
        return bivector(sig, self.rng.normal(scale=scale, size=sig.bivector_count))

    def rotor(self, sig: AlgebraSignature, scale: float = 1.0) -> Multivector:
        """Euclidean signatures only: exp of a random bivector is then a unit rotor."""
        return exp_bivector(self.bivector(sig, scale))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def build(rng):
    return Builders(rng)


@pytest.fixture
def cl2():
    return AlgebraSignature(2, 0)


@pytest.fixture
def cl3():
    return AlgebraSignature(3, 0)


@pytest.fixture
def cl13():
    return AlgebraSignature(1, 3)
