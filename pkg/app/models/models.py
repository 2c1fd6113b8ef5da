from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from app.core.errors import ArgumentError
from app.schemas.schemas import ModelKind, PositionalConfig
from app.services.ga_core import AlgebraSignature, Multivector, bivector, exp_bivector


@dataclass
class EmbeddingTable:
    """Vocabulary plus one bivector generator B_w per token; psi_w = exp(B_w)."""

    sig: AlgebraSignature
    vocab: List[str]
    generators: np.ndarray

    def __post_init__(self):
        if len(set(self.vocab)) != len(self.vocab):
            raise ArgumentError("vocabulary entries must be unique")
        self.generators = np.array(self.generators, dtype=np.float64).reshape(
            len(self.vocab), self.sig.bivector_count
        )

    def __len__(self) -> int:
        return len(self.vocab)

    def token_id(self, token) -> int:
        if isinstance(token, (int, np.integer)):
            if not 0 <= token < len(self.vocab):
                raise ArgumentError(f"token id {token} outside vocabulary of size {len(self.vocab)}")
            return int(token)
        try:
            return self.vocab.index(token)
        except ValueError:
            raise ArgumentError(f"unknown token {token!r}")

    def spinor(self, token) -> Multivector:
        return exp_bivector(bivector(self.sig, self.generators[self.token_id(token)]))

    def spinors(self) -> List[Multivector]:
        return [self.spinor(index) for index in range(len(self.vocab))]


@dataclass
class HeadParams:
    """Query/key/value maps: bivector generators (spinor model) or square matrices (vector model)."""

    query: np.ndarray
    key: np.ndarray
    value: np.ndarray


@dataclass
class AttentionParams:
    heads: List[HeadParams]
    scale: float

    @property
    def head_count(self) -> int:
        return len(self.heads)


@dataclass
class FeedForwardParams:
    """affine -> tanh -> affine on the model's coordinate vector."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


def _named_parameters(attention: AttentionParams, ffw: FeedForwardParams) -> Dict[str, np.ndarray]:
    params: Dict[str, np.ndarray] = OrderedDict()
    for index, head in enumerate(attention.heads):
        params[f"head{index}.query"] = head.query
        params[f"head{index}.key"] = head.key
        params[f"head{index}.value"] = head.value
    params["ffw.w1"] = ffw.w1
    params["ffw.b1"] = ffw.b1
    params["ffw.w2"] = ffw.w2
    params["ffw.b2"] = ffw.b2
    return params


@dataclass
class SpinorLanguageModel:
    table: EmbeddingTable
    positional: PositionalConfig
    attention: AttentionParams
    ffw: FeedForwardParams
    seed: int = 0
    epochs: int = 0
    window: int = 8
    kind: ModelKind = field(default=ModelKind.SPINOR, init=False)

    @property
    def sig(self) -> AlgebraSignature:
        return self.table.sig

    @property
    def vocab(self) -> List[str]:
        return self.table.vocab

    def parameters(self) -> Dict[str, np.ndarray]:
        """Named parameter arrays; training updates them in place."""
        params: Dict[str, np.ndarray] = OrderedDict(generators=self.table.generators)
        params.update(_named_parameters(self.attention, self.ffw))
        return params


@dataclass
class VectorLanguageModel:
    """Baseline: plain coefficient-vector embeddings of dimension n(n-1)/2."""

    sig: AlgebraSignature
    vocab: List[str]
    embeddings: np.ndarray
    positional: PositionalConfig
    attention: AttentionParams
    ffw: FeedForwardParams
    seed: int = 0
    epochs: int = 0
    window: int = 8
    kind: ModelKind = field(default=ModelKind.VECTOR, init=False)

    @property
    def width(self) -> int:
        return self.sig.bivector_count

    def parameters(self) -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = OrderedDict(generators=self.embeddings)
        params.update(_named_parameters(self.attention, self.ffw))
        return params


@dataclass
class ToyCorpus:
    tokens: List[int]
    vocab: List[str]
    split: int

    def __post_init__(self):
        if any(not 0 <= token < len(self.vocab) for token in self.tokens):
            raise ArgumentError("corpus token id outside vocabulary")
        if not 0 <= self.split < len(self.tokens):
            raise ArgumentError(
                f"split {self.split} leaves no validation tokens in a corpus of {len(self.tokens)}"
            )

    @property
    def train_tokens(self) -> List[int]:
        return self.tokens[: self.split]

    @property
    def validation_tokens(self) -> List[int]:
        return self.tokens[self.split:]
