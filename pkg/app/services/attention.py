"""Spinor attention and a single Transformer block.

Every function accepts either plain values (Multivector, numpy arrays) or
variables recorded on a ``Tape``. With plain inputs the computation runs on a
private tape and plain values come back; with recorded inputs the operations
are appended to the caller's tape so that they can be differentiated.
"""
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ArgumentError
from app.models.models import AttentionParams, EmbeddingTable, FeedForwardParams, HeadParams
from app.schemas.schemas import PositionalConfig
from app.services.autodiff import Tape, Variable, find_tape
from app.services.ga_core import (
    AlgebraSignature,
    Multivector,
    bivector_masks,
    even_masks,
    geometric_product,
    reverse,
    scalar_part,
)
from app.services.spinor import apply_position, positional_rotor

logger = logging.getLogger(__name__)


def _session(*items) -> Tuple[Tape, bool]:
    tape = find_tape(*items)
    if tape is None:
        return Tape(), True
    return tape, False


def _unwrap(outputs: List[Variable], owned: bool):
    return [out.value for out in outputs] if owned else outputs


def _signature_of(item) -> AlgebraSignature:
    return item.sig


def spinor_scale(sig: AlgebraSignature) -> float:
    """d_s: dimension of the even subalgebra."""
    return float(sig.even_dim)


# -- embeddings ---------------------------------------------------------------

def embed_sequence(tokens: Sequence[int], table: EmbeddingTable, cfg: PositionalConfig,
                   spinors: Optional[Sequence[Variable]] = None):
    """Position p holds R_p exp(B_(w_p)).

    ``spinors`` optionally supplies one recorded spinor per vocabulary entry,
    in which case the products are recorded on their tape.
    """
    for token in tokens:
        if isinstance(token, bool) or not 0 <= token < len(table):
            raise ArgumentError(f"token id {token} outside vocabulary of size {len(table)}")
    sig = table.sig
    if spinors is None:
        cache = {token: table.spinor(token) for token in set(tokens)}
        return [apply_position(positional_rotor(p, cfg, sig), cache[token])
                for p, token in enumerate(tokens)]
    if len(spinors) != len(table):
        raise ArgumentError(f"{len(spinors)} spinors for a vocabulary of {len(table)}")
    tape = find_tape(spinors)
    return [tape.geometric_product(positional_rotor(p, cfg, sig), spinors[token])
            for p, token in enumerate(tokens)]


# -- inner products and softmax -------------------------------------------------

def dirac_inner(psi: Multivector, phi: Multivector) -> Multivector:
    """psi† phi."""
    return geometric_product(reverse(psi), phi)


def dirac_scalar(psi: Multivector, phi: Multivector) -> float:
    return scalar_part(dirac_inner(psi, phi))


def softmax(scores: Sequence[float]) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ArgumentError("softmax needs at least one score")
    shifted = np.exp(scores - np.max(scores))
    return shifted / shifted.sum()


def scaled_attention(tape: Tape, queries, keys, values, d_s: float, causal: bool = False,
                     score: Optional[Callable[[Variable, Variable], Variable]] = None):
    """softmax_j(score(q_i, k_j) / sqrt(d_s)) mixing of the values, recorded on ``tape``.

    ``score`` defaults to the Dirac scalar; pass ``tape.dot`` for coefficient vectors.
    """
    score = tape.dirac_scalar if score is None else score
    if len(keys) == 0:
        raise ArgumentError("attention needs at least one key")
    if len(keys) != len(values):
        raise ArgumentError(f"{len(keys)} keys but {len(values)} values")
    if causal and len(queries) > len(keys):
        raise ArgumentError("causal attention needs a key for every query position")
    factor = 1.0 / math.sqrt(d_s)
    outputs, weights = [], []
    for i, query in enumerate(queries):
        visible = i + 1 if causal else len(keys)
        scores = tape.stack([tape.scale(score(query, key), factor)
                             for key in keys[:visible]])
        w = tape.softmax(scores)
        outputs.append(tape.mix(w, values[:visible]))
        weights.append(w)
    return outputs, weights


def spinor_attention(queries, keys, values, d_s: float, causal: bool = False):
    """output_i = sum_j softmax_j(<q_i† k_j>_0 / sqrt(d_s)) v_j."""
    tape, owned = _session(queries, keys, values)
    outputs, _ = scaled_attention(tape, [tape.lift(q) for q in queries], [tape.lift(k) for k in keys],
                                  [tape.lift(v) for v in values], d_s, causal)
    return _unwrap(outputs, owned)


def attention_weights(queries: Sequence[Multivector], keys: Sequence[Multivector], d_s: float,
                      causal: bool = False) -> np.ndarray:
    """Weight matrix (queries x keys); masked entries are 0."""
    tape = Tape()
    _, weights = scaled_attention(tape, [tape.lift(q) for q in queries], [tape.lift(k) for k in keys],
                                  [tape.lift(k) for k in keys], d_s, causal)
    matrix = np.zeros((len(queries), len(keys)))
    for i, w in enumerate(weights):
        matrix[i, : w.data.size] = w.data
    return matrix


# -- heads and blocks -----------------------------------------------------------

def _rotor_map(tape: Tape, generator, sig: AlgebraSignature) -> Variable:
    return tape.exp_bivector(tape.scatter(generator, bivector_masks(sig), sig))


def _project(tape: Tape, inputs, head: HeadParams, sig: AlgebraSignature):
    maps = [_rotor_map(tape, gen, sig) for gen in (head.query, head.key, head.value)]
    return [[tape.geometric_product(rotor, x) for x in inputs] for rotor in maps]


def attention_head(inputs, head: HeadParams, d_s: float, causal: bool = False):
    """One-sided rotor maps q = R_q x, k = R_k x, v = R_v x followed by spinor attention."""
    tape, owned = _session(inputs, head)
    inputs = [tape.lift(x) for x in inputs]
    if not inputs:
        raise ArgumentError("attention_head needs at least one input")
    queries, keys, values = _project(tape, inputs, head, _signature_of(inputs[0]))
    outputs, _ = scaled_attention(tape, queries, keys, values, d_s, causal)
    return _unwrap(outputs, owned)


def head_weights(inputs: Sequence[Multivector], head: HeadParams, d_s: float,
                 causal: bool = False) -> np.ndarray:
    tape = Tape()
    if not inputs:
        raise ArgumentError("head_weights needs at least one input")
    inputs = [tape.lift(x) for x in inputs]
    queries, keys, _ = _project(tape, inputs, head, _signature_of(inputs[0]))
    _, weights = scaled_attention(tape, queries, keys, keys, d_s, causal)
    matrix = np.zeros((len(inputs), len(inputs)))
    for i, w in enumerate(weights):
        matrix[i, : w.data.size] = w.data
    return matrix


def multi_head_attention(inputs, attention: AttentionParams, causal: bool = False):
    """Independent heads, outputs averaged."""
    tape, owned = _session(inputs, attention)
    inputs = [tape.lift(x) for x in inputs]
    per_head = [attention_head(inputs, head, attention.scale, causal) for head in attention.heads]
    if len(per_head) == 1:
        return _unwrap(per_head[0], owned)
    share = 1.0 / len(per_head)
    outputs = [tape.linear_combine([(share, outs[i]) for outs in per_head])
               for i in range(len(inputs))]
    return _unwrap(outputs, owned)


def feed_forward(tape: Tape, x: Variable, ffw: FeedForwardParams, coordinates: Sequence[int]) -> Variable:
    """W2 tanh(W1 x_c + b1) + b2 on the selected coordinates, written back to them."""
    hidden = tape.tanh(tape.add(tape.matvec(ffw.w1, tape.gather(x, coordinates)), ffw.b1))
    out = tape.add(tape.matvec(ffw.w2, hidden), ffw.b2)
    return tape.scatter(out, coordinates, x.sig)


def transformer_block(inputs, attention: AttentionParams, ffw: FeedForwardParams, causal: bool = False):
    """y = x + attention(x); z = y + ffw(y), the feed-forward acting on even-blade coefficients."""
    tape, owned = _session(inputs, attention, ffw)
    inputs = [tape.lift(x) for x in inputs]
    attended = multi_head_attention(inputs, attention, causal)
    coordinates = even_masks(_signature_of(inputs[0]))
    outputs = []
    for x, a in zip(inputs, attended):
        y = tape.add(x, a)
        outputs.append(tape.add(y, feed_forward(tape, y, ffw, coordinates)))
    return _unwrap(outputs, owned)
