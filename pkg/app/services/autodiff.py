"""Reverse-mode differentiation over multivector and real-array computations.

A ``Tape`` records every operation eagerly: forward values are computed when
the node is appended, and ``backward`` walks the nodes once in reverse id
order. A tape belongs to a single thread; separate tapes are independent.
"""
import dataclasses
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.config import settings
from app.core.errors import ArgumentError, NumericError
from app.services.ga_core import (
    AlgebraSignature,
    Multivector,
    blade_tables,
    gather_product,
    grade_mask,
    scaling_steps,
)

logger = logging.getLogger(__name__)


class OpKind(str, enum.Enum):
    LEAF = "leaf"
    CONSTANT = "constant"
    GEOMETRIC_PRODUCT = "geometric_product"
    LINEAR_COMBINE = "linear_combine"
    MIX = "mix"
    REVERSE = "reverse"
    GRADE_PROJECT = "grade_project"
    SCALAR_PART = "scalar_part"
    GATHER = "gather"
    SCATTER = "scatter"
    ADD = "add"
    SCALE = "scale"
    MATVEC = "matvec"
    DOT = "dot"
    STACK = "stack"
    TANH = "tanh"
    SOFTMAX = "softmax"
    LOG_SOFTMAX = "log_softmax"
    PICK = "pick"
    SUM = "sum"
    MEAN = "mean"


@dataclass
class Node:
    kind: OpKind
    inputs: Tuple[int, ...]
    value: np.ndarray
    sig: Optional[AlgebraSignature] = None
    attrs: Dict[str, Any] = field(default_factory=dict)


class Variable:
    __slots__ = ("tape", "node_id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.node_id = node_id

    @property
    def data(self) -> np.ndarray:
        return self.tape.nodes[self.node_id].value


class DifferentiableMultivector(Variable):
    __slots__ = ()

    @property
    def sig(self) -> AlgebraSignature:
        return self.tape.nodes[self.node_id].sig

    @property
    def value(self) -> Multivector:
        return Multivector(self.sig, self.data)


class DifferentiableArray(Variable):
    __slots__ = ()

    @property
    def value(self) -> np.ndarray:
        return self.data.copy()


Liftable = Union[Variable, Multivector, np.ndarray, float, Sequence[float]]


# -- forward rules ------------------------------------------------------------

def _forward_gp(values, attrs, sig):
    t = blade_tables(sig)
    return gather_product(t.gp_gather, t.xor, values[0], values[1])


def _forward_linear_combine(values, attrs, sig):
    total = np.zeros_like(values[0])
    for weight, value in zip(attrs["weights"], values):
        total = total + weight * value
    return total


def _forward_mix(values, attrs, sig):
    weights, parts = values[0], values[1:]
    total = np.zeros_like(parts[0])
    for weight, value in zip(weights, parts):
        total = total + weight * value
    return total


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = np.exp(x - np.max(x))
    return shifted / shifted.sum()


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    return shifted - math.log(np.exp(shifted).sum())


_FORWARD: Dict[OpKind, Callable] = {
    OpKind.GEOMETRIC_PRODUCT: _forward_gp,
    OpKind.LINEAR_COMBINE: _forward_linear_combine,
    OpKind.MIX: _forward_mix,
    OpKind.REVERSE: lambda v, a, sig: v[0] * blade_tables(sig).reverse_signs,
    OpKind.GRADE_PROJECT: lambda v, a, sig: np.where(grade_mask(sig, a["grade"]), v[0], 0.0),
    OpKind.SCALAR_PART: lambda v, a, sig: v[0][:1].copy(),
    OpKind.GATHER: lambda v, a, sig: v[0][a["indices"]],
    OpKind.SCATTER: lambda v, a, sig: _scatter(v[0], a["indices"], sig.dim),
    OpKind.ADD: lambda v, a, sig: v[0] + v[1],
    OpKind.SCALE: lambda v, a, sig: a["factor"] * v[0],
    OpKind.MATVEC: lambda v, a, sig: v[0] @ v[1],
    OpKind.DOT: lambda v, a, sig: np.array([np.dot(v[0], v[1])]),
    OpKind.STACK: lambda v, a, sig: np.concatenate(v),
    OpKind.TANH: lambda v, a, sig: np.tanh(v[0]),
    OpKind.SOFTMAX: lambda v, a, sig: _softmax(v[0]),
    OpKind.LOG_SOFTMAX: lambda v, a, sig: _log_softmax(v[0]),
    OpKind.PICK: lambda v, a, sig: v[0][a["index"]:a["index"] + 1].copy(),
    OpKind.SUM: lambda v, a, sig: np.array([v[0].sum()]),
    OpKind.MEAN: lambda v, a, sig: np.array([v[0].mean()]),
}


def _scatter(values: np.ndarray, indices: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros(dim)
    out[indices] = values
    return out


# -- adjoint rules ------------------------------------------------------------
# Each rule maps (output adjoint, input values, output value, attrs, sig) to
# one adjoint per input.

def _backward_gp(g, values, out, attrs, sig):
    t = blade_tables(sig)
    a, b = values
    grad_a = (t.gp_gather * b[t.xor] * g[None, :]).sum(axis=1)
    grad_b = (t.signs * a[:, None] * g[t.xor]).sum(axis=0)
    return [grad_a, grad_b]


def _backward_mix(g, values, out, attrs, sig):
    weights, parts = values[0], values[1:]
    grad_w = np.array([np.dot(g, part) for part in parts])
    return [grad_w] + [weight * g for weight in weights]


def _backward_gather(g, values, out, attrs, sig):
    grad = np.zeros_like(values[0])
    np.add.at(grad, attrs["indices"], g)
    return [grad]


def _backward_matvec(g, values, out, attrs, sig):
    matrix, vec = values
    return [np.outer(g, vec), matrix.T @ g]


def _backward_stack(g, values, out, attrs, sig):
    grads, start = [], 0
    for value in values:
        grads.append(g[start:start + value.size])
        start += value.size
    return grads


def _backward_softmax(g, values, out, attrs, sig):
    return [out * (g - np.dot(g, out))]


def _backward_log_softmax(g, values, out, attrs, sig):
    return [g - np.exp(out) * g.sum()]


def _backward_pick(g, values, out, attrs, sig):
    grad = np.zeros_like(values[0])
    grad[attrs["index"]] = g[0]
    return [grad]


def _backward_scalar_part(g, values, out, attrs, sig):
    grad = np.zeros_like(values[0])
    grad[0] = g[0]
    return [grad]


_BACKWARD: Dict[OpKind, Callable] = {
    OpKind.GEOMETRIC_PRODUCT: _backward_gp,
    OpKind.LINEAR_COMBINE: lambda g, v, o, a, sig: [w * g for w in a["weights"]],
    OpKind.MIX: _backward_mix,
    OpKind.REVERSE: lambda g, v, o, a, sig: [g * blade_tables(sig).reverse_signs],
    OpKind.GRADE_PROJECT: lambda g, v, o, a, sig: [np.where(grade_mask(sig, a["grade"]), g, 0.0)],
    OpKind.SCALAR_PART: _backward_scalar_part,
    OpKind.GATHER: _backward_gather,
    OpKind.SCATTER: lambda g, v, o, a, sig: [g[a["indices"]]],
    OpKind.ADD: lambda g, v, o, a, sig: [g, g],
    OpKind.SCALE: lambda g, v, o, a, sig: [a["factor"] * g],
    OpKind.MATVEC: _backward_matvec,
    OpKind.DOT: lambda g, v, o, a, sig: [g[0] * v[1], g[0] * v[0]],
    OpKind.STACK: _backward_stack,
    OpKind.TANH: lambda g, v, o, a, sig: [g * (1.0 - o * o)],
    OpKind.SOFTMAX: _backward_softmax,
    OpKind.LOG_SOFTMAX: _backward_log_softmax,
    OpKind.PICK: _backward_pick,
    OpKind.SUM: lambda g, v, o, a, sig: [np.full_like(v[0], g[0])],
    OpKind.MEAN: lambda g, v, o, a, sig: [np.full_like(v[0], g[0] / v[0].size)],
}

# Operations whose output is a multivector over the signature of their first input.
_MULTIVECTOR_OUTPUT = {
    OpKind.GEOMETRIC_PRODUCT, OpKind.LINEAR_COMBINE, OpKind.REVERSE,
    OpKind.GRADE_PROJECT, OpKind.SCATTER,
}


class Gradients:
    """Adjoints of leaf nodes, keyed by node id."""

    def __init__(self, grads: Dict[int, np.ndarray]):
        self._grads = grads

    def __getitem__(self, var: Variable) -> np.ndarray:
        return self._grads[var.node_id]

    def __contains__(self, var: Variable) -> bool:
        return var.node_id in self._grads

    def items(self):
        return self._grads.items()


class Tape:
    def __init__(self):
        self.nodes: List[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> Variable:
        self.nodes.append(node)
        node_id = len(self.nodes) - 1
        if node.sig is not None and node.value.shape == (node.sig.dim,):
            return DifferentiableMultivector(self, node_id)
        return DifferentiableArray(self, node_id)

    def _source(self, kind: OpKind, value) -> Variable:
        if isinstance(value, Variable):
            raise ArgumentError("value is already recorded on a tape")
        if isinstance(value, Multivector):
            return self._append(Node(kind, (), value.coeffs.copy(), value.sig))
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite value recorded on tape")
        return self._append(Node(kind, (), arr))

    def leaf(self, value) -> Variable:
        return self._source(OpKind.LEAF, value)

    def constant(self, value) -> Variable:
        return self._source(OpKind.CONSTANT, value)

    def lift(self, value: Liftable) -> Variable:
        """Variables of this tape pass through; plain values become constants."""
        if isinstance(value, Variable):
            if value.tape is not self:
                raise ArgumentError("variable belongs to a different tape")
            return value
        return self.constant(value)

    def record_op(self, kind: OpKind, inputs: Sequence[Variable], **attrs) -> Variable:
        if kind in (OpKind.LEAF, OpKind.CONSTANT):
            raise ArgumentError("use leaf() or constant() for source nodes")
        for var in inputs:
            if not isinstance(var, Variable) or var.tape is not self:
                raise ArgumentError(f"{kind.value}: input is not recorded on this tape")
        values = [self.nodes[var.node_id].value for var in inputs]
        sig = attrs.pop("sig", None)
        if sig is None:
            sigs = {self.nodes[var.node_id].sig for var in inputs
                    if isinstance(var, DifferentiableMultivector)}
            if len(sigs) > 1:
                raise ArgumentError(f"{kind.value}: signature mismatch {sorted(map(str, sigs))}")
            sig = sigs.pop() if sigs else None
        value = _FORWARD[kind](values, attrs, sig)
        out_sig = sig if kind in _MULTIVECTOR_OUTPUT or kind == OpKind.MIX else None
        return self._append(Node(kind, tuple(var.node_id for var in inputs), value, out_sig, attrs))

    # -- multivector operations --

    def geometric_product(self, a: Liftable, b: Liftable) -> Variable:
        return self.record_op(OpKind.GEOMETRIC_PRODUCT, [self.lift(a), self.lift(b)])

    def linear_combine(self, terms: Sequence[Tuple[float, Liftable]]) -> Variable:
        terms = list(terms)
        if not terms:
            raise ArgumentError("linear_combine needs at least one term")
        return self.record_op(
            OpKind.LINEAR_COMBINE,
            [self.lift(item) for _, item in terms],
            weights=[float(weight) for weight, _ in terms],
        )

    def mix(self, weights: Liftable, items: Sequence[Liftable]) -> Variable:
        """sum_j weights[j] * items[j] with differentiable weights."""
        items = [self.lift(item) for item in items]
        weights = self.lift(weights)
        if weights.data.shape != (len(items),):
            raise ArgumentError(f"mix: {weights.data.shape[0]} weights for {len(items)} items")
        return self.record_op(OpKind.MIX, [weights] + items)

    def reverse(self, a: Liftable) -> Variable:
        return self.record_op(OpKind.REVERSE, [self.lift(a)])

    def grade_project(self, a: Liftable, grade: int) -> Variable:
        return self.record_op(OpKind.GRADE_PROJECT, [self.lift(a)], grade=grade)

    def scalar_part(self, a: Liftable) -> Variable:
        return self.record_op(OpKind.SCALAR_PART, [self.lift(a)])

    def gather(self, a: Liftable, indices: Sequence[int]) -> Variable:
        return self.record_op(OpKind.GATHER, [self.lift(a)], indices=np.asarray(indices, dtype=np.intp))

    def scatter(self, values: Liftable, indices: Sequence[int], sig: AlgebraSignature) -> Variable:
        """Place ``values`` at blade ``indices`` of an otherwise-zero multivector."""
        return self.record_op(OpKind.SCATTER, [self.lift(values)],
                              indices=np.asarray(indices, dtype=np.intp), sig=sig)

    def norm_squared(self, a: Liftable) -> Variable:
        a = self.lift(a)
        return self.scalar_part(self.geometric_product(self.reverse(a), a))

    def dirac_scalar(self, a: Liftable, b: Liftable) -> Variable:
        return self.scalar_part(self.geometric_product(self.reverse(a), self.lift(b)))

    def exp_bivector(self, B: Liftable, terms: Optional[int] = None) -> Variable:
        """Scaling-and-squaring series, recorded op by op so it differentiates exactly."""
        terms = settings.SERIES_TERMS if terms is None else terms
        B = self.lift(B)
        sig = B.sig
        steps = scaling_steps(B.value)
        scaled = self.scale(B, 1.0 / 2 ** steps) if steps else B
        one = np.zeros(sig.dim)
        one[0] = 1.0
        term = self.constant(Multivector(sig, one))
        result = term
        for k in range(1, terms):
            term = self.scale(self.geometric_product(term, scaled), 1.0 / k)
            result = self.add(result, term)
        for _ in range(steps):
            result = self.geometric_product(result, result)
        return result

    # -- array operations --

    def add(self, a: Liftable, b: Liftable) -> Variable:
        a, b = self.lift(a), self.lift(b)
        if a.data.shape != b.data.shape:
            raise ArgumentError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
        if isinstance(a, DifferentiableMultivector):
            return self.linear_combine([(1.0, a), (1.0, b)])
        return self.record_op(OpKind.ADD, [a, b])

    def scale(self, a: Liftable, factor: float) -> Variable:
        a = self.lift(a)
        if isinstance(a, DifferentiableMultivector):
            return self.linear_combine([(factor, a)])
        return self.record_op(OpKind.SCALE, [a], factor=float(factor))

    def matvec(self, matrix: Liftable, vec: Liftable) -> Variable:
        return self.record_op(OpKind.MATVEC, [self.lift(matrix), self.lift(vec)])

    def dot(self, a: Liftable, b: Liftable) -> Variable:
        return self.record_op(OpKind.DOT, [self.lift(a), self.lift(b)])

    def stack(self, items: Sequence[Liftable]) -> Variable:
        items = [self.lift(item) for item in items]
        if not items:
            raise ArgumentError("stack needs at least one item")
        return self.record_op(OpKind.STACK, items)

    def tanh(self, a: Liftable) -> Variable:
        return self.record_op(OpKind.TANH, [self.lift(a)])

    def softmax(self, a: Liftable) -> Variable:
        return self.record_op(OpKind.SOFTMAX, [self.lift(a)])

    def log_softmax(self, a: Liftable) -> Variable:
        return self.record_op(OpKind.LOG_SOFTMAX, [self.lift(a)])

    def pick(self, a: Liftable, index: int) -> Variable:
        return self.record_op(OpKind.PICK, [self.lift(a)], index=int(index))

    def sum(self, a: Liftable) -> Variable:
        return self.record_op(OpKind.SUM, [self.lift(a)])

    def mean(self, a: Liftable) -> Variable:
        return self.record_op(OpKind.MEAN, [self.lift(a)])


def record_op(tape: Tape, kind: OpKind, inputs: Sequence[Variable], **attrs) -> Variable:
    return tape.record_op(kind, inputs, **attrs)


def _loss_seed(tape: Tape, loss: Variable) -> np.ndarray:
    if not isinstance(loss, Variable) or loss.tape is not tape:
        raise ArgumentError("loss is not recorded on this tape")
    value = loss.data
    if isinstance(loss, DifferentiableMultivector):
        if np.any(value[1:] != 0):
            raise ArgumentError("loss multivector has non-scalar coefficients")
        seed = np.zeros_like(value)
        seed[0] = 1.0
        return seed
    if value.size != 1:
        raise ArgumentError(f"loss must be a scalar, got shape {value.shape}")
    return np.ones_like(value)


def backward(tape: Tape, loss: Variable) -> Gradients:
    """d loss / d leaf for every leaf on the tape (zeros where unreachable)."""
    adjoints: Dict[int, np.ndarray] = {loss.node_id: _loss_seed(tape, loss)}
    for node_id in range(loss.node_id, -1, -1):
        node = tape.nodes[node_id]
        if not node.inputs:
            continue
        grad = adjoints.pop(node_id, None)
        if grad is None:
            continue
        values = [tape.nodes[i].value for i in node.inputs]
        for input_id, input_grad in zip(node.inputs, _BACKWARD[node.kind](grad, values, node.value, node.attrs, node.sig)):
            if input_id in adjoints:
                adjoints[input_id] = adjoints[input_id] + input_grad
            else:
                adjoints[input_id] = np.array(input_grad, dtype=np.float64)
    leaves = {
        node_id: adjoints.get(node_id, np.zeros_like(node.value))
        for node_id, node in enumerate(tape.nodes)
        if node.kind == OpKind.LEAF
    }
    return Gradients(leaves)


def _perturbed(point: Sequence[Any], leaf: int, index: Tuple[int, ...], delta: float) -> List[Any]:
    shifted = list(point)
    base = point[leaf]
    raw = np.array(base.coeffs if isinstance(base, Multivector) else base, dtype=np.float64)
    raw[index] += delta
    shifted[leaf] = Multivector(base.sig, raw) if isinstance(base, Multivector) else raw
    return shifted


def _evaluate(f: Callable[[Tape, List[Variable]], Variable], point: Sequence[Any]) -> float:
    tape = Tape()
    loss = f(tape, [tape.leaf(x) for x in point])
    return float(loss.data[0])


def grad_check(f: Callable[[Tape, List[Variable]], Variable], point: Sequence[Any],
               step: Optional[float] = None) -> float:
    """Max relative error between backward() and central differences.

    ``f`` receives a fresh tape and one leaf per entry of ``point`` and returns
    the scalar loss variable.
    """
    step = settings.FD_STEP if step is None else step
    tape = Tape()
    leaves = [tape.leaf(x) for x in point]
    grads = backward(tape, f(tape, leaves))
    worst = 0.0
    for leaf, var in enumerate(leaves):
        analytic = grads[var]
        for index in np.ndindex(analytic.shape):
            try:
                plus = _evaluate(f, _perturbed(point, leaf, index, step))
                minus = _evaluate(f, _perturbed(point, leaf, index, -step))
            except NumericError as exc:
                raise NumericError(f"leaf {leaf}, coordinate {index}: {exc.detail}") from exc
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise NumericError(f"non-finite loss at leaf {leaf}, coordinate {index}")
            numeric = (plus - minus) / (2.0 * step)
            worst = max(worst, abs(analytic[index] - numeric) / max(1.0, abs(numeric)))
    logger.debug("grad_check max relative error %.3e", worst)
    return worst


def find_tape(*items) -> Optional[Tape]:
    """The tape of the first Variable found in ``items`` (searching lists and dataclasses)."""
    for item in items:
        if isinstance(item, Variable):
            return item.tape
        if isinstance(item, (list, tuple)):
            found = find_tape(*item)
        elif dataclasses.is_dataclass(item) and not isinstance(item, type):
            found = find_tape(*(getattr(item, f.name) for f in dataclasses.fields(item)))
        else:
            found = None
        if found is not None:
            return found
    return None
