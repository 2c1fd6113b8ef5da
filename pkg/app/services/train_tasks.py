"""Desk-scale experiments: analogy rotors, toy language models and signature ablation."""
import csv
import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
from pydantic import BaseModel

from app.core.config import settings
from app.core.errors import ArgumentError, NumericError
from app.models.models import (
    AttentionParams,
    EmbeddingTable,
    FeedForwardParams,
    HeadParams,
    SpinorLanguageModel,
    ToyCorpus,
    VectorLanguageModel,
)
from app.schemas.schemas import AblationRow, EpochReport, ModelKind, PositionalConfig, TrainConfig
from app.services.attention import embed_sequence, scaled_attention, spinor_scale, transformer_block
from app.services.autodiff import Tape, Variable, backward
from app.services.ga_core import (
    AlgebraSignature,
    Multivector,
    bivector,
    bivector_coefficients,
    bivector_masks,
    exp_bivector,
    geometric_product,
)
from app.services.spinor import analogy_apply, bivector_log, canonical_rotor, check_rotor, default_positional_config

logger = logging.getLogger(__name__)

LanguageModel = Union[SpinorLanguageModel, VectorLanguageModel]
TokenPair = Tuple[Union[int, str], Union[int, str]]


# -- corpora ------------------------------------------------------------------

def corpus_from_tokens(words: Sequence[str], max_vocab: Optional[int] = None) -> ToyCorpus:
    """Vocabulary in first-appearance order; words past ``max_vocab`` map to the unknown token."""
    words = list(words)
    if not words:
        raise ArgumentError("corpus is empty")
    if max_vocab is not None and max_vocab < 1:
        raise ArgumentError(f"max_vocab must be positive, got {max_vocab}")
    vocab: List[str] = []
    index: Dict[str, int] = {}
    overflow = False
    for word in words:
        if word in index:
            continue
        if max_vocab is not None and len(vocab) >= max_vocab:
            overflow = True
            continue
        index[word] = len(vocab)
        vocab.append(word)
    if overflow:
        if settings.UNK_TOKEN in index:
            raise ArgumentError(f"corpus already uses the reserved token {settings.UNK_TOKEN!r}")
        index[settings.UNK_TOKEN] = len(vocab)
        vocab.append(settings.UNK_TOKEN)
    unk = index.get(settings.UNK_TOKEN)
    tokens = [index.get(word, unk) for word in words]
    # Guard against 0.9 * N landing a hair under an integer.
    split = math.floor(len(tokens) * (1.0 - settings.VALIDATION_FRACTION) + 1e-9)
    return ToyCorpus(tokens=tokens, vocab=vocab, split=split)


def repetitive_corpus(pattern: Sequence[str] = ("a", "b"), length: int = 190) -> ToyCorpus:
    if not pattern or length < 2:
        raise ArgumentError("repetitive corpus needs a pattern and at least two tokens")
    return corpus_from_tokens([pattern[i % len(pattern)] for i in range(length)])


def uniform_corpus(vocab_size: int = 7, length: int = 700, seed: int = 0) -> ToyCorpus:
    """i.i.d. uniform tokens; every vocabulary entry is forced to appear once up front."""
    if vocab_size < 1 or length < vocab_size:
        raise ArgumentError(f"cannot draw {vocab_size} distinct tokens in {length} positions")
    rng = np.random.default_rng(seed)
    ids = list(range(vocab_size)) + rng.integers(0, vocab_size, size=length - vocab_size).tolist()
    return corpus_from_tokens([f"w{i}" for i in ids])


_SUBJECTS = ["the cat", "the dog", "a bird", "the child", "a farmer", "the queen", "the king"]
_VERBS = ["sees", "chases", "likes", "finds", "watches", "follows"]
_OBJECTS = ["the ball", "a tree", "the river", "a house", "the garden", "the road"]


def templated_corpus(seed: int = 0, length: int = 400) -> ToyCorpus:
    """Subject-verb-object sentences from a fixed template grammar."""
    rng = np.random.default_rng(seed)
    words: List[str] = []
    while len(words) < length:
        sentence = "{} {} {} .".format(
            _SUBJECTS[rng.integers(len(_SUBJECTS))],
            _VERBS[rng.integers(len(_VERBS))],
            _OBJECTS[rng.integers(len(_OBJECTS))],
        )
        words.extend(sentence.split())
    return corpus_from_tokens(words[:length])


# -- model construction ---------------------------------------------------------

def _require_planes(sig: AlgebraSignature) -> None:
    if sig.n < 2:
        raise ArgumentError(f"{sig} has no bivectors; language models need n >= 2")


def _feed_forward(rng: np.random.Generator, width: int, hidden: int, init_scale: float) -> FeedForwardParams:
    return FeedForwardParams(
        w1=rng.normal(scale=init_scale, size=(hidden, width)),
        b1=np.zeros(hidden),
        w2=rng.normal(scale=init_scale, size=(width, hidden)),
        b2=np.zeros(width),
    )


def initialize_spinor_model(vocab: Sequence[str], cfg: TrainConfig,
                            positional: Optional[PositionalConfig] = None) -> SpinorLanguageModel:
    sig = cfg.signature
    _require_planes(sig)
    rng = np.random.default_rng(cfg.seed)
    count = sig.bivector_count
    table = EmbeddingTable(sig, list(vocab), rng.normal(scale=cfg.init_scale, size=(len(vocab), count)))
    heads = [
        HeadParams(*(rng.normal(scale=cfg.init_scale, size=count) for _ in range(3)))
        for _ in range(cfg.heads)
    ]
    return SpinorLanguageModel(
        table=table,
        positional=positional or default_positional_config(sig),
        attention=AttentionParams(heads, spinor_scale(sig)),
        ffw=_feed_forward(rng, sig.even_dim, cfg.hidden, cfg.init_scale),
        seed=cfg.seed,
        window=cfg.batch,
    )


def parameter_count(model: LanguageModel) -> int:
    return int(sum(np.asarray(value).size for value in model.parameters().values()))


def _baseline_hidden(sig: AlgebraSignature, vocab_size: int, cfg: TrainConfig) -> int:
    """Feed-forward width that brings the baseline to the spinor model's parameter count."""
    d = sig.bivector_count
    spinor_total = (vocab_size * d + 3 * cfg.heads * d
                    + 2 * cfg.hidden * sig.even_dim + cfg.hidden + sig.even_dim)
    remaining = spinor_total - vocab_size * d - 3 * cfg.heads * d * d - d
    return max(1, round(remaining / (2 * d + 1)))


def initialize_vector_model(vocab: Sequence[str], cfg: TrainConfig,
                            positional: Optional[PositionalConfig] = None) -> VectorLanguageModel:
    sig = cfg.signature
    _require_planes(sig)
    rng = np.random.default_rng(cfg.seed)
    d = sig.bivector_count
    heads = [
        HeadParams(*(rng.normal(scale=cfg.init_scale, size=(d, d)) for _ in range(3)))
        for _ in range(cfg.heads)
    ]
    return VectorLanguageModel(
        sig=sig,
        vocab=list(vocab),
        embeddings=rng.normal(scale=cfg.init_scale, size=(len(vocab), d)),
        positional=positional or default_positional_config(sig),
        attention=AttentionParams(heads, float(d)),
        ffw=_feed_forward(rng, d, _baseline_hidden(sig, len(vocab), cfg), cfg.init_scale),
        seed=cfg.seed,
        window=cfg.batch,
    )


# -- forward passes ---------------------------------------------------------------

@dataclass
class _Bound:
    """Model parameters recorded on one tape."""

    rows: List[Variable]
    attention: AttentionParams
    ffw: FeedForwardParams
    named: Dict[str, Union[Variable, List[Variable]]] = field(default_factory=OrderedDict)


def _bind(tape: Tape, model: LanguageModel, trainable: bool) -> _Bound:
    source = tape.leaf if trainable else tape.constant
    named: Dict[str, Union[Variable, List[Variable]]] = OrderedDict()
    for name, value in model.parameters().items():
        named[name] = [source(row) for row in value] if name == "generators" else source(value)
    heads = [
        HeadParams(named[f"head{i}.query"], named[f"head{i}.key"], named[f"head{i}.value"])
        for i in range(model.attention.head_count)
    ]
    ffw = FeedForwardParams(named["ffw.w1"], named["ffw.b1"], named["ffw.w2"], named["ffw.b2"])
    return _Bound(named["generators"], AttentionParams(heads, model.attention.scale), ffw, named)


def _spinor_logits(tape: Tape, model: SpinorLanguageModel, bound: _Bound, tokens: Sequence[int]) -> List[Variable]:
    sig = model.sig
    masks = bivector_masks(sig)
    spinors = [tape.exp_bivector(tape.scatter(row, masks, sig)) for row in bound.rows]
    inputs = embed_sequence(tokens, model.table, model.positional, spinors=spinors)
    outputs = transformer_block(inputs, bound.attention, bound.ffw, causal=True)
    factor = 1.0 / math.sqrt(model.attention.scale)
    return [
        tape.stack([tape.scale(tape.dirac_scalar(z, psi), factor) for psi in spinors])
        for z in outputs[:-1]
    ]


def positional_encoding(position: int, width: int, cfg: PositionalConfig) -> np.ndarray:
    """Sinusoidal encoding; coordinate pairs share the frequency base * decay^k."""
    out = np.zeros(width)
    for i in range(width):
        angle = position * cfg.base_frequency * cfg.frequency_decay ** (i // 2)
        out[i] = math.sin(angle) if i % 2 == 0 else math.cos(angle)
    return out


def _vector_logits(tape: Tape, model: VectorLanguageModel, bound: _Bound, tokens: Sequence[int]) -> List[Variable]:
    width = model.width
    inputs = [
        tape.add(bound.rows[token], positional_encoding(p, width, model.positional))
        for p, token in enumerate(tokens)
    ]
    per_head = []
    for head in bound.attention.heads:
        queries = [tape.matvec(head.query, x) for x in inputs]
        keys = [tape.matvec(head.key, x) for x in inputs]
        values = [tape.matvec(head.value, x) for x in inputs]
        outputs, _ = scaled_attention(tape, queries, keys, values, model.attention.scale,
                                      causal=True, score=tape.dot)
        per_head.append(outputs)
    share = 1.0 / len(per_head)
    factor = 1.0 / math.sqrt(width)
    logits = []
    for i, x in enumerate(inputs[:-1]):
        y = tape.add(x, tape.linear_combine([(share, outs[i]) for outs in per_head]))
        hidden = tape.tanh(tape.add(tape.matvec(bound.ffw.w1, y), bound.ffw.b1))
        z = tape.add(y, tape.add(tape.matvec(bound.ffw.w2, hidden), bound.ffw.b2))
        logits.append(tape.stack([tape.scale(tape.dot(z, row), factor) for row in bound.rows]))
    return logits


def _window_logits(tape: Tape, model: LanguageModel, bound: _Bound, tokens: Sequence[int]) -> List[Variable]:
    if model.kind == ModelKind.VECTOR:
        return _vector_logits(tape, model, bound, tokens)
    return _spinor_logits(tape, model, bound, tokens)


def _window_loss(tape: Tape, model: LanguageModel, bound: _Bound, tokens: Sequence[int]) -> Variable:
    """Mean next-token cross-entropy over one window."""
    logits = _window_logits(tape, model, bound, tokens)
    picks = [tape.pick(tape.log_softmax(row), tokens[i + 1]) for i, row in enumerate(logits)]
    return tape.scale(tape.mean(tape.stack(picks)), -1.0)


def log_probs(model: LanguageModel, tokens: Sequence[int]) -> np.ndarray:
    """(len(tokens) - 1, V) next-token log-probabilities within one window."""
    tape = Tape()
    bound = _bind(tape, model, trainable=False)
    rows = _window_logits(tape, model, bound, tokens)
    return np.array([tape.log_softmax(row).data for row in rows])


def _windows(tokens: Sequence[int], window: int) -> List[List[int]]:
    """Non-overlapping chunks; predictions never cross a chunk boundary."""
    chunks = [list(tokens[start:start + window]) for start in range(0, len(tokens), window)]
    return [chunk for chunk in chunks if len(chunk) >= 2]


def perplexity(model: LanguageModel, tokens: Sequence[int], window: Optional[int] = None) -> float:
    """exp of the mean next-token negative log-likelihood."""
    tokens = list(tokens)
    if len(tokens) < 2:
        raise ArgumentError("perplexity needs at least two tokens")
    window = model.window if window is None else window
    if window < 2:
        raise ArgumentError(f"window must be at least 2, got {window}")
    total, count = 0.0, 0
    for chunk in _windows(tokens, window):
        logp = log_probs(model, chunk)
        total -= float(sum(logp[i, chunk[i + 1]] for i in range(len(chunk) - 1)))
        count += len(chunk) - 1
    return math.exp(total / count)


def _validation_sequence(corpus: ToyCorpus) -> List[int]:
    # The last training token is the context for the first validation prediction.
    return corpus.tokens[max(corpus.split - 1, 0):]


def _clip(grads: Dict[str, np.ndarray], limit: float) -> Dict[str, np.ndarray]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > limit:
        logger.debug("clipping gradient norm %.4g to %.4g", norm, limit)
        return {name: g * (limit / norm) for name, g in grads.items()}
    return grads


def _train_step(model: LanguageModel, tokens: Sequence[int], cfg: TrainConfig) -> float:
    tape = Tape()
    bound = _bind(tape, model, trainable=True)
    loss = _window_loss(tape, model, bound, tokens)
    value = float(loss.data[0])
    if not math.isfinite(value):
        raise NumericError(f"loss is not finite at learning rate {cfg.learning_rate}; try a smaller one")
    grads = backward(tape, loss)
    collected = OrderedDict()
    for name, variable in bound.named.items():
        if isinstance(variable, list):
            collected[name] = np.stack([grads[row] for row in variable])
        else:
            collected[name] = grads[variable]
    collected = _clip(collected, cfg.grad_clip)
    for name, param in model.parameters().items():
        param -= cfg.learning_rate * collected[name].reshape(param.shape)
    return value


def _fit(model: LanguageModel, corpus: ToyCorpus, cfg: TrainConfig) -> List[EpochReport]:
    if corpus.split < 2:
        raise ArgumentError("training split needs at least two tokens")
    if max(corpus.tokens) >= len(model.vocab):
        raise ArgumentError("corpus uses token ids outside the model vocabulary")
    chunks = _windows(corpus.train_tokens, cfg.batch)
    validation = _validation_sequence(corpus)

    def report(epoch: int) -> EpochReport:
        row = EpochReport(
            epoch=epoch,
            train_perplexity=perplexity(model, corpus.train_tokens, cfg.batch),
            validation_perplexity=perplexity(model, validation, cfg.batch),
        )
        if not (math.isfinite(row.train_perplexity) and math.isfinite(row.validation_perplexity)):
            raise NumericError(f"perplexity is not finite after epoch {epoch}")
        logger.info("epoch %d train %.4f validation %.4f", epoch, row.train_perplexity,
                    row.validation_perplexity)
        return row

    history = [report(0)]
    for epoch in range(1, cfg.epochs + 1):
        for chunk in chunks:
            try:
                loss = _train_step(model, chunk, cfg)
            except NumericError as exc:
                raise NumericError(f"training diverged in epoch {epoch}: {exc.detail}") from exc
            logger.debug("epoch %d loss %.6f", epoch, loss)
        model.epochs = epoch
        history.append(report(epoch))
    return history


def train_lm(corpus: ToyCorpus, cfg: TrainConfig,
             positional: Optional[PositionalConfig] = None) -> Tuple[SpinorLanguageModel, List[EpochReport]]:
    """Causal single-block spinor LM trained by clipped fixed-step gradient descent."""
    model = initialize_spinor_model(corpus.vocab, cfg, positional)
    logger.info("training spinor LM in %s: %d parameters", cfg.signature, parameter_count(model))
    return model, _fit(model, corpus, cfg)


def train_baseline_vector_lm(corpus: ToyCorpus, cfg: TrainConfig,
                             positional: Optional[PositionalConfig] = None) -> Tuple[VectorLanguageModel, List[EpochReport]]:
    """Same harness with coefficient-vector embeddings and dot-product attention."""
    model = initialize_vector_model(corpus.vocab, cfg, positional)
    logger.info("training baseline LM of width %d: %d parameters", model.width, parameter_count(model))
    return model, _fit(model, corpus, cfg)


def ablate_signatures(corpus: ToyCorpus, signatures: Sequence[AlgebraSignature],
                      cfg: TrainConfig) -> List[AblationRow]:
    """One train_lm run per signature, rows in input order."""
    signatures = list(signatures)
    if not signatures:
        raise ArgumentError("ablation needs at least one signature")
    for sig in signatures:
        if sig.n > settings.ABLATION_MAX_DIMENSION:
            raise ArgumentError(f"{sig} exceeds the ablation limit n <= {settings.ABLATION_MAX_DIMENSION}")
    rows = []
    for sig in signatures:
        run_cfg = cfg.model_copy(update={"p": sig.p, "q": sig.q})
        started = time.perf_counter()
        model, history = train_lm(corpus, run_cfg)
        rows.append(AblationRow(
            signature=str(sig),
            p=sig.p,
            q=sig.q,
            parameters=parameter_count(model),
            final_validation_perplexity=history[-1].validation_perplexity,
            seconds=round(time.perf_counter() - started, 3),
        ))
    return rows


# -- analogies ----------------------------------------------------------------

@dataclass
class FitResult:
    rotor: Multivector
    loss: float
    history: List[float]
    iterations: int

    @property
    def generator(self) -> np.ndarray:
        return bivector_coefficients(bivector_log(self.rotor))


def _check_pairs(pairs: Sequence[Tuple[Multivector, Multivector]], sig: AlgebraSignature) -> None:
    if not pairs:
        raise ArgumentError("fit_rotor needs at least one pair")
    for source, target in pairs:
        if source.sig != sig or target.sig != sig:
            raise ArgumentError(f"pair outside {sig}")


def _rotor_loss(tape: Tape, generator: Variable, pairs, sig: AlgebraSignature) -> Variable:
    R = tape.exp_bivector(tape.scatter(generator, bivector_masks(sig), sig))
    everything = list(range(sig.dim))
    terms = []
    for source, target in pairs:
        diff = tape.gather(tape.linear_combine([(1.0, tape.geometric_product(R, source)), (-1.0, target)]),
                           everything)
        terms.append(tape.dot(diff, diff))
    return tape.sum(tape.stack(terms))


def _loss_and_grad(point: np.ndarray, pairs, sig: AlgebraSignature) -> Tuple[float, np.ndarray]:
    tape = Tape()
    generator = tape.leaf(point)
    loss = _rotor_loss(tape, generator, pairs, sig)
    value = float(loss.data[0])
    if not math.isfinite(value):
        raise NumericError("rotor fit loss is not finite; lower the learning rate")
    return value, backward(tape, loss)[generator]


def _line_search(point: np.ndarray, loss: float, grad: np.ndarray, pairs, sig: AlgebraSignature,
                 step: float):
    """Largest halving of ``step`` with sufficient decrease, then keep halving while the loss improves."""
    slope = float(np.dot(grad, grad))
    while step >= 1e-16:
        candidate = point - step * grad
        candidate_loss, candidate_grad = _loss_and_grad(candidate, pairs, sig)
        if candidate_loss <= loss - settings.ARMIJO_CONSTANT * step * slope:
            break
        step *= 0.5
    else:
        return None
    while step >= 1e-16:
        smaller = point - 0.5 * step * grad
        smaller_loss, smaller_grad = _loss_and_grad(smaller, pairs, sig)
        if smaller_loss >= candidate_loss:
            break
        candidate, candidate_loss, candidate_grad = smaller, smaller_loss, smaller_grad
        step *= 0.5
    return candidate, candidate_loss, candidate_grad


def fit_rotor(pairs: Sequence[Tuple[Multivector, Multivector]], sig: AlgebraSignature, seed: int = 0,
              learning_rate: float = 1.0, max_iterations: int = 500, tolerance: float = 1e-14) -> FitResult:
    """Gradient descent with backtracking on sum ||exp(B) source - target||^2."""
    pairs = list(pairs)
    _check_pairs(pairs, sig)
    if sig.n < 2:
        raise ArgumentError(f"{sig} has no rotation planes")
    if learning_rate <= 0:
        raise ArgumentError(f"learning rate must be positive, got {learning_rate}")
    rng = np.random.default_rng(seed)
    point = rng.normal(scale=settings.INIT_SCALE, size=sig.bivector_count)
    loss, grad = _loss_and_grad(point, pairs, sig)
    history = [loss]
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        if loss <= tolerance or float(np.dot(grad, grad)) <= tolerance ** 2:
            break
        accepted = _line_search(point, loss, grad, pairs, sig, learning_rate)
        if accepted is None:
            logger.debug("line search stalled at iteration %d, loss %.3e", iterations, loss)
            break
        point, loss, grad = accepted
        history.append(loss)
    rotor = canonical_rotor(exp_bivector(bivector(sig, point)))
    logger.info("fit_rotor: loss %.3e after %d iterations", loss, iterations)
    return FitResult(rotor=rotor, loss=loss, history=history, iterations=iterations)


def analogy_eval(R: Multivector, held_out: Sequence[TokenPair], table: EmbeddingTable) -> float:
    """Top-1 accuracy of analogy_apply over the held-out (source, target) pairs."""
    held_out = list(held_out)
    if not held_out:
        raise ArgumentError("held-out set is empty")
    check_rotor(R)
    vocab = table.spinors()
    hits = 0
    for source, target in held_out:
        ranking = analogy_apply(R, vocab[table.token_id(source)], vocab)
        hits += ranking[0][0] == table.token_id(target)
    return hits / len(held_out)


def synthetic_analogy_family(sig: AlgebraSignature, rotor: Multivector, count: int = 12, holdout: int = 4,
                             seed: int = 0, spread: float = 1.0):
    """Vocabulary of sources s_i and targets t_i = rotor s_i.

    Returns (table, training pairs, held-out pairs) with pairs as token strings.
    """
    if not 0 < holdout < count:
        raise ArgumentError(f"holdout must be in 1..{count - 1}, got {holdout}")
    check_rotor(rotor)
    rng = np.random.default_rng(seed)
    sources = rng.normal(scale=spread, size=(count, sig.bivector_count))
    targets = [
        bivector_coefficients(bivector_log(geometric_product(rotor, exp_bivector(bivector(sig, row)))))
        for row in sources
    ]
    vocab = [f"s{i}" for i in range(count)] + [f"t{i}" for i in range(count)]
    table = EmbeddingTable(sig, vocab, np.vstack([sources, np.array(targets)]))
    pairs = [(f"s{i}", f"t{i}") for i in range(count)]
    return table, pairs[: count - holdout], pairs[count - holdout:]


def write_report_csv(rows: Sequence[BaseModel], out: TextIO) -> None:
    """CSV with the row model's field order as header."""
    rows = list(rows)
    if not rows:
        raise ArgumentError("report has no rows")
    columns = list(type(rows[0]).model_fields)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        data = row.model_dump()
        writer.writerow([repr(data[c]) if isinstance(data[c], float) else data[c] for c in columns])
