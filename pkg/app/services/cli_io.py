"""Model files, corpus ingestion, Cayley tables and PCA projections."""
import csv
import io
import json
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import (
    ArgumentError,
    DataValidationError,
    FormatVersionError,
    ParseError,
    summarize_validation_error,
)
from app.models.models import (
    AttentionParams,
    EmbeddingTable,
    FeedForwardParams,
    HeadParams,
    SpinorLanguageModel,
    ToyCorpus,
    VectorLanguageModel,
)
from app.schemas.schemas import (
    AttentionFile,
    FeedForwardFile,
    HeadFile,
    MetadataFile,
    ModelFile,
    ModelKind,
    ProjectionRow,
    SignatureFile,
)
from app.services.attention import embed_sequence, head_weights, scaled_attention
from app.services.autodiff import Tape
from app.services.ga_core import AlgebraSignature, blade_name, blade_product, canonical_order, even_masks
from app.services.train_tasks import corpus_from_tokens, positional_encoding
from app.utils.files import PathLike, atomic_write_text, read_utf8_text

logger = logging.getLogger(__name__)

LanguageModel = Union[SpinorLanguageModel, VectorLanguageModel]


# -- model files ------------------------------------------------------------------

def model_to_file(model: LanguageModel) -> ModelFile:
    params = model.parameters()
    heads = [
        HeadFile(query=np.ravel(h.query).tolist(), key=np.ravel(h.key).tolist(), value=np.ravel(h.value).tolist())
        for h in model.attention.heads
    ]
    ffw = model.ffw
    return ModelFile(
        format_version=settings.MODEL_FORMAT_VERSION,
        kind=model.kind,
        signature=SignatureFile(p=model.sig.p, q=model.sig.q),
        vocab=list(model.vocab),
        generators=np.asarray(params["generators"]).tolist(),
        positional=model.positional,
        attention=AttentionFile(
            heads=heads,
            ffw=FeedForwardFile(w1=ffw.w1.tolist(), b1=ffw.b1.tolist(), w2=ffw.w2.tolist(), b2=ffw.b2.tolist()),
        ),
        metadata=MetadataFile(seed=model.seed, epochs=model.epochs, window=model.window),
    )


def save_model(model: LanguageModel, path: PathLike) -> None:
    """JSON model file; floats use shortest round-trip decimal form."""
    atomic_write_text(path, model_to_file(model).model_dump_json(indent=2) + "\n")


def _matrix(rows: List[List[float]], shape: Tuple[int, int], name: str) -> np.ndarray:
    arr = np.array(rows, dtype=np.float64)
    if arr.shape != shape and not (arr.size == 0 and 0 in shape):
        raise DataValidationError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr.reshape(shape)


def _vector(values: List[float], size: int, name: str) -> np.ndarray:
    if len(values) != size:
        raise DataValidationError(f"{name} has {len(values)} entries, expected {size}")
    return np.array(values, dtype=np.float64)


def model_from_file(doc: ModelFile) -> LanguageModel:
    """Check cross-field consistency and build the model."""
    try:
        sig = AlgebraSignature(doc.signature.p, doc.signature.q)
    except ArgumentError as exc:
        raise DataValidationError(f"signature: {exc.detail}")
    vocab = doc.vocab
    if len(set(vocab)) != len(vocab):
        raise DataValidationError("vocab entries must be unique")
    if len(doc.generators) != len(vocab):
        raise DataValidationError(f"{len(doc.generators)} generator rows for {len(vocab)} vocab tokens")
    d = sig.bivector_count
    for token, row in zip(vocab, doc.generators):
        if len(row) != d:
            raise DataValidationError(f"generator for token {token!r} has {len(row)} entries, expected {d}")
    for i, j in doc.positional.planes:
        if j > sig.n:
            raise DataValidationError(f"positional plane ({i}, {j}) outside {sig}")
    if not doc.attention.heads:
        raise DataValidationError("attention needs at least one head")
    vector = doc.kind == ModelKind.VECTOR
    map_size = d * d if vector else d
    heads = []
    for index, head in enumerate(doc.attention.heads):
        maps = [_vector(getattr(head, name), map_size, f"head {index} {name}") for name in ("query", "key", "value")]
        heads.append(HeadParams(*(m.reshape(d, d) if vector else m for m in maps)))
    width = d if vector else sig.even_dim
    hidden = len(doc.attention.ffw.b1)
    ffw = FeedForwardParams(
        w1=_matrix(doc.attention.ffw.w1, (hidden, width), "ffw.w1"),
        b1=np.array(doc.attention.ffw.b1, dtype=np.float64),
        w2=_matrix(doc.attention.ffw.w2, (width, hidden), "ffw.w2"),
        b2=_vector(doc.attention.ffw.b2, width, "ffw.b2"),
    )
    generators = np.array(doc.generators, dtype=np.float64).reshape(len(vocab), d)
    meta = doc.metadata
    if vector:
        model = VectorLanguageModel(
            sig=sig, vocab=list(vocab), embeddings=generators, positional=doc.positional,
            attention=AttentionParams(heads, float(d)), ffw=ffw,
            seed=meta.seed, epochs=meta.epochs, window=meta.window,
        )
    else:
        model = SpinorLanguageModel(
            table=EmbeddingTable(sig, list(vocab), generators), positional=doc.positional,
            attention=AttentionParams(heads, float(sig.even_dim)), ffw=ffw,
            seed=meta.seed, epochs=meta.epochs, window=meta.window,
        )
    return model


def parse_model(text: str) -> LanguageModel:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed model file: {exc.msg}", exc.lineno, exc.colno)
    if not isinstance(data, dict):
        raise DataValidationError("model file must hold a JSON object")
    version = data.get("format_version")
    if version != settings.MODEL_FORMAT_VERSION:
        raise FormatVersionError(
            f"unsupported format_version {version!r}; this build reads version {settings.MODEL_FORMAT_VERSION}"
        )
    try:
        doc = ModelFile.model_validate(data)
    except ValidationError as exc:
        raise DataValidationError(summarize_validation_error(exc))
    return model_from_file(doc)


def load_model(path: PathLike) -> LanguageModel:
    model = parse_model(read_utf8_text(path))
    logger.info("loaded %s model in %s with %d tokens", model.kind.value, model.sig, len(model.vocab))
    return model


# -- corpora and pair files --------------------------------------------------------

def ingest_corpus(path: PathLike, max_vocab: Optional[int] = None) -> ToyCorpus:
    """Whitespace tokens, first-appearance vocabulary, 90/10 split."""
    words = read_utf8_text(path).split()
    if not words:
        raise ArgumentError(f"corpus file {path} is empty")
    corpus = corpus_from_tokens(words, max_vocab)
    logger.info("corpus %s: %d tokens, vocab %d, split %d", path, len(corpus.tokens), len(corpus.vocab),
                corpus.split)
    return corpus


def parse_pairs(text: str) -> List[Tuple[str, str]]:
    """One ``source target`` pair per line; blank lines and ``#`` comments are skipped."""
    pairs = []
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 2:
            raise ParseError(f"expected two tokens, found {len(fields)}", number, line.index(stripped) + 1)
        pairs.append((fields[0], fields[1]))
    return pairs


def read_pairs(path: PathLike) -> List[Tuple[str, str]]:
    pairs = parse_pairs(read_utf8_text(path))
    if not pairs:
        raise ArgumentError(f"pair file {path} holds no pairs")
    return pairs


def parse_signatures(text: str) -> List[AlgebraSignature]:
    """``"2,0;3,0;0,3"`` -> [Cl(2,0), Cl(3,0), Cl(0,3)]."""
    signatures = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        parts = item.split(",")
        if len(parts) != 2 or not all(part.strip().isdigit() for part in parts):
            raise ArgumentError(f"signature {item!r} must look like p,q")
        signatures.append(AlgebraSignature(int(parts[0]), int(parts[1])))
    if not signatures:
        raise ArgumentError("no signatures given")
    return signatures


def tokens_from_text(model: LanguageModel, text: str) -> List[int]:
    index = {token: i for i, token in enumerate(model.vocab)}
    unk = index.get(settings.UNK_TOKEN)
    ids = []
    for word in text.split():
        if word in index:
            ids.append(index[word])
        elif unk is not None:
            ids.append(unk)
        else:
            raise ArgumentError(f"unknown token {word!r} and the model has no {settings.UNK_TOKEN}")
    if not ids:
        raise ArgumentError("text holds no tokens")
    return ids


# -- Cayley tables ----------------------------------------------------------------

def dump_cayley_table(sig: AlgebraSignature) -> str:
    """Signed blade products, rows and columns in canonical order."""
    if sig.n > settings.MAX_TABLE_DIMENSION:
        raise ArgumentError(
            f"{sig} would need a {sig.dim} x {sig.dim} table; "
            f"tables are limited to n <= {settings.MAX_TABLE_DIMENSION}"
        )
    order = canonical_order(sig)
    cells = [[blade_name(b) for b in order]]
    for a in order:
        row = []
        for b in order:
            sign, blade = blade_product(sig, a, b)
            row.append(("-" if sign < 0 else "") + blade_name(blade))
        cells.append(row)
    labels = [""] + [blade_name(a) for a in order]
    width = max(len(cell) for row in cells for cell in row) + 2
    lines = [f"Cayley table for {sig}"]
    for label, row in zip(labels, cells):
        lines.append((label.ljust(width) + "".join(cell.ljust(width) for cell in row)).rstrip())
    return "\n".join(lines) + "\n"


# -- PCA projection -------------------------------------------------------------

@dataclass
class Projection:
    rows: List[ProjectionRow]
    explained_variance: float
    total_variance: float


def embedding_coordinates(model: LanguageModel) -> np.ndarray:
    """Even-blade spinor coefficients per token (vector models: raw embeddings)."""
    if model.kind == ModelKind.VECTOR:
        return np.array(model.embeddings, dtype=np.float64)
    masks = even_masks(model.sig)
    return np.array([psi.coeffs[masks] for psi in model.table.spinors()])


def _orient(component: np.ndarray) -> np.ndarray:
    # Largest-magnitude loading positive; first index wins ties.
    lead = int(np.argmax(np.abs(component)))
    return -component if component[lead] < 0 else component


def project_embeddings(model: LanguageModel, path: Optional[PathLike] = None) -> Projection:
    """Top-two principal components of the mean-centred token coordinates."""
    data = embedding_coordinates(model)
    if data.shape[0] < 2:
        raise ArgumentError("projection needs at least two vocabulary tokens")
    centred = data - data.mean(axis=0)
    covariance = centred.T @ centred / data.shape[0]
    values, vectors = np.linalg.eigh(covariance)
    order = np.argsort(values)[::-1]
    values, vectors = np.clip(values[order], 0.0, None), vectors[:, order]
    total = float(values.sum())
    cutoff = 1e-12 * max(1.0, total)
    coords = np.zeros((data.shape[0], 2))
    for k in range(min(2, values.size)):
        if values[k] > cutoff:
            coords[:, k] = centred @ _orient(vectors[:, k])
    if total <= cutoff:
        logger.warning("all embeddings coincide; projecting every token to the origin")
    explained = float(sum(v for v in values[:2] if v > cutoff))
    rows = [ProjectionRow(token=token, x=float(x), y=float(y)) for token, (x, y) in zip(model.vocab, coords)]
    logger.info("PCA explains %.6g of %.6g total variance", explained, total)
    projection = Projection(rows=rows, explained_variance=explained, total_variance=total)
    if path is not None:
        atomic_write_text(path, projection_csv(projection.rows))
    return projection


def projection_csv(rows: Sequence[ProjectionRow]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(settings.CSV_COLUMNS_PROJECTION)
    for row in rows:
        writer.writerow([row.token, repr(row.x), repr(row.y)])
    return out.getvalue()


# -- attention inspection ---------------------------------------------------------

def attention_matrix(model: LanguageModel, tokens: Sequence[int], head: int = 0) -> np.ndarray:
    """Causal attention weights of one head over a single sequence."""
    if not 0 <= head < model.attention.head_count:
        raise ArgumentError(f"head {head} out of range 0..{model.attention.head_count - 1}")
    params = model.attention.heads[head]
    if model.kind == ModelKind.SPINOR:
        inputs = embed_sequence(tokens, model.table, model.positional)
        return head_weights(inputs, params, model.attention.scale, causal=True)
    tape = Tape()
    inputs = [model.embeddings[t] + positional_encoding(p, model.width, model.positional)
              for p, t in enumerate(tokens)]
    queries = [tape.constant(params.query @ x) for x in inputs]
    keys = [tape.constant(params.key @ x) for x in inputs]
    _, weights = scaled_attention(tape, queries, keys, keys, model.attention.scale, causal=True, score=tape.dot)
    matrix = np.zeros((len(tokens), len(tokens)))
    for i, w in enumerate(weights):
        matrix[i, : w.data.size] = w.data
    return matrix


def matrix_csv(labels: Sequence[str], matrix: np.ndarray) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["query"] + list(labels))
    for label, row in zip(labels, matrix):
        writer.writerow([label] + [repr(float(v)) for v in row])
    return out.getvalue()
