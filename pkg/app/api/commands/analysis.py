import argparse
import logging

from app.core.errors import ArgumentError
from app.schemas.schemas import ModelKind
from app.services.cli_io import (
    attention_matrix,
    load_model,
    matrix_csv,
    project_embeddings,
    projection_csv,
    read_pairs,
    tokens_from_text,
)
from app.services.ga_core import blade_name, even_masks
from app.services.train_tasks import analogy_eval, fit_rotor

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("analogy", help="fit an analogy rotor on token pairs")
    parser.add_argument("--model", required=True)
    parser.add_argument("--pairs", required=True, help="file with one 'source target' pair per line")
    parser.add_argument("--holdout", help="pairs to score; defaults to the fitted pairs")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--lr", type=float, default=1.0)
    parser.add_argument("--iterations", type=int, default=500)
    parser.set_defaults(handler=analogy)

    parser = subparsers.add_parser("attend", help="causal attention weights for one sequence")
    parser.add_argument("--model", required=True)
    parser.add_argument("--text", required=True)
    parser.add_argument("--head", type=int, default=0)
    parser.set_defaults(handler=attend)

    parser = subparsers.add_parser("project", help="PCA projection of the vocabulary")
    parser.add_argument("--model", required=True)
    parser.add_argument("--out", help="CSV file; standard output when omitted")
    parser.set_defaults(handler=project)


def analogy(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    if model.kind != ModelKind.SPINOR:
        raise ArgumentError("analogy rotors need a spinor model")
    table = model.table
    pairs = read_pairs(args.pairs)
    held_out = read_pairs(args.holdout) if args.holdout else pairs
    spinor_pairs = [(table.spinor(source), table.spinor(target)) for source, target in pairs]
    result = fit_rotor(spinor_pairs, table.sig, seed=args.seed, learning_rate=args.lr,
                       max_iterations=args.iterations)
    print(f"accuracy,{analogy_eval(result.rotor, held_out, table)!r}")
    print(f"loss,{result.loss!r}")
    print("blade,coefficient")
    for mask in even_masks(table.sig):
        print(f"{blade_name(mask)},{float(result.rotor[mask])!r}")
    return 0


def attend(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    tokens = tokens_from_text(model, args.text)
    matrix = attention_matrix(model, tokens, args.head)
    print(matrix_csv([model.vocab[t] for t in tokens], matrix), end="")
    return 0


def project(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    projection = project_embeddings(model, args.out)
    if not args.out:
        print(projection_csv(projection.rows), end="")
    return 0
