import argparse
import logging
import sys

from pydantic import ValidationError

from app.core.errors import ArgumentError, summarize_validation_error
from app.schemas.schemas import TrainConfig
from app.services.cli_io import ingest_corpus, parse_signatures, save_model
from app.services.train_tasks import ablate_signatures, train_baseline_vector_lm, train_lm, write_report_csv

logger = logging.getLogger(__name__)


def _training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--corpus", required=True)
    parser.add_argument("--p", type=int, default=3)
    parser.add_argument("--q", type=int, default=0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--lr", type=float, default=0.3)
    parser.add_argument("--batch", type=int, default=8, help="window length in tokens")
    parser.add_argument("--heads", type=int, default=1)
    parser.add_argument("--max-vocab", type=int, default=None)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train-lm", help="train the spinor language model")
    _training_flags(parser)
    parser.add_argument("--out", help="model file to write")
    parser.set_defaults(handler=train_spinor)

    parser = subparsers.add_parser("train-baseline", help="train the vector-embedding baseline")
    _training_flags(parser)
    parser.add_argument("--out", help="model file to write")
    parser.set_defaults(handler=train_baseline)

    parser = subparsers.add_parser("ablate", help="train one spinor model per signature")
    _training_flags(parser)
    parser.add_argument("--signatures", required=True, help='e.g. "2,0;3,0;0,3"')
    parser.set_defaults(handler=ablate)


def train_config(args: argparse.Namespace) -> TrainConfig:
    try:
        return TrainConfig(
            seed=args.seed, learning_rate=args.lr, epochs=args.epochs, batch=args.batch,
            p=args.p, q=args.q, heads=args.heads,
        )
    except ValidationError as exc:
        raise ArgumentError(summarize_validation_error(exc))


def _train(args: argparse.Namespace, trainer) -> int:
    cfg = train_config(args)
    corpus = ingest_corpus(args.corpus, args.max_vocab)
    model, history = trainer(corpus, cfg)
    write_report_csv(history, sys.stdout)
    if args.out:
        save_model(model, args.out)
    return 0


def train_spinor(args: argparse.Namespace) -> int:
    return _train(args, train_lm)


def train_baseline(args: argparse.Namespace) -> int:
    return _train(args, train_baseline_vector_lm)


def ablate(args: argparse.Namespace) -> int:
    cfg = train_config(args)
    signatures = parse_signatures(args.signatures)
    corpus = ingest_corpus(args.corpus, args.max_vocab)
    write_report_csv(ablate_signatures(corpus, signatures, cfg), sys.stdout)
    return 0
