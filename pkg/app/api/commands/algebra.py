import argparse
import logging

from app.core.errors import ArgumentError
from app.services.cli_io import dump_cayley_table
from app.services.ga_core import AlgebraSignature, basis_vector, exp_bivector
from app.services.spinor import default_positional_config, orbit_table, plane_blade

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("algebra", help="summarize a signature Cl(p,q)")
    parser.add_argument("--p", type=int, default=3)
    parser.add_argument("--q", type=int, default=0)
    parser.add_argument("--table", action="store_true", help="print the Cayley table")
    parser.set_defaults(handler=algebra)

    parser = subparsers.add_parser("demo720", help="one-sided vs two-sided orbits over a 720 degree turn")
    parser.add_argument("--p", type=int, default=3)
    parser.add_argument("--q", type=int, default=0)
    parser.add_argument("--steps", type=int, default=8)
    parser.set_defaults(handler=demo720)


def algebra(args: argparse.Namespace) -> int:
    sig = AlgebraSignature(args.p, args.q)
    print(f"signature,{sig}")
    for name, value in (("p", sig.p), ("q", sig.q), ("n", sig.n), ("dim", sig.dim),
                        ("even_dim", sig.even_dim), ("bivectors", sig.bivector_count)):
        print(f"{name},{value}")
    if args.table:
        print(dump_cayley_table(sig), end="")
    return 0


def demo720(args: argparse.Namespace) -> int:
    sig = AlgebraSignature(args.p, args.q)
    planes = default_positional_config(sig).planes
    if not planes:
        raise ArgumentError(f"{sig} has no plane whose bivector squares to -1")
    first = planes[0]
    plane = plane_blade(sig, first)
    psi = exp_bivector(plane * 0.3)
    rows = orbit_table(plane, psi, basis_vector(sig, first[0]), args.steps)
    print("step,angle_deg,one_sided_sign,two_sided_identity")
    for row in rows:
        print(f"{row.step},{row.angle_deg:.1f},{row.one_sided_sign},{str(row.two_sided_identity).lower()}")
    return 0
