"""Command line for the scoring service: pick a transport and a scorer."""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from . import __version__
from .scorers import SCORERS
from .server import serve_stdio, serve_tcp


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scorer-service",
        description="Serve pair-scoring requests over the re-ranker wire protocol.",
    )
    parser.add_argument(
        "--version", action="version", version=f"scorer-service {__version__}"
    )
    transport = parser.add_mutually_exclusive_group(required=True)
    transport.add_argument(
        "--port", type=int, default=None,
        help="listen on this TCP port (0 picks a free one, printed to stderr)",
    )
    transport.add_argument(
        "--stdio", action="store_true",
        help="serve one session over stdin/stdout",
    )
    parser.add_argument(
        "--host", default="127.0.0.1", help="TCP bind address (default 127.0.0.1)"
    )
    parser.add_argument(
        "--scorer", default="jaccard", choices=sorted(SCORERS),
        help="which scorer to serve (default: jaccard)",
    )
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.stdio:
            serve_stdio(args.scorer)
        else:
            serve_tcp(args.host, args.port, args.scorer)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
