"""Command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys

from modeladapter.server import serve_stdio, serve_tcp


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="model-adapter",
        description="Serve an image classifier over the wire protocol.",
    )
    ap.add_argument(
        "--model",
        default="fixture",
        help="'fixture' for the arithmetic model, or a torchvision model "
        "name such as resnet50, vit_b_16, convnext_large",
    )
    ap.add_argument(
        "--transport",
        default="stdio",
        help="stdio or tcp:<port>; port 0 binds an ephemeral port and prints it",
    )
    ap.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    args = ap.parse_args(argv)

    # stdout carries the protocol, so diagnostics must go to stderr
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(message)s",
    )

    if args.transport == "stdio":
        serve_stdio(args.model)
    elif args.transport.startswith("tcp:"):
        try:
            port = int(args.transport[4:])
        except ValueError:
            ap.error(f"bad tcp port in {args.transport!r}")
        serve_tcp(args.model, port)
    else:
        ap.error(f"unknown transport {args.transport!r} (want stdio or tcp:<port>)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
