"""Command-line entry point: `segbridge serve ...`."""

from __future__ import annotations

import argparse
import sys

from .errors import StartupError
from .model import TRANSPORT_SOCKET, TRANSPORT_STDIO, BridgeConfig
from .server import serve


def _parse_listen(text: str) -> tuple[str, int]:
    host, sep, port_text = text.rpartition(":")
    if not sep or not host:
        raise StartupError(f"--listen wants host:port, got {text!r}")
    try:
        return host, int(port_text)
    except ValueError:
        raise StartupError(f"bad port in {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segbridge",
        description="Serve a Python segmentation callable as a wire-protocol oracle.",
    )
    sub = parser.add_subparsers(dest="command")
    srv = sub.add_parser("serve", help="serve a model until the transport closes")
    which = srv.add_mutually_exclusive_group(required=True)
    which.add_argument("--model", help="module.path:callable taking (H,W,C) uint8 "
                                       "pixels and returning (H,W) integer labels")
    which.add_argument("--backend", choices=["demo"],
                       help="a built-in backend (demo: fixed-palette nearest-centroid)")
    srv.add_argument("--listen", metavar="HOST:PORT",
                     help="serve over TCP instead of stdio; port 0 picks a free "
                          "port, reported on stderr")
    srv.add_argument("--device", default="", help="hint forwarded to the model "
                                                  "if it accepts a device keyword")
    srv.add_argument("--timeout", type=float, default=30.0,
                     help="per-connection idle timeout in socket mode (seconds)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "serve":
        parser.print_help(sys.stderr)
        return 1
    try:
        spec = "segbridge.demo:demo_segment" if args.backend == "demo" else args.model
        cfg = BridgeConfig(
            model_spec=spec,
            transport=TRANSPORT_SOCKET if args.listen else TRANSPORT_STDIO,
            address=_parse_listen(args.listen) if args.listen else None,
            device=args.device,
            timeout=args.timeout,
        )
        serve(cfg)
    except StartupError as exc:
        print(f"segbridge: startup failed: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
