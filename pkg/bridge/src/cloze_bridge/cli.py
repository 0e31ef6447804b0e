"""Bridge entry point.

    clozetag-bridge --stub --stdio
    clozetag-bridge --model dmis-lab/biobert-v1.1 --tcp --port 8700
"""

from __future__ import annotations

import argparse
import sys

from .server import TcpServer, serve_stdio
from .stub import StubBackend


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clozetag-bridge",
        description="Masked-LM scorer server for the clozetag wire protocol",
    )
    mode = parser.add_mutually_exclusive_group(required=True)
    mode.add_argument("--stub", action="store_true", help="hash-based stub backend")
    mode.add_argument("--model", help="pretrained model name or local path")
    transport = parser.add_mutually_exclusive_group()
    transport.add_argument("--stdio", action="store_true", help="serve on stdio (default)")
    transport.add_argument("--tcp", action="store_true", help="serve on TCP")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8700)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-seq", type=int, default=128)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--checkpoint-dir", default=None)
    return parser


def make_backend(args: argparse.Namespace):
    if args.stub:
        return StubBackend()
    from .model import ModelBackend

    return ModelBackend(
        model_path=args.model,
        device=args.device,
        max_seq=args.max_seq,
        batch_size=args.batch_size,
        checkpoint_dir=args.checkpoint_dir,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        backend = make_backend(args)
    except Exception as exc:
        print(f"clozetag-bridge: cannot initialize backend: {exc}", file=sys.stderr)
        return 1
    if args.tcp:
        server = TcpServer(backend, host=args.host, port=args.port)
        print(f"clozetag-bridge: listening on {server.host}:{server.port}", file=sys.stderr)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.close()
        return 0
    serve_stdio(backend)
    return 0


if __name__ == "__main__":
    sys.exit(main())
