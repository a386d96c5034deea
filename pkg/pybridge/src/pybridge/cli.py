"""Launcher: serve a checkpoint over the wire contracts, or build a tiny one."""
from __future__ import annotations

import argparse
import logging
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pybridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="serve a model directory over HTTP")
    p_serve.add_argument("--model-dir", required=True)
    p_serve.add_argument("--model-id", default=None, help="default: directory name")
    p_serve.add_argument("--models-dir", default=None, help="where trained children go")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8300)
    p_serve.add_argument("--train-mode", choices=["lora", "full"], default="lora")
    p_serve.add_argument("--device", default="cpu")

    p_tiny = sub.add_parser("make-tiny-model", help="build the tiny demo checkpoint")
    p_tiny.add_argument("--out", required=True)
    p_tiny.add_argument("--seed", type=int, default=0)
    p_tiny.add_argument("--epochs", type=int, default=12)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="[%(asctime)s] %(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .server import create_app

        app = create_app(
            args.model_dir,
            model_id=args.model_id,
            models_dir=args.models_dir,
            train_mode=args.train_mode,
            device=args.device,
        )
        uvicorn.run(app, host=args.host, port=args.port, log_level="info")
        return 0
    if args.command == "make-tiny-model":
        from .tinymodel import build_tiny_checkpoint

        build_tiny_checkpoint(args.out, seed=args.seed, epochs=args.epochs)
        print(f"tiny checkpoint written to {args.out}")
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
