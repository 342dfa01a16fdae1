"""CLI: run the shim under uvicorn.

    ira-shim --port 8901 --fixtures fixtures.json
    ira-shim --port 8901 --model vqa=Salesforce/blip2-opt-2.7b --device cuda
"""

from __future__ import annotations

import argparse

import uvicorn

from .app import create_app
from .config import ShimConfig


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ira-shim")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8901)
    parser.add_argument("--fixtures", help="fixture file path (enables fixture mode)")
    parser.add_argument(
        "--model",
        action="append",
        default=[],
        metavar="ROLE=NAME",
        help="model identifier per role (repeatable)",
    )
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--embed-dim", type=int, default=64)
    args = parser.parse_args(argv)

    models = {}
    for spec in args.model:
        role, _, name = spec.partition("=")
        if not name:
            parser.error(f"--model expects ROLE=NAME, got {spec!r}")
        models[role] = name

    config = ShimConfig(
        port=args.port,
        host=args.host,
        models=models,
        device=args.device,
        fixture_path=args.fixtures,
        embed_dim=args.embed_dim,
    )
    uvicorn.run(create_app(config), host=config.host, port=config.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
