"""Adapter command line: serve the oracle protocol or export guidance maps."""

from __future__ import annotations

import argparse
import json
import sys

from .attribution import METHODS, export_guidance
from .models import load_config
from .serve import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="model-adapter",
        description="Torch classifier behind the stdio oracle protocol")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="answer hello/logits requests on stdio")
    p.add_argument("--config", required=True, help="TOML adapter config")

    p = sub.add_parser("export", help="write an attribution guidance map")
    p.add_argument("--config", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "serve":
            serve(cfg)
        else:
            export_guidance(cfg, args.image, args.method, args.out,
                            target=args.target)
        return 0
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": str(exc), "stage": args.command}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
