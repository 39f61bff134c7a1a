"""plots <kind> --in CSV [CSV...] --out FILE [--style JSON]"""

from __future__ import annotations

import argparse
import json
import sys

from .render import render
from .schemas import KINDS, SchemaError, build_spec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plots", description="Render monoflow CSV exports as SVG figures")
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        help="input CSVs (classified by their headers)")
    parser.add_argument("--out", required=True, help="output SVG path")
    parser.add_argument("--style", help="JSON styling options")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        style = json.loads(args.style) if args.style else {}
    except json.JSONDecodeError as exc:
        print(f"error: bad --style JSON: {exc}", file=sys.stderr)
        return 1
    try:
        spec = build_spec(args.kind, args.inputs, args.out, style)
        render(spec)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
