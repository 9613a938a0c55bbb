"""Command line entry: plots <run-dir> --kind <k> --out <file>."""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, render
from .schemas import SchemaMismatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plots", description="Render a figure from a run directory.")
    parser.add_argument("run_dir", help="directory holding the run's CSVs")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--out", required=True, help="output image path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        meta = render(args.run_dir, args.kind, args.out)
    except SchemaMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    shown = {k: v for k, v in meta.items() if k != "content_sha256"}
    print(f"wrote {args.out}: {shown}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
