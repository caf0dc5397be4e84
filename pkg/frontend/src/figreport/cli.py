"""figreport: render campaign artifacts into paper-style figures.

Inputs are "label=path" pairs (bare paths label themselves by file stem).
Exit codes: 0 success, 2 schema/usage error.
"""

import argparse
import os
import sys

from .inputs import SchemaError
from .render import FIGURE_KINDS, FigureSpec, render


def _parse_inputs(items):
    pairs = []
    for item in items:
        label, sep, path = item.partition("=")
        if not sep:
            path = item
            label = os.path.splitext(os.path.basename(item))[0]
        pairs.append((label, path))
    return pairs


def build_parser():
    parser = argparse.ArgumentParser(prog="figreport", description=__doc__)
    parser.add_argument("--kind", required=True, choices=FIGURE_KINDS)
    parser.add_argument("--input", nargs="+", required=True,
                        metavar="LABEL=PATH",
                        help="deviation CSVs (deviation-strips), summary "
                             "JSONs (sdc-bars) or bench JSONs (overhead-bars)")
    parser.add_argument("--out", required=True, help="SVG or PNG output path")
    parser.add_argument("--title", default=None)
    parser.add_argument("--single-panel", action="store_true",
                        help="deviation-strips: all strips in one panel")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(
        kind=args.kind,
        inputs=_parse_inputs(args.input),
        out=args.out,
        panel_per_input=not args.single_panel,
        title=args.title,
    )
    try:
        meta = render(spec)
    except SchemaError as exc:
        print(f"figreport: {exc}", file=sys.stderr)
        return 2
    if meta.get("no_data"):
        print(f"wrote {args.out} (no data)", file=sys.stderr)
    else:
        print(f"wrote {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
