"""Command line interface.

    plotgen render --family heatmap --in heatmap.csv --out heatmap.png
    plotgen render-all --in <csv-dir> --out <img-dir>
    plotgen list
"""

from __future__ import annotations

import argparse
import os
import sys

from .render import FAMILIES, FAMILY_SOURCES, PlotSpec, render
from .schema import EmptyData, SchemaMismatch


def _cmd_list(args) -> int:
    for family in FAMILIES:
        print(f"{family:<20} reads {FAMILY_SOURCES[family]}.csv")
    return 0


def _cmd_render(args) -> int:
    spec = PlotSpec(family=args.family, inputs=args.infile, output=args.out,
                    title=args.title)
    path = render(spec)
    print(f"wrote {path}")
    return 0


def _cmd_render_all(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    written = 0
    for family in FAMILIES:
        source = os.path.join(args.infile, f"{FAMILY_SOURCES[family]}.csv")
        out = os.path.join(args.out, f"{family}.png")
        if not os.path.exists(source):
            spec = PlotSpec(family=family, inputs=[os.devnull], output=out,
                            options={"skip_reason": f"{FAMILY_SOURCES[family]}.csv "
                                                    f"absent from bundle"})
            try:
                render(spec)
            except EmptyData:
                pass
            continue
        render(PlotSpec(family=family, inputs=[source], output=out))
        written += 1
    print(f"rendered {written} families into {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="plotgen")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="figure families and their CSV sources")

    r = sub.add_parser("render", help="render one figure family")
    r.add_argument("--family", required=True, choices=FAMILIES)
    r.add_argument("--in", dest="infile", required=True, nargs="+")
    r.add_argument("--out", required=True)
    r.add_argument("--title")

    ra = sub.add_parser("render-all", help="render every family from a bundle dir")
    ra.add_argument("--in", dest="infile", required=True)
    ra.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    handlers = {"list": _cmd_list, "render": _cmd_render, "render-all": _cmd_render_all}
    try:
        return handlers[args.command](args)
    except (SchemaMismatch, EmptyData, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
