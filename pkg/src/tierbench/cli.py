"""Command line interface.

    tierbench probe                      # capability + topology report
    tierbench list                       # experiment kinds and presets
    tierbench run config.json --out DIR [--format csv|json]
    tierbench run --preset fig8 --scale desk --out DIR
    tierbench emit --in bundle.json --format csv --out DIR
    tierbench plot-data BUNDLE --out DIR # per-figure CSV re-export
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import presets, report, runner, topology
from .errors import TierbenchError


def _cmd_probe(args) -> int:
    caps = runner.capability_probe()
    doc = {"capabilities": caps}
    try:
        doc["topology"] = topology.discover().to_manifest()
    except TierbenchError as exc:
        doc["topology_error"] = str(exc)
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


def _cmd_list(args) -> int:
    print("experiment kinds:")
    for kind, spec in sorted(runner.EXPERIMENTS.items()):
        reqs = ",".join(spec.requires) or "-"
        print(f"  {kind:<20} requires: {reqs}")
    print("presets:")
    for figure in presets.FIGURES:
        print(f"  {figure}")
    return 0


def _emit(bundle: report.ReportBundle, fmt: str, out: str) -> None:
    if fmt == "csv":
        paths = report.emit_csv(bundle, out)
        print(f"wrote {len(paths)} files under {out}")
    else:
        path = report.emit_json(bundle, out if out.endswith(".json")
                                else os.path.join(out, "bundle.json"))
        print(f"wrote {path}")


def _cmd_run(args) -> int:
    if args.preset:
        fp = presets.preset(args.preset, args.scale)
        config = fp.config
    else:
        if not args.config:
            print("error: provide a config file or --preset", file=sys.stderr)
            return 2
        config = runner.load_config(args.config)
        fp = None
    if args.out:
        config.output_dir = args.out
    bundle = runner.run_suite(config)
    if fp is not None:
        rows = presets.annotation_rows(fp, topology.discover())
        if rows:
            bundle.add_rows("annotations", rows, f"{fp.figure}-annotations")
    os.makedirs(config.output_dir, exist_ok=True)
    _emit(bundle, args.format, config.output_dir)
    failures = [r for r in bundle.tables.get("experiment_log", [])
                if r["status"] == "failed"]
    for row in bundle.tables.get("experiment_log", []):
        print(f"  [{row['status']:>8}] {row['experiment_id']}"
              + (f": {row['reason']}" if row["reason"] else ""))
    return 1 if failures else 0


def _load_bundle(path: str) -> report.ReportBundle:
    if os.path.isdir(path):
        return report.parse_csv(path)
    return report.parse_json(path)


def _cmd_emit(args) -> int:
    bundle = _load_bundle(args.infile)
    _emit(bundle, args.format, args.out)
    return 0


def _cmd_plot_data(args) -> int:
    """Re-export per-figure CSVs (rows grouped by experiment id prefix)."""
    bundle = _load_bundle(args.bundle)
    figures = sorted({row["experiment_id"].split("-")[0]
                      for rows in bundle.tables.values() for row in rows})
    os.makedirs(args.out, exist_ok=True)
    written = 0
    for figure in figures:
        sub = report.ReportBundle(manifest=bundle.manifest,
                                  schema_version=bundle.schema_version)
        for family, rows in bundle.tables.items():
            keep = [r for r in rows if r["experiment_id"].split("-")[0] == figure]
            if keep:
                sub.tables[family] = keep
        outdir = os.path.join(args.out, figure)
        report.emit_csv(sub, outdir)
        written += 1
    print(f"wrote per-figure data for {written} figure groups under {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="tierbench")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("probe", help="report host capabilities and topology")
    sub.add_parser("list", help="list experiment kinds and presets")

    run = sub.add_parser("run", help="run a suite config or preset")
    run.add_argument("config", nargs="?", help="suite config JSON")
    run.add_argument("--preset", choices=presets.FIGURES)
    run.add_argument("--scale", choices=["paper", "desk"], default="desk")
    run.add_argument("--out", default=os.environ.get("TIERBENCH_OUT"))
    run.add_argument("--format", choices=["csv", "json"], default="csv")

    emit = sub.add_parser("emit", help="re-encode a bundle")
    emit.add_argument("--in", dest="infile", required=True)
    emit.add_argument("--format", choices=["csv", "json"], required=True)
    emit.add_argument("--out", required=True)

    plot = sub.add_parser("plot-data", help="re-export per-figure CSVs")
    plot.add_argument("bundle")
    plot.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    handlers = {"probe": _cmd_probe, "list": _cmd_list, "run": _cmd_run,
                "emit": _cmd_emit, "plot-data": _cmd_plot_data}
    try:
        return handlers[args.command](args)
    except TierbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
