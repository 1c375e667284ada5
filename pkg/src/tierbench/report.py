"""Versioned result bundles with lossless CSV and JSON encodings.

One CSV per result family plus manifest.json, or a single JSON document.
Column sets are fixed per family (the plotting component and external
tools share this contract); every row carries the environment-manifest
hash so any number can be traced back to the machine state that
produced it.  Emit -> parse -> emit is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

from .errors import IoError, SchemaMismatch

SCHEMA_VERSION = 1

# column name -> type tag; "opt_*" admits empty cells
#   i: int, f: float, s: str, b: bool, j: compact json
_COMMON = [("schema_version", "i"), ("manifest_hash", "s"), ("experiment_id", "s")]

FAMILIES: dict[str, list[tuple[str, str]]] = {
    "latency": _COMMON + [
        ("op", "s"), ("pattern", "s"), ("node", "opt_i"), ("tier", "s"),
        ("footprint_bytes", "i"), ("stride_bytes", "i"), ("num_blocks", "i"),
        ("repeats", "i"), ("rounds_per_sample", "i"), ("flush_each", "b"),
        ("fence_policy", "s"), ("prefetchers", "s"), ("hint", "opt_s"),
        ("n_samples", "i"), ("mean_ns", "f"), ("p50_ns", "f"), ("p95_ns", "f"),
        ("p99_ns", "f"), ("stdev_ns", "f"), ("min_ns", "f"), ("max_ns", "f"),
        ("notes", "opt_s"),
    ],
    "bandwidth": _COMMON + [
        ("op", "s"), ("pattern", "s"), ("node", "opt_i"), ("threads", "i"),
        ("access_width_bytes", "i"), ("window_s", "f"), ("trials", "i"),
        ("gib_per_s", "f"), ("prefetchers", "s"), ("notes", "opt_s"),
    ],
    "loaded_latency": _COMMON + [
        ("node", "opt_i"), ("offered_load_threads", "i"),
        ("achieved_gib_per_s", "f"), ("probe_latency_ns", "f"),
        ("probe_footprint_bytes", "i"), ("notes", "opt_s"),
    ],
    "interleave": _COMMON + [
        ("weights", "j"), ("op", "s"), ("threads", "i"),
        ("aggregate_gib_per_s", "f"), ("mechanism", "s"), ("physical", "b"),
        ("notes", "opt_s"),
    ],
    "flush": _COMMON + [
        ("instruction", "s"), ("state", "s"), ("size_bytes", "i"), ("lines", "i"),
        ("total_ns", "f"), ("ns_per_line", "f"), ("per_line_fence", "b"),
        ("notes", "opt_s"),
    ],
    "contention": _COMMON + [
        ("lock_kind", "s"), ("thread", "i"), ("cpu", "i"), ("iterations", "i"),
        ("ops", "i"), ("elapsed_ns", "f"), ("branch_count", "opt_i"),
        ("spin_retries", "i"), ("counter_source", "s"), ("node", "opt_i"),
        ("notes", "opt_s"),
    ],
    "lfds": _COMMON + [
        ("structure", "s"), ("placement", "s"), ("initial_elements", "i"),
        ("element_size", "i"), ("footprint_bytes", "i"), ("ops_per_thread", "i"),
        ("total_time_ns", "f"), ("data_node", "i"), ("setter_cpu", "i"),
        ("getter_cpu", "i"), ("verified", "b"), ("notes", "opt_s"),
    ],
    "heatmap": _COMMON + [
        ("instruction_class", "s"), ("node", "opt_i"), ("stride_bytes", "i"),
        ("num_blocks", "i"), ("footprint_bytes", "i"), ("mean_ns", "opt_f"),
        ("rounds", "i"), ("cat_mask", "opt_s"), ("snc_mode", "s"),
        ("prefetchers", "s"), ("skipped", "b"), ("notes", "opt_s"),
    ],
    "knee": _COMMON + [
        ("instruction_class", "s"), ("node", "opt_i"), ("reference_stride", "i"),
        ("estimated_capacity_bytes", "i"), ("threshold_ns", "f"),
        ("confidence", "s"), ("notes", "opt_s"),
    ],
    "prefetch_footprint": _COMMON + [
        ("prefetcher", "s"), ("mode", "s"), ("stride_bytes", "i"),
        ("blocks_before_prefetch", "opt_i"), ("miss_reference_ns", "f"),
        ("threshold_ns", "f"), ("notes", "opt_s"),
    ],
    "copy": _COMMON + [
        ("engine", "s"), ("size_bytes", "i"), ("cached", "b"), ("threads", "i"),
        ("latency_ns", "f"), ("gib_per_s", "f"), ("verified", "b"),
        ("notes", "opt_s"),
    ],
    "conflict": _COMMON + [
        ("p0_mask", "s"), ("p1_mask", "s"), ("p1_mean_latency_ns", "f"),
        ("notes", "opt_s"),
    ],
    "handoff": _COMMON + [
        ("working_set_bytes", "i"), ("t0_latency_ns", "f"), ("t1_latency_ns", "f"),
        ("t1_miss_rate", "opt_f"), ("node", "opt_i"), ("notes", "opt_s"),
    ],
    "latency_samples": _COMMON + [
        ("op", "s"), ("pattern", "s"), ("node", "opt_i"), ("tier", "s"),
        ("hint", "opt_s"), ("sample_index", "i"), ("ns", "f"),
    ],
    "experiment_log": _COMMON + [
        ("kind", "s"), ("status", "s"), ("reason", "opt_s"),
    ],
    "annotations": _COMMON + [
        ("figure", "s"), ("hardware_class", "s"), ("matched", "b"), ("note", "s"),
    ],
}


@dataclass
class ReportBundle:
    manifest: dict
    tables: dict[str, list[dict]] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def manifest_hash(self) -> str:
        return manifest_hash(self.manifest)

    def add_rows(self, family: str, rows: list[dict], experiment_id: str) -> None:
        if family not in FAMILIES:
            raise ValueError(f"unknown result family {family!r}")
        table = self.tables.setdefault(family, [])
        for row in rows:
            full = {
                "schema_version": self.schema_version,
                "manifest_hash": self.manifest_hash,
                "experiment_id": experiment_id,
            }
            full.update(row)
            _check_row(family, full)
            table.append(full)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "manifest": self.manifest,
            "tables": {k: self.tables[k] for k in sorted(self.tables)},
        }


def manifest_hash(manifest: dict) -> str:
    canon = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _check_row(family: str, row: dict) -> None:
    columns = FAMILIES[family]
    names = {name for name, _ in columns}
    extra = set(row) - names
    if extra:
        raise ValueError(f"{family} row carries unknown columns {sorted(extra)}")
    for name, kind in columns:
        if name not in row or row[name] is None:
            if kind.startswith("opt_"):
                row[name] = None
                continue
            raise ValueError(f"{family} row missing column {name}")


def _format_cell(value, kind: str) -> str:
    if value is None:
        if not kind.startswith("opt_"):
            raise ValueError("required cell is None")
        return ""
    base = kind.removeprefix("opt_")
    if base == "b":
        return "true" if value else "false"
    if base == "f":
        return repr(float(value))
    if base == "i":
        return str(int(value))
    if base == "j":
        return json.dumps(value, sort_keys=True, separators=(",", ":"))
    return str(value)


def _parse_cell(text: str, kind: str):
    if text == "" and kind.startswith("opt_"):
        return None
    base = kind.removeprefix("opt_")
    if base == "b":
        return text == "true"
    if base == "f":
        return float(text)
    if base == "i":
        return int(text)
    if base == "j":
        return json.loads(text)
    return text


def _csv_escape(cell: str) -> str:
    if any(c in cell for c in ',"\n'):
        return '"' + cell.replace('"', '""') + '"'
    return cell


def _csv_split(line: str) -> list[str]:
    import csv
    import io

    return next(csv.reader(io.StringIO(line)))


def emit_csv(bundle: ReportBundle, outdir: str) -> list[str]:
    """One CSV per non-empty family plus manifest.json; returns paths."""
    try:
        os.makedirs(outdir, exist_ok=True)
        paths = []
        manifest_doc = {
            "schema_version": bundle.schema_version,
            "manifest": bundle.manifest,
            "families": sorted(k for k, rows in bundle.tables.items() if rows),
        }
        mp = os.path.join(outdir, "manifest.json")
        with open(mp, "w") as fh:
            json.dump(manifest_doc, fh, sort_keys=True, indent=2)
            fh.write("\n")
        paths.append(mp)
        for family in sorted(bundle.tables):
            rows = bundle.tables[family]
            if not rows:
                continue
            columns = FAMILIES[family]
            path = os.path.join(outdir, f"{family}.csv")
            with open(path, "w", newline="") as fh:
                fh.write(",".join(name for name, _ in columns) + "\n")
                for row in rows:
                    cells = [_csv_escape(_format_cell(row[name], kind))
                             for name, kind in columns]
                    fh.write(",".join(cells) + "\n")
            paths.append(path)
        return paths
    except OSError as exc:
        raise IoError(f"cannot emit bundle: {exc}") from exc


def parse_csv(outdir: str) -> ReportBundle:
    """Rebuild a bundle from an emitted directory; loud on version skew."""
    mp = os.path.join(outdir, "manifest.json")
    try:
        with open(mp) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read manifest: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(
            f"bundle schema {doc.get('schema_version')} != reader schema {SCHEMA_VERSION}"
        )
    bundle = ReportBundle(manifest=doc["manifest"], schema_version=doc["schema_version"])
    for family in doc.get("families", []):
        columns = FAMILIES.get(family)
        if columns is None:
            raise SchemaMismatch(f"unknown family {family!r} in bundle")
        path = os.path.join(outdir, f"{family}.csv")
        with open(path, newline="") as fh:
            header = fh.readline().rstrip("\n")
            expect = ",".join(name for name, _ in columns)
            if header != expect:
                raise SchemaMismatch(f"{family}.csv header does not match family schema")
            rows = []
            for line in fh:
                cells = _csv_split(line.rstrip("\n"))
                row = {name: _parse_cell(cell, kind)
                       for (name, kind), cell in zip(columns, cells)}
                if row["schema_version"] != SCHEMA_VERSION:
                    raise SchemaMismatch(f"row schema {row['schema_version']} in {family}.csv")
                rows.append(row)
        bundle.tables[family] = rows
    return bundle


def emit_json(bundle: ReportBundle, path: str) -> str:
    try:
        with open(path, "w") as fh:
            json.dump(bundle.to_json_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        return path
    except OSError as exc:
        raise IoError(f"cannot emit bundle: {exc}") from exc


def parse_json(path: str) -> ReportBundle:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read bundle: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(
            f"bundle schema {doc.get('schema_version')} != reader schema {SCHEMA_VERSION}"
        )
    return ReportBundle(manifest=doc["manifest"], tables=doc["tables"],
                        schema_version=doc["schema_version"])
