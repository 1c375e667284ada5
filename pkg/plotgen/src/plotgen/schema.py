"""Reader for the benchmark suite's CSV result contract.

This package deliberately re-implements parsing from the documented
contract instead of importing the benchmark code: plots must be
producible on machines that never ran a benchmark.  Every row carries
schema_version and manifest_hash; a version mismatch is refused, never
guessed around.
"""

from __future__ import annotations

import csv

SCHEMA_VERSION = 1


class SchemaMismatch(Exception):
    pass


class EmptyData(Exception):
    pass


def _convert(text: str):
    if text == "":
        return None
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_rows(path: str) -> list[dict]:
    """Parse one family CSV; refuses rows from a different schema."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyData(f"{path} has no header")
        if "schema_version" not in header:
            raise SchemaMismatch(f"{path} lacks a schema_version column")
        rows = []
        for cells in reader:
            row = {name: _convert(cell) for name, cell in zip(header, cells)}
            if row.get("schema_version") != SCHEMA_VERSION:
                raise SchemaMismatch(
                    f"{path}: row schema {row.get('schema_version')} != "
                    f"reader schema {SCHEMA_VERSION}"
                )
            rows.append(row)
    return rows


def manifest_hash(rows: list[dict]) -> str:
    hashes = {row.get("manifest_hash") for row in rows}
    return ", ".join(sorted(str(h) for h in hashes if h)) or "unknown"
