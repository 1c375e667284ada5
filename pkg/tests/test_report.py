import json
import os

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tierbench import report
from tierbench.errors import IoError, SchemaMismatch


def sample_bundle() -> report.ReportBundle:
    bundle = report.ReportBundle(manifest={"suite_version": "0.1.0", "kernel": "test"})
    bundle.add_rows("flush", [{
        "instruction": "clflush", "state": "dirty", "size_bytes": 4096,
        "lines": 64, "total_ns": 6400.0, "ns_per_line": 100.0,
        "per_line_fence": False, "notes": None,
    }], "exp-1")
    bundle.add_rows("interleave", [{
        "weights": {"0": 2, "1": 2, "2": 1}, "op": "load", "threads": 4,
        "aggregate_gib_per_s": 123.456, "mechanism": "userspace-fallback",
        "physical": False, "notes": "synthetic, quoted \"note\", with comma",
    }], "exp-2")
    return bundle


class TestRowSchema:
    def test_unknown_column_rejected(self):
        bundle = report.ReportBundle(manifest={})
        with pytest.raises(ValueError, match="unknown columns"):
            bundle.add_rows("flush", [{"instruction": "clflush", "bogus": 1}], "x")

    def test_missing_required_rejected(self):
        bundle = report.ReportBundle(manifest={})
        with pytest.raises(ValueError, match="missing column"):
            bundle.add_rows("flush", [{"instruction": "clflush"}], "x")

    def test_unknown_family_rejected(self):
        bundle = report.ReportBundle(manifest={})
        with pytest.raises(ValueError, match="unknown result family"):
            bundle.add_rows("mystery", [{}], "x")

    def test_rows_carry_manifest_hash(self):
        bundle = sample_bundle()
        for rows in bundle.tables.values():
            assert all(r["manifest_hash"] == bundle.manifest_hash for r in rows)


class TestRoundTrip:
    def test_csv_byte_identical(self, tmp_path):
        bundle = sample_bundle()
        d1 = tmp_path / "one"
        d2 = tmp_path / "two"
        paths = report.emit_csv(bundle, str(d1))
        parsed = report.parse_csv(str(d1))
        report.emit_csv(parsed, str(d2))
        for p in paths:
            assert (d2 / os.path.basename(p)).read_bytes() == open(p, "rb").read()

    def test_json_round_trip(self, tmp_path):
        bundle = sample_bundle()
        path = report.emit_json(bundle, str(tmp_path / "b.json"))
        parsed = report.parse_json(path)
        assert parsed.to_json_dict() == bundle.to_json_dict()

    def test_csv_preserves_types(self, tmp_path):
        bundle = sample_bundle()
        report.emit_csv(bundle, str(tmp_path))
        parsed = report.parse_csv(str(tmp_path))
        row = parsed.tables["interleave"][0]
        assert row["weights"] == {"0": 2, "1": 2, "2": 1}
        assert row["physical"] is False
        assert row["aggregate_gib_per_s"] == 123.456
        assert row["notes"] == 'synthetic, quoted "note", with comma'

    def test_version_skew_rejected_loudly(self, tmp_path):
        bundle = sample_bundle()
        report.emit_csv(bundle, str(tmp_path))
        mp = tmp_path / "manifest.json"
        doc = json.loads(mp.read_text())
        doc["schema_version"] = report.SCHEMA_VERSION + 1
        mp.write_text(json.dumps(doc))
        with pytest.raises(SchemaMismatch):
            report.parse_csv(str(tmp_path))

    def test_row_version_skew_rejected(self, tmp_path):
        bundle = sample_bundle()
        report.emit_csv(bundle, str(tmp_path))
        path = tmp_path / "flush.csv"
        text = path.read_text().replace(f"\n{report.SCHEMA_VERSION},",
                                        f"\n{report.SCHEMA_VERSION + 1},")
        path.write_text(text)
        with pytest.raises(SchemaMismatch):
            report.parse_csv(str(tmp_path))

    def test_unwritable_dir_is_io_error(self):
        with pytest.raises(IoError):
            report.emit_csv(sample_bundle(), "/proc/definitely/not/writable")


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_cells_round_trip(x):
    formatted = report._format_cell(x, "f")
    assert report._parse_cell(formatted, "f") == x
    assert report._format_cell(report._parse_cell(formatted, "f"), "f") == formatted


@given(st.integers(min_value=-(2 ** 63), max_value=2 ** 63 - 1))
def test_int_cells_round_trip(x):
    formatted = report._format_cell(x, "i")
    assert report._parse_cell(formatted, "i") == x
