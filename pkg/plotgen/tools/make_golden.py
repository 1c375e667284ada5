"""Regenerate the golden CSV fixtures.

Run from the repository root after a schema change:

    python plotgen/tools/make_golden.py

The rows are hand-crafted representative shapes (three latency tiers,
saturating bandwidth curves, a cache plateau with a knee, ...) emitted
through the benchmark suite's own report writer, so the fixtures always
match the CSV contract bit-exactly.
"""

import math
import os
import sys

from tierbench import report

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "plotgen", "golden")


def lat_row(op, pattern, tier, mean, **kw):
    row = {
        "op": op, "pattern": pattern, "node": 0, "tier": tier,
        "footprint_bytes": 32 * 1024 * 1024, "stride_bytes": 64,
        "num_blocks": 524288, "repeats": 1000, "rounds_per_sample": 1,
        "flush_each": True, "fence_policy": "strict", "prefetchers": "off",
        "hint": None, "n_samples": 1000, "mean_ns": mean, "p50_ns": mean * 0.98,
        "p95_ns": mean * 1.12, "p99_ns": mean * 1.25, "stdev_ns": mean * 0.05,
        "min_ns": mean * 0.9, "max_ns": mean * 1.4, "notes": None,
    }
    row.update(kw)
    return row


def main():
    bundle = report.ReportBundle(manifest={
        "suite_version": "0.1.0", "schema_version": report.SCHEMA_VERSION,
        "kernel": "golden-fixture", "machine": "x86_64",
        "note": "synthetic representative shapes for figure rendering tests",
    })

    bundle.add_rows("latency", [
        lat_row("load", "random", "local-dimm", 98.0),
        lat_row("load", "sequential", "local-dimm", 101.0),
        lat_row("load", "random", "far-tier", 242.0),
        lat_row("load", "sequential", "far-tier", 247.0),
        lat_row("store", "random", "local-dimm", 110.0),
        lat_row("store", "random", "far-tier", 290.0),
    ], "fig4-latency")

    rows = []
    for tier, cap in (("local-dimm", 104.0), ("far-tier", 24.0)):
        for op, eff in (("load", 1.0), ("store", 0.85)):
            for threads in (1, 2, 4, 8, 16, 24, 32, 48):
                gib = cap * eff * (1 - math.exp(-threads / 6.0))
                rows.append({
                    "op": op, "pattern": "sequential-streaming", "node": 0,
                    "threads": threads, "access_width_bytes": 32,
                    "window_s": 2.0, "trials": 3, "gib_per_s": round(gib, 3),
                    "prefetchers": "unknown", "notes": tier,
                })
    bundle.add_rows("bandwidth", rows, "fig5-bandwidth")

    rows = []
    for tier, cap, base in (("local-dimm", 100.0, 95.0), ("far-tier", 23.0, 260.0)):
        for n in range(0, 8):
            ach = cap * (1 - math.exp(-n / 2.0)) if n else 0.0
            lat = base * (1 + 0.2 * n + (2.2 ** max(0, n - 5)))
            rows.append({
                "node": 0, "offered_load_threads": n,
                "achieved_gib_per_s": round(ach, 3),
                "probe_latency_ns": round(lat, 2),
                "probe_footprint_bytes": 256 * 1024 * 1024, "notes": tier,
            })
    bundle.add_rows("loaded_latency", rows, "fig6-loaded")

    weights = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 1, 1),
               (2, 1, 1), (2, 2, 1), (4, 2, 1), (4, 4, 1)]
    base = {(1, 0, 0): 62.0, (0, 1, 0): 58.0, (0, 0, 1): 24.0, (1, 1, 0): 123.6,
            (1, 1, 1): 128.9, (2, 1, 1): 133.0, (2, 2, 1): 138.2, (4, 2, 1): 141.6,
            (4, 4, 1): 139.8}
    bundle.add_rows("interleave", [
        {"weights": {"0": a, "1": b, "2": c}, "op": "load", "threads": 8,
         "aggregate_gib_per_s": base[(a, b, c)], "mechanism": "kernel",
         "physical": True, "notes": None}
        for a, b, c in weights
    ], "fig7-interleave")

    rows = []
    for instr, lat0, parallel in (("clflush", 145.0, False),
                                  ("clflushopt", 140.0, True),
                                  ("clwb", 138.0, True)):
        for state, dirty_factor in (("clean", 0.35), ("dirty", 1.0)):
            size = 64
            while size <= 256 * 1024 * 1024:
                lines = size / 64
                if parallel:
                    ns = lat0 * dirty_factor / min(lines, 24) + 2.5
                else:
                    ns = lat0 * dirty_factor * (0.4 if state == "clean" else 1.0)
                    if state == "clean" and size > 4 * 1024 * 1024:
                        ns *= 1.0 + 0.35 * math.log2(size / (4 * 1024 * 1024))
                rows.append({
                    "instruction": instr, "state": state, "size_bytes": size,
                    "lines": int(lines), "total_ns": round(ns * lines, 1),
                    "ns_per_line": round(ns, 3), "per_line_fence": False,
                    "notes": None,
                })
                size *= 4
    bundle.add_rows("flush", rows, "fig8-flush")

    rows = []
    strides = [64 * 2 ** k for k in range(8)]
    counts = [2 ** k for k in range(10, 19)]
    llc_lines = (32 * 1024 * 1024) / 64
    for stride in strides:
        for count in counts:
            occupancy = count  # one line cached per block
            if occupancy < 0.8 * llc_lines / (stride / 64) ** 0.15:
                ns = 6.0 + (stride / 65536)
            else:
                ns = 95.0 + 10 * math.log2(max(occupancy / llc_lines, 1.0) + 1)
            rows.append({
                "instruction_class": "regular", "node": 0, "stride_bytes": stride,
                "num_blocks": count, "footprint_bytes": stride * count,
                "mean_ns": round(ns, 2), "rounds": 3, "cat_mask": None,
                "snc_mode": "off", "prefetchers": "off", "skipped": False,
                "notes": None,
            })
    bundle.add_rows("heatmap", rows, "fig11-heatmap")

    rows = []
    placements = ("same-local-dimm", "same-local-cxl", "same-remote-dimm",
                  "same-remote-cxl", "diff-setter-cxl", "diff-getter-cxl")
    for structure, base_ms, size_sensitive in (("spsc_queue", 62.0, False),
                                               ("mpmc_queue", 180.0, False),
                                               ("concurrent_map", 140.0, True)):
        elem = 16 if structure == "concurrent_map" else 8
        for pi, placement in enumerate(placements):
            penalty = 1.0 + 0.35 * pi + (0.8 if "cxl" in placement else 0.0)
            for k in range(7, 26, 3):
                elements = 2 ** k
                footprint = elements * elem
                growth = (1.0 + 1.6 * max(0, math.log2(footprint / (16 * 2 ** 20)))
                          if size_sensitive and footprint > 16 * 2 ** 20 else 1.0)
                rows.append({
                    "structure": structure, "placement": placement,
                    "initial_elements": elements, "element_size": elem,
                    "footprint_bytes": footprint, "ops_per_thread": 1_000_000,
                    "total_time_ns": round(base_ms * penalty * growth * 1e6, 1),
                    "data_node": 2 if "cxl" in placement else 0,
                    "setter_cpu": 0, "getter_cpu": 1, "verified": True,
                    "notes": None,
                })
    bundle.add_rows("lfds", rows, "fig10-lfds")

    rows = []
    for tier, spins in (("local-dimm", 1_800_000), ("far-tier", 6_400_000)):
        for thread in (0, 1):
            rows.append({
                "lock_kind": "spinlock", "thread": thread, "cpu": thread,
                "iterations": 1_000_000, "ops": 1_000_000,
                "elapsed_ns": 2.1e9 if tier == "local-dimm" else 5.9e9,
                "branch_count": spins * 3 + 1_000_000, "spin_retries": spins,
                "counter_source": "perf", "node": 0, "notes": tier,
            })
    bundle.add_rows("contention", rows, "fig9-contention")

    os.makedirs(OUT, exist_ok=True)
    paths = report.emit_csv(bundle, OUT)
    for p in paths:
        print("wrote", os.path.relpath(p))


if __name__ == "__main__":
    sys.exit(main())
