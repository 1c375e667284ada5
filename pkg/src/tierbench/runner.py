"""Suite orchestration: declarative configs, capability probing,
sequential experiment execution with state save/restore, and report
emission.

Experiments never run concurrently (the methodology depends on an
unloaded machine).  Each one is wrapped with a global-state snapshot;
after it finishes (or fails) the prefetcher/interleave/CAT state is
re-verified against the snapshot and force-restored on drift.  Failures
are contained per experiment and recorded in the experiment_log family.
"""

from __future__ import annotations

import glob
import json
import logging
import os
import platform
from dataclasses import dataclass, field
from types import SimpleNamespace

from . import bandwidth as bw
from . import cachebench, flushbench, kernels, latency, lfds, patterns, report, topology
from .errors import ConfigInvalid, CounterUnavailable, TierbenchError
from .timing import Calibration, CounterSpec, HardwareTimer, MockTimer, calibrate, open_counter

log = logging.getLogger("tierbench.runner")

SUITE_VERSION = "0.1.0"

_ALLOWED_TOP = {"schema_version", "experiments", "roles", "noise", "output_dir",
                "timer", "notes"}
_ALLOWED_EXPERIMENT = {"id", "kind", "params"}
_ALLOWED_TIMER = {"backend", "uniform_ticks", "schedule", "cycles_per_ns"}
_ALLOWED_NOISE = {"prefetchers", "pin_cpus"}
_ALLOWED_ROLES = {"local_dimm", "remote_dimm", "far_tier", "kind_overrides"}


@dataclass
class ExperimentSpec:
    id: str
    kind: str
    params: dict = field(default_factory=dict)


@dataclass
class SuiteConfig:
    experiments: list[ExperimentSpec]
    roles: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    output_dir: str = "tierbench-out"
    timer: dict = field(default_factory=lambda: {"backend": "hardware"})
    notes: str = ""
    schema_version: int = report.SCHEMA_VERSION

    @classmethod
    def from_dict(cls, doc: dict) -> "SuiteConfig":
        if not isinstance(doc, dict):
            raise ConfigInvalid("config must be a JSON object")
        unknown = set(doc) - _ALLOWED_TOP
        if unknown:
            raise ConfigInvalid(f"unknown config keys {sorted(unknown)}")
        if doc.get("schema_version", report.SCHEMA_VERSION) != report.SCHEMA_VERSION:
            raise ConfigInvalid(f"config schema_version must be {report.SCHEMA_VERSION}")
        timer = doc.get("timer", {"backend": "hardware"})
        if set(timer) - _ALLOWED_TIMER or timer.get("backend") not in ("hardware", "mock"):
            raise ConfigInvalid(f"bad timer spec {timer}")
        noise = doc.get("noise", {})
        if set(noise) - _ALLOWED_NOISE:
            raise ConfigInvalid(f"unknown noise keys {sorted(set(noise) - _ALLOWED_NOISE)}")
        roles = doc.get("roles", {})
        if set(roles) - _ALLOWED_ROLES:
            raise ConfigInvalid(f"unknown role keys {sorted(set(roles) - _ALLOWED_ROLES)}")
        experiments = []
        seen_ids = set()
        for raw in doc.get("experiments", []):
            if set(raw) - _ALLOWED_EXPERIMENT or "id" not in raw or "kind" not in raw:
                raise ConfigInvalid(f"bad experiment spec {raw}")
            if raw["kind"] not in EXPERIMENTS:
                raise ConfigInvalid(f"unknown experiment kind {raw['kind']!r}")
            if raw["id"] in seen_ids:
                raise ConfigInvalid(f"duplicate experiment id {raw['id']!r}")
            seen_ids.add(raw["id"])
            params = raw.get("params", {})
            allowed = EXPERIMENTS[raw["kind"]].params
            unknown = set(params) - allowed
            if unknown:
                raise ConfigInvalid(
                    f"experiment {raw['id']}: unknown params {sorted(unknown)}"
                )
            experiments.append(ExperimentSpec(raw["id"], raw["kind"], params))
        return cls(
            experiments=experiments,
            roles=roles,
            noise=noise,
            output_dir=doc.get("output_dir", "tierbench-out"),
            timer=timer,
            notes=doc.get("notes", ""),
        )

    def config_hash(self) -> str:
        doc = {
            "experiments": [{"id": e.id, "kind": e.kind, "params": e.params}
                            for e in self.experiments],
            "roles": self.roles,
            "noise": self.noise,
            "timer": self.timer,
            "notes": self.notes,
        }
        return report.manifest_hash(doc)


# ---------------------------------------------------------------------
# Capability probing

def capability_probe() -> dict:
    """What this host can run; experiments declare requirements against it."""
    caps: dict = {"x86": kernels.HAVE_X86,
                  "clflushopt": kernels.HAVE_CLFLUSHOPT,
                  "clwb": kernels.HAVE_CLWB,
                  "sse41": kernels.HAVE_SSE41}
    try:
        topo = topology.discover()
        caps["cores"] = sum(len(n.cpu_ids) for n in topo.nodes)
        caps["multi_socket"] = topo.socket_count() >= 2
        caps["far_tier"] = bool(topo.far_tier_nodes())
        caps["topology_source"] = topo.source
        caps["sysfs_caches"] = any(c.source == "sysfs" for c in topo.caches)
    except TierbenchError:
        caps.update({"cores": 0, "multi_socket": False, "far_tier": False,
                     "topology_source": "unreadable", "sysfs_caches": False})
    caps["two_cpus"] = len(topology.current_affinity()) >= 2
    caps["msr"] = topology.PrefetcherController().available()
    caps["resctrl"] = topology.resctrl_available()
    caps["weighted_interleave"] = topology.weighted_interleave_available()
    hp = os.path.join(topology.fs_root(),
                      "sys/kernel/mm/hugepages/hugepages-2048kB/free_hugepages")
    try:
        caps["hugepages_2m"] = int(open(hp).read().strip()) > 0
    except (OSError, ValueError):
        caps["hugepages_2m"] = False
    try:
        open_counter(CounterSpec("branches")).close()
        caps["perf_counters"] = True
    except CounterUnavailable:
        caps["perf_counters"] = False
    return caps


# ---------------------------------------------------------------------
# Global state snapshot (hygiene between experiments)

def _snapshot_global_state() -> dict:
    snap: dict = {"msr": {}, "weights": {}, "resctrl_groups": []}
    ctl = topology.PrefetcherController()
    if ctl.available():
        for cpu in ctl.cpus:
            try:
                snap["msr"][cpu] = ctl._read(cpu)
            except OSError:
                pass
    wi = os.path.join(topology.fs_root(), "sys/kernel/mm/mempolicy/weighted-interleave")
    for path in sorted(glob.glob(os.path.join(wi, "node*"))):
        try:
            snap["weights"][os.path.basename(path)] = open(path).read()
        except OSError:
            pass
    rc = os.path.join(topology.fs_root(), "sys/fs/resctrl")
    if topology.resctrl_available():
        snap["resctrl_groups"] = sorted(
            os.path.basename(p) for p in glob.glob(os.path.join(rc, "tierbench-*"))
        )
    return snap


def _verify_and_restore(snapshot: dict) -> list[str]:
    """Compare live state to the snapshot; restore and report any drift."""
    notes = []
    ctl = topology.PrefetcherController()
    if ctl.available():
        for cpu, value in snapshot["msr"].items():
            try:
                live = ctl._read(cpu)
            except OSError:
                continue
            if live != value:
                ctl._write(cpu, value)
                notes.append(f"restored prefetcher MSR on cpu {cpu}")
    wi = os.path.join(topology.fs_root(), "sys/kernel/mm/mempolicy/weighted-interleave")
    for name, text in snapshot["weights"].items():
        path = os.path.join(wi, name)
        try:
            if open(path).read() != text:
                with open(path, "w") as fh:
                    fh.write(text)
                notes.append(f"restored interleave weight {name}")
        except OSError:
            pass
    rc = os.path.join(topology.fs_root(), "sys/fs/resctrl")
    if topology.resctrl_available():
        live_groups = sorted(
            os.path.basename(p) for p in glob.glob(os.path.join(rc, "tierbench-*"))
        )
        for name in live_groups:
            if name not in snapshot["resctrl_groups"]:
                try:
                    topology._remove_group_dir(os.path.join(rc, name))
                    notes.append(f"removed leaked CAT group {name}")
                except OSError:
                    pass
    return notes


# ---------------------------------------------------------------------
# Experiment registry

@dataclass(frozen=True)
class ExperimentKind:
    requires: tuple[str, ...]
    params: set[str]
    run: callable  # (ctx, params) -> dict[family, list[rows]]


def _local_node(ctx) -> int:
    return ctx.config.roles.get("local_dimm", ctx.topo.node_of_cpu(ctx.cpus[0]))


def _target_nodes(ctx, params) -> list[tuple[str, int | None]]:
    """(tier label, node) pairs to run against; far tier when present."""
    if "node" in params:
        return [("explicit", params["node"])]
    pairs = [("local-dimm", _local_node(ctx))]
    far = ctx.config.roles.get("far_tier")
    if far is None:
        fars = ctx.topo.far_tier_nodes()
        far = fars[0] if fars else None
    if far is not None:
        pairs.append(("far-tier", far))
    return pairs


def _alloc(ctx, size: int, node: int | None):
    size += (-size) % 4096
    policy = (topology.PlacementPolicy.bind(node) if node is not None
              else topology.PlacementPolicy.none())
    # residency checks only mean something with more than one real node
    verify = node is not None and len(ctx.topo.nodes) > 1
    return topology.allocate(size, policy, verify=verify)


def _stats_row(stats, op, pattern, node, tier, cfg, chain, hint=None, notes=None) -> dict:
    row = {
        "op": op, "pattern": pattern, "node": node, "tier": tier,
        "footprint_bytes": chain.footprint_bytes, "stride_bytes": chain.stride_bytes,
        "num_blocks": chain.num_blocks, "repeats": cfg.repeats,
        "rounds_per_sample": cfg.rounds_per_sample, "flush_each": cfg.flush_each,
        "fence_policy": cfg.fence_policy, "prefetchers": cfg.prefetchers,
        "hint": hint, "notes": notes,
    }
    row.update(stats.as_row())
    return row


def _sample_rows(stats, op, pattern, node, tier, hint=None) -> list[dict]:
    samples = getattr(stats, "samples_ns", None) or []
    return [{"op": op, "pattern": pattern, "node": node, "tier": tier,
             "hint": hint, "sample_index": i, "ns": ns}
            for i, ns in enumerate(samples)]


def _run_latency(ctx, params) -> dict:
    ops = params.get("ops", ["load"])
    patterns_ = params.get("patterns", ["random"])
    footprint = params.get("footprint_bytes", 4 * 1024 * 1024)
    stride = params.get("stride_bytes", 64)
    retain = params.get("retain_samples", True)
    cfg = latency.MeasurementConfig(
        repeats=params.get("repeats", 1000),
        warmup_rounds=params.get("warmup_rounds", 1),
        rounds_per_sample=params.get("rounds_per_sample", 1),
        flush_each=params.get("flush_each", False),
        fence_policy=params.get("fence_policy", "strict"),
        pin_cpu=ctx.cpus[0],
        prefetchers=ctx.prefetcher_state,
        footprint_bytes=footprint,
    )
    rows = []
    raw = []
    for tier, node in _target_nodes(ctx, params):
        num_blocks = max(footprint // stride, 1)
        region = _alloc(ctx, num_blocks * stride, node)
        try:
            for pattern in patterns_:
                chain = patterns.build_chain(region, num_blocks, stride, order=pattern,
                                             seed=params.get("seed", 1))
                for op in ops:
                    fn = {"load": latency.load_latency,
                          "store": latency.store_latency}.get(op)
                    if fn is not None:
                        stats = fn(chain, cfg, ctx.timer, ctx.cal)
                    else:
                        stats = latency.atomic_latency(chain, cfg, ctx.timer, ctx.cal, op)
                    rows.append(_stats_row(stats, op, pattern, node, tier, cfg, chain))
                    if retain:
                        raw.extend(_sample_rows(stats, op, pattern, node, tier))
        finally:
            region.close()
    out = {"latency": rows}
    if raw:
        out["latency_samples"] = raw
    return out


def _run_prefetch(ctx, params) -> dict:
    hints = params.get("hints", list(kernels.PREFETCH_HINTS))
    footprint = params.get("footprint_bytes", 32 * 1024 * 1024)
    retain = params.get("retain_samples", True)
    cfg = latency.MeasurementConfig(
        repeats=params.get("repeats", 1000), pin_cpu=ctx.cpus[0],
        prefetchers=ctx.prefetcher_state, footprint_bytes=footprint,
    )
    rows = []
    raw = []
    for tier, node in _target_nodes(ctx, params):
        region = _alloc(ctx, footprint, node)
        try:
            chain = patterns.build_chain(region, footprint // 64, 64, seed=2)
            for hint in hints:
                for op, fn in (("prefetch", latency.prefetch_latency),
                               ("load_after_prefetch", latency.load_after_prefetch)):
                    stats = fn(chain, hint, cfg, ctx.timer, ctx.cal)
                    rows.append(_stats_row(stats, op, "random", node, tier, cfg,
                                           chain, hint=hint))
                    if retain:
                        raw.extend(_sample_rows(stats, op, "random", node, tier,
                                                hint=hint))
        finally:
            region.close()
    out = {"latency": rows}
    if raw:
        out["latency_samples"] = raw
    return out


def _run_spinlock(ctx, params) -> dict:
    iterations = params.get("iterations", 100_000)
    rows = []
    for tier, node in _target_nodes(ctx, params):
        region = _alloc(ctx, 4096, node)
        try:
            stats = latency.spinlock_contention(
                region, iterations, (ctx.cpus[0], ctx.cpus[1 % len(ctx.cpus)]),
                ctx.timer, ctx.cal, hold_cycles=params.get("hold_cycles", 0),
            )
            for rec in stats.per_thread:
                rows.append({
                    "lock_kind": stats.lock_kind, "thread": rec["thread"],
                    "cpu": rec["cpu"], "iterations": iterations, "ops": rec["ops"],
                    "elapsed_ns": rec["elapsed_ns"],
                    "branch_count": rec["branch_count"],
                    "spin_retries": rec["spin_retries"],
                    "counter_source": stats.counter_source, "node": node,
                    "notes": tier,
                })
        finally:
            region.close()
    return {"contention": rows}


def _run_bandwidth(ctx, params) -> dict:
    size = params.get("size_bytes", 256 * 1024 * 1024)
    thread_counts = params.get("thread_counts", [1, max(1, len(ctx.cpus))])
    window = params.get("window_s", 2.0)
    rows = []
    for tier, node in _target_nodes(ctx, params):
        region = _alloc(ctx, size, node)
        try:
            for op in params.get("ops", ["load", "store"]):
                points = bw.bandwidth_sweep(
                    region, op, thread_counts, list(ctx.cpus), ctx.timer, ctx.cal,
                    per_thread_bytes=params.get("per_thread_bytes"),
                    window_s=window, warmup_s=params.get("warmup_s", 0.3),
                    trials=params.get("trials", 3),
                    nontemporal=params.get("nontemporal", False),
                )
                for p in points:
                    rows.append({
                        "op": p.op, "pattern": p.pattern, "node": node,
                        "threads": p.threads, "access_width_bytes": p.access_width_bytes,
                        "window_s": window, "trials": params.get("trials", 3),
                        "gib_per_s": p.gib_per_s, "prefetchers": ctx.prefetcher_state,
                        "notes": tier,
                    })
        finally:
            region.close()
    return {"bandwidth": rows}


def _run_loaded_latency(ctx, params) -> dict:
    size = params.get("size_bytes", 256 * 1024 * 1024)
    points_cfg = params.get("load_thread_counts", list(range(len(ctx.cpus))))
    rows = []
    for tier, node in _target_nodes(ctx, params):
        region = _alloc(ctx, size, node)
        try:
            probe_fp = params.get("probe_footprint_bytes", size // 4)
            points = bw.loaded_latency(region, points_cfg, list(ctx.cpus), ctx.timer,
                                       ctx.cal, probe_footprint_bytes=probe_fp,
                                       gen_op=params.get("gen_op", "load"),
                                       probe_rounds=params.get("probe_rounds", 3))
            for p in points:
                rows.append({
                    "node": node, "offered_load_threads": p.offered_load_threads,
                    "achieved_gib_per_s": p.achieved_gib_per_s,
                    "probe_latency_ns": p.probe_latency_ns,
                    "probe_footprint_bytes": probe_fp, "notes": tier,
                })
        finally:
            region.close()
    return {"loaded_latency": rows}


def _run_interleave(ctx, params) -> dict:
    weight_configs = [
        {int(k): v for k, v in wc.items()} for wc in params.get("weight_configs", [])
    ]
    rows = []
    sweep = bw.interleave_sweep(
        weight_configs, params.get("op", "load"),
        params.get("size_bytes", 64 * 1024 * 1024), params.get("threads", 1),
        list(ctx.cpus), ctx.timer, ctx.cal, window_s=params.get("window_s", 1.0),
    )
    for row in sweep:
        rows.append({
            "weights": {str(k): v for k, v in sorted(row.weights.items())},
            "op": params.get("op", "load"), "threads": params.get("threads", 1),
            "aggregate_gib_per_s": row.aggregate_gib_per_s,
            "mechanism": row.mechanism,
            "physical": row.mechanism == "kernel" or len(
                {n for n, w in row.weights.items() if w > 0}) <= 1,
            "notes": None,
        })
    return {"interleave": rows}


def _run_copy(ctx, params) -> dict:
    sizes = params.get("sizes", [512 * (4 ** k) for k in range(6)])
    threads = params.get("threads", 1)
    span = max(sizes) * threads
    rows = []
    for tier, node in _target_nodes(ctx, params):
        src = _alloc(ctx, span, node)
        dst = _alloc(ctx, span, node)
        try:
            for cached in params.get("cached", [True, False]):
                results = bw.copy_bench(src, dst, sizes, threads, cached, ctx.timer,
                                        ctx.cal, cpus=list(ctx.cpus),
                                        samples=params.get("samples", 9))
                for r in results:
                    rows.append({
                        "engine": r.engine, "size_bytes": r.size_bytes,
                        "cached": r.cached, "threads": r.threads,
                        "latency_ns": r.latency_ns, "gib_per_s": r.gib_per_s,
                        "verified": r.verified, "notes": tier,
                    })
        finally:
            src.close()
            dst.close()
    return {"copy": rows}


def _run_flush(ctx, params) -> dict:
    sizes = tuple(params.get("sizes", flushbench.geometric_sizes(hi=16 * 1024 * 1024)))
    rows = []
    for tier, node in _target_nodes(ctx, params):
        region = _alloc(ctx, max(sizes), node)
        try:
            for instruction in params.get("instructions",
                                          ["clflush", "clflushopt", "clwb"]):
                if not ctx.timer.is_mock and not kernels.flush_supported(instruction):
                    rows.append({
                        "instruction": instruction, "state": "n/a", "size_bytes": 0,
                        "lines": 0, "total_ns": 0.0, "ns_per_line": 0.0,
                        "per_line_fence": False,
                        "notes": "skipped: instruction unsupported",
                    })
                    continue
                for state in params.get("states", ["clean", "dirty"]):
                    spec = flushbench.FlushSpec(
                        instruction=instruction, state=state, sizes=sizes,
                        per_line_fence=params.get("per_line_fence", False),
                        repeats=params.get("repeats", 5),
                    )
                    curve = flushbench.flush_latency(region, spec, ctx.timer, ctx.cal)
                    for point in curve.points:
                        rows.append({
                            "instruction": instruction, "state": state,
                            "size_bytes": point["size_bytes"], "lines": point["lines"],
                            "total_ns": point["total_ns"],
                            "ns_per_line": point["ns_per_line"],
                            "per_line_fence": spec.per_line_fence, "notes": tier,
                        })
        finally:
            region.close()
    return {"flush": rows}


def _heatmap_rows(ctx, grid, node, mask_str=None, notes=None) -> list[dict]:
    rows = []
    snc = ctx.topo.snc_mode()
    for stride in grid.stride_axis:
        for count in grid.count_axis:
            ns = grid.cell(stride, count)
            rows.append({
                "instruction_class": grid.instruction_class, "node": node,
                "stride_bytes": stride, "num_blocks": count,
                "footprint_bytes": stride * count, "mean_ns": ns,
                "rounds": grid.rounds, "cat_mask": mask_str, "snc_mode": snc,
                "prefetchers": ctx.prefetcher_state, "skipped": ns is None,
                "notes": notes,
            })
    return rows


def _run_heatmap(ctx, params) -> dict:
    strides = params.get("strides", [64 * (2 ** k) for k in range(6)])
    counts = params.get("counts", [2 ** k for k in range(10, 18)])
    instruction_class = params.get("instruction_class", "regular")
    region_size = max(s * c for s in strides for c in counts)
    region_size = min(region_size, params.get("max_region_bytes", 1 << 30))
    out: dict = {"heatmap": [], "knee": []}
    for tier, node in _target_nodes(ctx, params):
        region = _alloc(ctx, region_size, node)
        try:
            grid = cachebench.cache_heatmap(
                region, strides, counts, instruction_class, ctx.timer, ctx.cal,
                rounds=params.get("rounds", 3), pin_cpu=ctx.cpus[0],
                seed=params.get("seed", 1),
            )
            out["heatmap"].extend(_heatmap_rows(ctx, grid, node, notes=tier))
            if params.get("estimate_knee", True):
                try:
                    knee = cachebench.estimate_knee(grid)
                    out["knee"].append({
                        "instruction_class": instruction_class, "node": node,
                        "reference_stride": grid.stride_axis[0],
                        "estimated_capacity_bytes": knee.estimated_capacity_bytes,
                        "threshold_ns": knee.threshold_ns,
                        "confidence": knee.confidence, "notes": tier,
                    })
                except TierbenchError as exc:
                    out["knee"].append({
                        "instruction_class": instruction_class, "node": node,
                        "reference_stride": grid.stride_axis[0],
                        "estimated_capacity_bytes": 0, "threshold_ns": 0.0,
                        "confidence": "none", "notes": f"{tier}: {exc}",
                    })
        finally:
            region.close()
    return out


def _run_cat_heatmap(ctx, params) -> dict:
    mask = cachebench.CatMask(params.get("clos_id", 1), params["mask"])
    strides = params.get("strides", [64])
    counts = params.get("counts", [2 ** k for k in range(10, 18)])
    node = _target_nodes(ctx, params)[-1][1]
    region = _alloc(ctx, max(s * c for s in strides for c in counts), node)
    try:
        grid = cachebench.cat_partition_heatmap(region, mask, strides, counts,
                                                ctx.timer, ctx.cal, pin_cpu=ctx.cpus[0])
        return {"heatmap": _heatmap_rows(ctx, grid, node, mask_str=f"{mask.bitmask:#x}")}
    finally:
        region.close()


def _run_eviction_conflict(ctx, params) -> dict:
    p0_mask = cachebench.CatMask(params.get("clos_id", 1), params["p0_mask"])
    positions = params["p1_mask_positions"]
    ws = params.get("p1_working_set_bytes", 2 * 1024 * 1024)
    p0_region = _alloc(ctx, params.get("p0_region_bytes", 64 * 1024 * 1024),
                       _target_nodes(ctx, params)[-1][1])
    p1_region = _alloc(ctx, ws, _local_node(ctx))
    try:
        results = cachebench.eviction_conflict(
            p0_region, p1_region, p0_mask, positions,
            (ctx.cpus[0], ctx.cpus[1 % len(ctx.cpus)]), ctx.timer, ctx.cal, ws,
            rounds=params.get("rounds", 64),
        )
        rows = [{"p0_mask": f"{p0_mask.bitmask:#x}", "p1_mask": f"{r['p1_mask']:#x}",
                 "p1_mean_latency_ns": r["p1_mean_latency_ns"], "notes": None}
                for r in results]
        return {"conflict": rows}
    finally:
        p0_region.close()
        p1_region.close()


def _run_handoff(ctx, params) -> dict:
    ws = params.get("working_set_bytes", 4 * 1024 * 1024)
    rows = []
    for tier, node in _target_nodes(ctx, params):
        region = _alloc(ctx, ws, node)
        try:
            sockets = sorted(set(ctx.topo.sockets.values()))
            cpu0 = ctx.topo.cpus_of_socket(sockets[0])[0]
            cpu1 = ctx.topo.cpus_of_socket(sockets[-1])[0]
            result = cachebench.shared_data_handoff(
                region, ws, (cpu0, cpu1), ctx.timer, ctx.cal,
                socket_count=ctx.topo.socket_count(),
            )
            rows.append({
                "working_set_bytes": ws, "t0_latency_ns": result["t0_latency_ns"],
                "t1_latency_ns": result["t1_latency_ns"],
                "t1_miss_rate": result["t1_miss_rate"], "node": node, "notes": tier,
            })
        finally:
            region.close()
    return {"handoff": rows}


def _run_prefetch_footprint(ctx, params) -> dict:
    strides = params.get("strides", [64, 128, 256, 512, 1024, 4096, 16384, 65536])
    max_warm = params.get("max_warm_blocks", 64)
    region = _alloc(ctx, params.get("region_bytes", 64 * 1024 * 1024),
                    _local_node(ctx))
    rows = []
    try:
        if ctx.timer.is_mock:
            # deterministic stub so mock bundles stay bit-identical
            for stride in strides:
                rows.append({"prefetcher": "mock", "mode": "mock",
                             "stride_bytes": stride, "blocks_before_prefetch": None,
                             "miss_reference_ns": 0.0, "threshold_ns": 0.0,
                             "notes": "mock timer: probe not executed"})
            return {"prefetch_footprint": rows}
        ctl = topology.PrefetcherController(list(ctx.cpus))
        singles = ctl.prefetcher_names() if ctl.available() else []
        if singles:
            for name in singles:
                guard = ctl.set_only(name)
                try:
                    results = cachebench.hw_prefetcher_footprint(
                        region, strides, max_warm, ctx.cal, prefetcher=name,
                        pin_cpu=ctx.cpus[0])
                finally:
                    guard.restore()
                for r in results:
                    rows.append({"prefetcher": name, "mode": "isolated",
                                 "stride_bytes": r["stride_bytes"],
                                 "blocks_before_prefetch": r["blocks_before_prefetch"],
                                 "miss_reference_ns": r["miss_reference_ns"],
                                 "threshold_ns": r["threshold_ns"], "notes": None})
        else:
            results = cachebench.hw_prefetcher_footprint(
                region, strides, max_warm, ctx.cal, prefetcher="all-on",
                pin_cpu=ctx.cpus[0])
            for r in results:
                rows.append({"prefetcher": "all-on", "mode": "differential-unavailable",
                             "stride_bytes": r["stride_bytes"],
                             "blocks_before_prefetch": r["blocks_before_prefetch"],
                             "miss_reference_ns": r["miss_reference_ns"],
                             "threshold_ns": r["threshold_ns"],
                             "notes": "MSR unavailable: prefetchers left as-is"})
    finally:
        region.close()
    return {"prefetch_footprint": rows}


def _run_lfds(ctx, params) -> dict:
    structures = params.get("structures", list(lfds.STRUCTURES))
    placements = params.get("placements", list(lfds.PLACEMENTS))
    initial = params.get("initial_elements", [1024])
    ops = params.get("ops_per_thread", 1_000_000)
    best_of = params.get("best_of", 1)
    rows = []
    log_rows = []
    for structure in structures:
        verdict = lfds.verify_structure(structure, heavy=params.get("heavy_verify", False))
        if not verdict["ok"]:
            log_rows.append({"kind": "lfds", "status": "failed",
                             "reason": f"{structure} failed verification: {verdict['checks']}"})
            continue
        for placement in placements:
            for init in initial:
                workload = lfds.LfdsWorkload(structure, ops_per_thread=ops,
                                             initial_elements=init)
                try:
                    best = None
                    for _ in range(best_of):
                        res = lfds.run_lfds(workload, placement, ctx.topo,
                                            ctx.timer, ctx.cal)
                        if best is None or res.total_time_ns < best.total_time_ns:
                            best = res
                except TierbenchError as exc:
                    log_rows.append({"kind": "lfds", "status": "skipped",
                                     "reason": f"{structure}/{placement}/{init}: {exc}"})
                    continue
                rows.append({
                    "structure": best.structure, "placement": best.placement,
                    "initial_elements": best.initial_elements,
                    "element_size": best.element_size,
                    "footprint_bytes": best.footprint_bytes,
                    "ops_per_thread": best.ops_per_thread,
                    "total_time_ns": best.total_time_ns,
                    "data_node": best.data_node, "setter_cpu": best.setter_cpu,
                    "getter_cpu": best.getter_cpu, "verified": True, "notes": None,
                })
    out = {"lfds": rows}
    if log_rows:
        out["experiment_log"] = log_rows
    return out


def _run_fault_injection(ctx, params) -> dict:
    """Testing aid: mutate global state, then fail mid-experiment."""
    mutate = params.get("mutate", ["msr"])
    if "msr" in mutate:
        topology.set_hw_prefetchers(False, cpus=list(ctx.cpus))  # guard dropped
    if "weights" in mutate:
        topology.set_interleave_weights({0: 7})
    if "cat" in mutate:
        topology.set_cat_mask(9, 0xF, cpus=[ctx.cpus[0]])
    raise RuntimeError("injected failure after state mutation")


EXPERIMENTS: dict[str, ExperimentKind] = {
    "latency": ExperimentKind(
        ("x86",), {"ops", "patterns", "footprint_bytes", "stride_bytes", "repeats",
                   "warmup_rounds", "rounds_per_sample", "flush_each", "fence_policy",
                   "node", "seed", "retain_samples"}, _run_latency),
    "prefetch": ExperimentKind(
        ("x86",), {"hints", "footprint_bytes", "repeats", "node",
                   "retain_samples"}, _run_prefetch),
    "spinlock": ExperimentKind(
        ("x86", "two_cpus"), {"iterations", "hold_cycles", "node"}, _run_spinlock),
    "bandwidth": ExperimentKind(
        ("x86",), {"ops", "thread_counts", "size_bytes", "per_thread_bytes",
                   "window_s", "warmup_s", "trials", "nontemporal", "node"},
        _run_bandwidth),
    "loaded_latency": ExperimentKind(
        ("x86", "two_cpus"), {"load_thread_counts", "size_bytes",
                              "probe_footprint_bytes", "gen_op", "probe_rounds",
                              "node"}, _run_loaded_latency),
    "interleave": ExperimentKind(
        ("x86",), {"weight_configs", "op", "size_bytes", "threads", "window_s"},
        _run_interleave),
    "copy": ExperimentKind(
        ("x86",), {"sizes", "threads", "cached", "samples", "node"}, _run_copy),
    "flush": ExperimentKind(
        ("x86",), {"instructions", "states", "sizes", "per_line_fence", "repeats",
                   "node"}, _run_flush),
    "heatmap": ExperimentKind(
        ("x86",), {"strides", "counts", "instruction_class", "rounds", "seed",
                   "estimate_knee", "max_region_bytes", "node"}, _run_heatmap),
    "cat_heatmap": ExperimentKind(
        ("x86", "resctrl"), {"mask", "clos_id", "strides", "counts", "node"},
        _run_cat_heatmap),
    "eviction_conflict": ExperimentKind(
        ("x86", "resctrl", "two_cpus"),
        {"p0_mask", "clos_id", "p1_mask_positions", "p1_working_set_bytes",
         "p0_region_bytes", "rounds", "node"}, _run_eviction_conflict),
    "handoff": ExperimentKind(
        ("x86", "multi_socket"), {"working_set_bytes", "node"}, _run_handoff),
    "prefetch_footprint": ExperimentKind(
        ("x86",), {"strides", "max_warm_blocks", "region_bytes"},
        _run_prefetch_footprint),
    "lfds": ExperimentKind(
        ("x86",), {"structures", "placements", "initial_elements", "ops_per_thread",
                   "best_of", "heavy_verify"}, _run_lfds),
    "fault_injection": ExperimentKind((), {"mutate"}, _run_fault_injection),
}


# ---------------------------------------------------------------------
# Suite execution

def _build_timer(spec: dict):
    if spec.get("backend") == "mock":
        if "schedule" in spec:
            return MockTimer(spec["schedule"])
        return MockTimer.uniform(spec.get("uniform_ticks", 1))
    return HardwareTimer()


def _build_calibration(timer, spec: dict) -> Calibration:
    if timer.is_mock:
        return Calibration(
            cycles_per_ns=float(spec.get("cycles_per_ns", 1.0)),
            calibration_window_ns=1,
            residual_error_ppm=0.0, tsc_invariant=True, backend="mock",
        )
    return calibrate(timer, window_ns=50_000_000)


def run_suite(config: SuiteConfig) -> report.ReportBundle:
    """Execute every experiment sequentially; failures are contained."""
    journal_notes = topology.restore_stale_journal()
    topo = topology.discover(kind_overrides=config.roles.get("kind_overrides"))
    timer = _build_timer(config.timer)
    cal = _build_calibration(timer, config.timer)
    caps = capability_probe()

    cpus = config.noise.get("pin_cpus") or sorted(topology.current_affinity())
    prefetcher_guard = None
    prefetcher_state = "unknown"
    want_prefetchers = config.noise.get("prefetchers", "leave")
    if want_prefetchers in ("off", "on"):
        try:
            prefetcher_guard = topology.set_hw_prefetchers(
                want_prefetchers == "on", cpus=list(cpus))
            prefetcher_state = want_prefetchers
        except TierbenchError:
            prefetcher_state = "unknown"
    else:
        prefetcher_state = topology.prefetcher_state(list(cpus))

    manifest = {
        "suite_version": SUITE_VERSION,
        "schema_version": report.SCHEMA_VERSION,
        "kernel": platform.release(),
        "machine": platform.machine(),
        "topology": topo.to_manifest(),
        "calibration": cal.snapshot(),
        "capabilities": {k: caps[k] for k in sorted(caps)},
        "timer_backend": timer.kind,
        "prefetchers": prefetcher_state,
        "config_hash": config.config_hash(),
        "journal_recovery": journal_notes,
    }
    bundle = report.ReportBundle(manifest=manifest)

    ctx = SimpleNamespace(topo=topo, timer=timer, cal=cal, config=config,
                          caps=caps, cpus=list(cpus),
                          prefetcher_state=prefetcher_state)
    initial_affinity = topology.current_affinity()
    try:
        for spec in config.experiments:
            kind = EXPERIMENTS[spec.kind]
            missing = [r for r in kind.requires if not caps.get(r)]
            if missing:
                bundle.add_rows("experiment_log", [{
                    "kind": spec.kind, "status": "skipped",
                    "reason": f"missing capabilities: {', '.join(missing)}",
                }], spec.id)
                continue
            snapshot = _snapshot_global_state()
            try:
                tables = kind.run(ctx, spec.params)
                for family, rows in tables.items():
                    bundle.add_rows(family, rows, spec.id)
                bundle.add_rows("experiment_log", [{
                    "kind": spec.kind, "status": "ok", "reason": None,
                }], spec.id)
            except TierbenchError as exc:
                bundle.add_rows("experiment_log", [{
                    "kind": spec.kind, "status": "skipped", "reason": str(exc),
                }], spec.id)
            except Exception as exc:
                log.exception("experiment %s failed", spec.id)
                bundle.add_rows("experiment_log", [{
                    "kind": spec.kind, "status": "failed",
                    "reason": f"{type(exc).__name__}: {exc}",
                }], spec.id)
            finally:
                os.sched_setaffinity(0, initial_affinity)
                notes = _verify_and_restore(snapshot)
                topology.restore_stale_journal()
                for note in notes:
                    bundle.add_rows("experiment_log", [{
                        "kind": spec.kind, "status": "state-restored", "reason": note,
                    }], spec.id)
    finally:
        os.sched_setaffinity(0, initial_affinity)
        if prefetcher_guard is not None:
            prefetcher_guard.restore()
    return bundle


def load_config(path: str) -> SuiteConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config: {exc}") from exc
    except ValueError as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
    return SuiteConfig.from_dict(doc)
