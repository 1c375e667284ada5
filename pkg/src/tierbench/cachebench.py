"""Cache-utilization probes: stride x block-count heatmaps, knee
(effective capacity) estimation, CAT-mask partition probes, the shifted
mask eviction-conflict experiment, the cross-socket shared-data handoff,
and the hardware-prefetcher footprint probe.

Every cell of a heatmap runs a fresh single-cycle random chain; a rise
in latency with footprint marks the onset of evictions, so the boundary
of the low-latency plateau estimates how much cache that data source
can actually occupy.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    CounterUnavailable,
    InvalidWorkingSet,
    NoPlateau,
    RegionTooSmall,
    SingleSocket,
)
from .patterns import build_chain
from .timing import Calibration, CounterSpec, TimerBackend, open_counter, timed_section
from .topology import MemoryRegion, pin_thread, set_cat_mask

LINE = 64

INSTRUCTION_CLASSES = ("regular", "regular-store", "non-temporal",
                       "non-temporal-store", "atomic")


@dataclass(frozen=True)
class CatMask:
    clos_id: int
    bitmask: int

    @property
    def way_count(self) -> int:
        return bin(self.bitmask).count("1")

    def __post_init__(self):
        if self.bitmask <= 0:
            raise ValueError("CAT mask needs at least one way")


@dataclass
class HeatmapGrid:
    stride_axis: tuple[int, ...]
    count_axis: tuple[int, ...]
    cells: dict[tuple[int, int], float | None]  # (stride, count) -> mean ns; None = skipped
    instruction_class: str
    rounds: int

    def cell(self, stride: int, count: int) -> float | None:
        return self.cells.get((stride, count))


@dataclass(frozen=True)
class KneeEstimate:
    estimated_capacity_bytes: int
    threshold_ns: float
    confidence: str


def _cell_body(chain, instruction_class: str, hops: int):
    start = chain.start_addr
    if instruction_class == "regular":
        return lambda: kernels.chase(start, hops, 0, 1)
    if instruction_class == "regular-store":
        return lambda: kernels.chase_store(start, hops, 0, 1, 0)
    if instruction_class == "non-temporal":
        return lambda: kernels.chase_nt(start, hops)
    if instruction_class == "non-temporal-store":
        return lambda: kernels.chase_store(start, hops, 0, 1, 1)
    if instruction_class == "atomic":
        return lambda: kernels.chase_cmpxchg(start, hops, 0, 0, 1)
    raise ValueError(f"unknown instruction class {instruction_class!r}")


def cache_heatmap(region: MemoryRegion, strides: list[int], counts: list[int],
                  instruction_class: str, timer: TimerBackend, calibration: Calibration,
                  rounds: int = 3, warmup_rounds: int = 1, seed: int = 1,
                  pin_cpu: int | None = None, estimator: str = "mean") -> HeatmapGrid:
    """Per-hop latency for every (stride, count) cell.

    Cells whose footprint exceeds the region are recorded as None and
    the run continues.  The default cell estimator is the mean over
    `rounds`; "min" is available for hosts where scheduler preemption
    spikes would otherwise poison whole cells.
    """
    if list(strides) != sorted(set(strides)) or list(counts) != sorted(set(counts)):
        raise ValueError("axes must be strictly increasing")
    if instruction_class not in INSTRUCTION_CLASSES:
        raise ValueError(f"unknown instruction class {instruction_class!r}")
    if estimator not in ("mean", "min"):
        raise ValueError(f"unknown estimator {estimator!r}")
    if pin_cpu is not None:
        pin_thread(pin_cpu)
    cells: dict[tuple[int, int], float | None] = {}
    for stride in strides:
        for count in counts:
            if count * stride > region.size_bytes:
                cells[(stride, count)] = None
                continue
            chain = build_chain(region, count, stride, order="random", seed=seed)
            if timer.is_mock:
                body = lambda: None
            else:
                body = _cell_body(chain, instruction_class, count)
                for _ in range(warmup_rounds):
                    body()
            samples = []
            for _ in range(rounds):
                cycles = timed_section(timer, body)
                cycles = max(cycles - timer.overhead_cycles, 0)
                samples.append(calibration.to_ns(cycles) / count)
            cells[(stride, count)] = (min(samples) if estimator == "min"
                                      else sum(samples) / rounds)
    return HeatmapGrid(tuple(strides), tuple(counts), cells, instruction_class, rounds)


def estimate_knee(grid: HeatmapGrid, reference_stride: int | None = None,
                  threshold_factor: float = 1.5,
                  plateau_flatness: float = 1.6) -> KneeEstimate:
    """Capacity = largest footprint still on the low-latency plateau.

    The plateau is the mean of the three smallest-footprint cells at the
    reference stride; a cell belongs to the plateau region while its
    latency stays under plateau x threshold_factor.  A ramp with no flat
    region (smallest three cells spread wider than plateau_flatness) has
    no knee to find.
    """
    stride = reference_stride or grid.stride_axis[0]
    series = [(count, grid.cell(stride, count)) for count in grid.count_axis
              if grid.cell(stride, count) is not None]
    if len(series) < 4:
        raise ValueError("need >= 4 populated cells along the count axis")
    plateau_cells = [ns for _, ns in series[:3]]
    if max(plateau_cells) > plateau_flatness * max(min(plateau_cells), 1e-12):
        raise NoPlateau("no flat low-latency region at the smallest footprints")
    plateau = sum(plateau_cells) / 3.0
    threshold = plateau * threshold_factor
    knee_footprint = None
    for count, ns in series:
        if ns <= threshold:
            knee_footprint = count * stride
        else:
            break
    if knee_footprint is None:
        raise NoPlateau("even the smallest footprint exceeds the plateau threshold")
    confidence = "bounded"
    if knee_footprint == series[-1][0] * stride:
        confidence = "lower-bound"  # no cell above threshold inside tested range
    return KneeEstimate(knee_footprint, threshold, confidence)


def cat_partition_heatmap(region: MemoryRegion, mask: CatMask, strides: list[int],
                          counts: list[int], timer: TimerBackend,
                          calibration: Calibration, pin_cpu: int,
                          **kwargs) -> HeatmapGrid:
    """Heatmap with the measuring cpu confined to a CAT mask."""
    group = set_cat_mask(mask.clos_id, mask.bitmask, cpus=[pin_cpu])
    try:
        return cache_heatmap(region, strides, counts, "regular", timer, calibration,
                             pin_cpu=pin_cpu, **kwargs)
    finally:
        group.remove()


def eviction_conflict(p0_region: MemoryRegion, p1_region: MemoryRegion,
                      p0_mask: CatMask, p1_mask_positions: list[int],
                      cpus: tuple[int, int], timer: TimerBackend,
                      calibration: Calibration, p1_working_set_bytes: int,
                      rounds: int = 64) -> list[dict]:
    """P1's latency per shifted CAT mask while P0 hammers its own region.

    A latency spike where P1's mask overlaps P0's marks the shared LLC
    ways.  Under the mock timer P0 is not spawned and the output is the
    schedule-determined flat series.
    """
    num_blocks = p1_working_set_bytes // LINE
    if num_blocks * LINE > p1_region.size_bytes:
        raise RegionTooSmall("P1 working set exceeds its region")
    results = []
    stop = threading.Event()
    p0_thread = None
    p0_group = None
    if not timer.is_mock:
        p0_group = set_cat_mask(p0_mask.clos_id, p0_mask.bitmask, cpus=[cpus[0]])
        p0_chain = build_chain(p0_region, p0_region.size_bytes // LINE, LINE,
                               order="random", seed=3)

        def p0_run():
            pin_thread(cpus[0])
            while not stop.is_set():
                kernels.chase(p0_chain.start_addr, p0_chain.num_blocks, 0, 1)

        p0_thread = threading.Thread(target=p0_run, daemon=True)
        p0_thread.start()
    try:
        chain = build_chain(p1_region, num_blocks, LINE, order="random", seed=4)
        for position_mask in p1_mask_positions:
            group = None
            if not timer.is_mock:
                pin_thread(cpus[1])
                group = set_cat_mask(p0_mask.clos_id + 1, position_mask, cpus=[cpus[1]])
            try:
                body = (lambda: kernels.chase(chain.start_addr, num_blocks, 0, 1)) \
                    if not timer.is_mock else (lambda: None)
                if not timer.is_mock:
                    body()  # warm under the new mask
                total = 0.0
                for _ in range(rounds):
                    cycles = timed_section(timer, body)
                    total += calibration.to_ns(max(cycles - timer.overhead_cycles, 0)) / num_blocks
                results.append({"p1_mask": position_mask,
                                "p1_mean_latency_ns": total / rounds})
            finally:
                if group is not None:
                    group.remove()
    finally:
        stop.set()
        if p0_thread is not None:
            p0_thread.join()
        if p0_group is not None:
            p0_group.remove()
    return results


def shared_data_handoff(region: MemoryRegion, working_set_bytes: int,
                        cpus: tuple[int, int], timer: TimerBackend,
                        calibration: Calibration, stable_ns: float = 50.0,
                        max_warm_iters: int = 200, rounds: int = 32,
                        socket_count: int = 2, estimator: str = "median") -> dict:
    """Warm a shared set on one socket, then read it from the other.

    Thread 0 chases until its amortized latency stabilizes below
    `stable_ns` (the set is cache resident); thread 1 then chases the
    same chain from the remote socket.  Miss rates ride along when the
    perf interface allows.
    """
    if working_set_bytes <= 0:
        raise InvalidWorkingSet("working set must be positive")
    if socket_count < 2:
        raise SingleSocket("handoff needs two sockets")
    num_blocks = working_set_bytes // LINE
    if num_blocks < 2 or num_blocks * LINE > region.size_bytes:
        raise RegionTooSmall("working set does not fit the region")
    chain = build_chain(region, num_blocks, LINE, order="random", seed=5)

    def measure(cpu: int, warm_until_stable: bool) -> tuple[float, float | None]:
        pin_thread(cpu)
        body = (lambda: kernels.chase(chain.start_addr, num_blocks, 0, 1)) \
            if (kernels.HAVE_X86 and not timer.is_mock) else (lambda: None)
        last = None
        if warm_until_stable and not timer.is_mock:
            for _ in range(max_warm_iters):
                cycles = timed_section(timer, body)
                last = calibration.to_ns(max(cycles - timer.overhead_cycles, 0)) / num_blocks
                if last < stable_ns:
                    break
        counter = None
        try:
            counter = open_counter(CounterSpec("cache-misses"))
        except CounterUnavailable:
            pass
        samples = []
        hops = 0
        for _ in range(rounds):
            cycles = timed_section(timer, body)
            samples.append(calibration.to_ns(max(cycles - timer.overhead_cycles, 0)) / num_blocks)
            hops += num_blocks
        miss_rate = None
        if counter is not None:
            miss_rate = counter.read() / hops if hops else None
            counter.close()
        est = min(samples) if estimator == "min" else float(np.median(samples))
        return est, miss_rate

    t0_latency, _ = measure(cpus[0], warm_until_stable=True)
    results: dict = {}

    def t1_run():
        results["t1"], results["t1_miss"] = measure(cpus[1], warm_until_stable=False)

    if timer.is_mock:
        t1_run()
    else:
        t = threading.Thread(target=t1_run)
        t.start()
        t.join()
    return {
        "t0_latency_ns": t0_latency,
        "t1_latency_ns": results["t1"],
        "t1_miss_rate": results["t1_miss"],
        "working_set_bytes": working_set_bytes,
    }


def hw_prefetcher_footprint(region: MemoryRegion, strides: list[int],
                            max_warm_blocks: int, calibration: Calibration,
                            prefetcher: str = "all-on", reps: int = 9,
                            hit_ratio: float = 0.5, probe=None,
                            pin_cpu: int | None = None) -> list[dict]:
    """Smallest sequential warm-up after which the next block is a hit.

    For each stride, blocks 0..w-1 are demand-loaded in order (data
    flushed first) and the load of block w is timed; once the engine has
    started streaming, block w arrives early and the load costs a cache
    hit instead of a memory round trip.  Returns one record per stride
    with blocks_before_prefetch or None when no engine ever kicked in.
    """
    probe = probe or (lambda base, stride, warm, reps:
                      kernels.footprint_probe(base, stride, warm, reps))
    if pin_cpu is not None:
        pin_thread(pin_cpu)
    results = []
    for stride in strides:
        if (max_warm_blocks + 1) * stride > region.size_bytes:
            raise RegionTooSmall(f"stride {stride} x {max_warm_blocks} blocks exceed region")
        miss_ns = calibration.to_ns(probe(region.addr, stride, 0, reps))
        hit_ref = _hit_reference_ns(region, calibration)
        threshold = hit_ref + hit_ratio * max(miss_ns - hit_ref, 0.0)
        detected = None
        for warm in range(1, max_warm_blocks + 1):
            ns = calibration.to_ns(probe(region.addr, stride, warm, reps))
            if ns <= threshold:
                detected = warm
                break
        results.append({
            "prefetcher": prefetcher,
            "stride_bytes": stride,
            "blocks_before_prefetch": detected,
            "miss_reference_ns": miss_ns,
            "threshold_ns": threshold,
        })
    return results


def _hit_reference_ns(region: MemoryRegion, calibration: Calibration) -> float:
    addrs = np.full(64, np.uint64(region.addr), dtype=np.uint64)
    out = np.zeros(64, dtype=np.uint64)
    kernels.load_pass(region.addr, LINE)
    kernels.load_samples(addrs.ctypes.data, 64, 0, out.ctypes.data)
    med = float(np.median(out)) - float(kernels.tsc_overhead(501))
    return calibration.to_ns(max(med, 0.0))
