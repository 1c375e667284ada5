"""Streaming bandwidth, loaded latency, interleave sweeps, and the copy
harness.

Workers are pinned threads executing the streaming kernels over
disjoint slices (2 MiB aligned where the slice size allows) with the
GIL released, synchronized on a start barrier and a stop flag.  The
measurement window is time based so slow and fast tiers get equal
statistical weight; the peak of three trials is reported.  Under the
mock timer every worker runs exactly one pass so byte accounting and
the resulting GiB/s are analytic.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EngineUnavailable, NotEnoughCores, SizeMismatch
from .patterns import build_chain
from .timing import Calibration, TimerBackend, timed_section
from .topology import MemoryRegion, PlacementPolicy, allocate, pin_thread

GIB = 1024 ** 3
SLICE_ALIGN = 2 * 1024 * 1024


@dataclass(frozen=True)
class BandwidthPoint:
    threads: int
    op: str  # load | store | copy
    gib_per_s: float
    pattern: str = "sequential-streaming"
    access_width_bytes: int = kernels.STREAM_ACCESS_WIDTH

    def __post_init__(self):
        if self.gib_per_s <= 0 or self.threads < 1:
            raise ValueError("bandwidth point out of range")


@dataclass(frozen=True)
class LoadedLatencyPoint:
    offered_load_threads: int
    achieved_gib_per_s: float
    probe_latency_ns: float


@dataclass(frozen=True)
class InterleaveSweepRow:
    weights: dict[int, int]
    aggregate_gib_per_s: float
    mechanism: str  # kernel | userspace-fallback | plain


@dataclass(frozen=True)
class CopyResult:
    engine: str
    size_bytes: int
    cached: bool
    threads: int
    latency_ns: float
    gib_per_s: float
    verified: bool


@dataclass(frozen=True)
class OffloadEngineConfig:
    """Configuration schema for a pluggable copy-offload engine.

    The engine itself is an unimplemented slot: requesting it raises
    EngineUnavailable.  The schema exists so results and configs can
    carry offload parameters for a future integration.
    """

    node: int = 0
    work_queues: int = 2
    max_batch: int = 32
    max_transfer_bytes: int = 2 * GIB


def _slices(region: MemoryRegion, n: int, per_thread_bytes: int | None) -> list[tuple[int, int]]:
    """Disjoint (addr, bytes) per worker; 2 MiB aligned when possible."""
    avail = region.size_bytes // n
    want = min(per_thread_bytes or avail, avail)
    align = SLICE_ALIGN if want >= SLICE_ALIGN and avail >= SLICE_ALIGN else 4096
    step = (avail // align) * align
    size = min((want // align) * align or align, step)
    if step == 0:
        raise ValueError("region too small for the requested worker count")
    return [(region.addr + i * step, size) for i in range(n)]


class _StreamWorkers:
    """Pinned streaming workers with per-worker byte accounting."""

    def __init__(self, slices: list[tuple[int, int]], cpus: list[int], op: str,
                 nontemporal: bool, single_pass: bool):
        self.bytes_done = [0] * len(slices)
        self._stop = threading.Event()
        self._barrier = threading.Barrier(len(slices) + 1)
        self._threads = []
        for i, ((addr, size), cpu) in enumerate(zip(slices, cpus)):
            t = threading.Thread(
                target=self._run, args=(i, addr, size, cpu, op, nontemporal, single_pass),
                daemon=True,
            )
            self._threads.append(t)

    def _run(self, i: int, addr: int, size: int, cpu: int, op: str,
             nontemporal: bool, single_pass: bool):
        pin_thread(cpu)
        self._barrier.wait()
        while True:
            if op == "load":
                kernels.stream_load(addr, size, 1, int(nontemporal))
            else:
                kernels.stream_store(addr, size, 1, int(nontemporal))
            self.bytes_done[i] += size
            if single_pass or self._stop.is_set():
                return

    def start(self):
        for t in self._threads:
            t.start()
        self._barrier.wait()

    def stop(self):
        self._stop.set()
        for t in self._threads:
            t.join()

    def total_bytes(self) -> int:
        return sum(self.bytes_done)


def bandwidth_sweep(region: MemoryRegion, op: str, thread_counts: list[int],
                    cpus: list[int], timer: TimerBackend, calibration: Calibration,
                    per_thread_bytes: int | None = None, window_s: float = 2.0,
                    warmup_s: float = 0.3, trials: int = 3,
                    nontemporal: bool = False) -> list[BandwidthPoint]:
    """Aggregate GiB/s per thread count (peak of `trials` windows)."""
    if op not in ("load", "store"):
        raise ValueError(f"unknown bandwidth op {op!r}")
    if max(thread_counts) > len(cpus):
        raise NotEnoughCores(
            f"need {max(thread_counts)} cpus, have {len(cpus)} on the target socket"
        )
    points = []
    for n in thread_counts:
        best = 0.0
        for _ in range(1 if timer.is_mock else trials):
            slices = _slices(region, n, per_thread_bytes)
            workers = _StreamWorkers(slices, cpus[:n], op, nontemporal,
                                     single_pass=timer.is_mock)
            if timer.is_mock:
                t0 = timer.read_cycles()
                workers.start()
                workers.stop()
                t1 = timer.read_cycles()
                moved = workers.total_bytes()
            else:
                workers.start()
                time.sleep(warmup_s)
                b0 = workers.total_bytes()
                t0 = timer.read_cycles()
                time.sleep(window_s)
                b1 = workers.total_bytes()
                t1 = timer.read_cycles()
                workers.stop()
                moved = b1 - b0
            elapsed_ns = calibration.to_ns(t1 - t0)
            if elapsed_ns > 0 and moved > 0:
                best = max(best, moved / GIB / (elapsed_ns / 1e9))
        width = 16 if (nontemporal and op == "load") else kernels.STREAM_ACCESS_WIDTH
        points.append(BandwidthPoint(threads=n, op=op, gib_per_s=best,
                                     access_width_bytes=width))
    return points


def loaded_latency(region: MemoryRegion, load_thread_counts: list[int],
                   cpus: list[int], timer: TimerBackend, calibration: Calibration,
                   probe_footprint_bytes: int | None = None, gen_op: str = "load",
                   probe_rounds: int = 3, settle_s: float = 0.2,
                   seed: int = 1) -> list[LoadedLatencyPoint]:
    """Probe latency vs offered load.

    One pinned probe thread chases a flushless random chain sized well
    past the LLC while N pinned generators stream over the rest of the
    same region; each point pairs the generators' achieved bandwidth
    with the probe's concurrent per-hop latency.
    """
    if not load_thread_counts:
        raise ValueError("need at least one load point")
    if max(load_thread_counts) + 1 > len(cpus):
        raise NotEnoughCores(
            f"need {max(load_thread_counts) + 1} cpus, have {len(cpus)}"
        )
    probe_cpu, gen_cpus = cpus[0], cpus[1:]
    footprint = probe_footprint_bytes or region.size_bytes // 2
    footprint = min(footprint, region.size_bytes // 2)
    num_blocks = footprint // 64
    chain = build_chain(region, num_blocks, 64, order="random", seed=seed)
    gen_off = (footprint + SLICE_ALIGN - 1) // SLICE_ALIGN * SLICE_ALIGN
    gen_bytes = region.size_bytes - gen_off

    class _SubRegion:
        addr = region.addr + gen_off
        size_bytes = gen_bytes

    pin_thread(probe_cpu)
    points = []
    for n in sorted(load_thread_counts):
        workers = None
        if n > 0:
            slices = _slices(_SubRegion, n, None)
            workers = _StreamWorkers(slices, gen_cpus[:n], gen_op, False,
                                     single_pass=timer.is_mock)
            workers.start()
            if not timer.is_mock:
                time.sleep(settle_s)
        b0 = workers.total_bytes() if workers else 0
        t0 = timer.read_cycles()
        hops = 0
        samples = []
        for _ in range(probe_rounds):
            cycles = timed_section(
                timer, lambda: kernels.chase(chain.start_addr, num_blocks, 0, 1)
            ) if kernels.HAVE_X86 else timed_section(timer, lambda: None)
            samples.append(calibration.to_ns(cycles) / num_blocks)
            hops += num_blocks
        t1 = timer.read_cycles()
        b1 = workers.total_bytes() if workers else 0
        if workers:
            workers.stop()
        elapsed_ns = calibration.to_ns(t1 - t0)
        achieved = (b1 - b0) / GIB / (elapsed_ns / 1e9) if elapsed_ns > 0 else 0.0
        points.append(LoadedLatencyPoint(
            offered_load_threads=n,
            achieved_gib_per_s=achieved,
            probe_latency_ns=float(np.median(samples)),
        ))
    return points


def interleave_sweep(weight_configs: list[dict[int, int]], op: str, size_bytes: int,
                     threads: int, cpus: list[int], timer: TimerBackend,
                     calibration: Calibration, window_s: float = 1.0,
                     page_size: int = 4096) -> list[InterleaveSweepRow]:
    """Aggregate bandwidth per weight tuple; mechanism recorded per row."""
    rows = []
    for weights in weight_configs:
        live = {n: w for n, w in weights.items() if w > 0}
        if len(live) == 1:
            node = next(iter(live))
            policy = PlacementPolicy.bind(node, page_size=page_size)
        else:
            policy = PlacementPolicy.weighted(weights, page_size=page_size)
        # placement is the subject here, so residency gets verified
        region = allocate(size_bytes, policy, verify=True)
        try:
            points = bandwidth_sweep(region, op, [threads], cpus, timer, calibration,
                                     window_s=window_s, warmup_s=0.1, trials=2)
            rows.append(InterleaveSweepRow(
                weights=dict(weights),
                aggregate_gib_per_s=points[0].gib_per_s,
                mechanism=region.mechanism,
            ))
        finally:
            region.close()
    return rows


def copy_bench(src_region: MemoryRegion, dst_region: MemoryRegion, sizes: list[int],
               threads: int, cached: bool, timer: TimerBackend,
               calibration: Calibration, cpus: list[int] | None = None,
               engine: str = "memcpy", samples: int = 9) -> list[CopyResult]:
    """memcpy latency/bandwidth over a size sweep.

    cached=False flushes source and destination before every sample.
    The destination is verified equal to the source after each size.
    The offload engine slot exists but is not implemented.
    """
    if engine != "memcpy":
        raise EngineUnavailable(f"copy engine {engine!r} is a pluggable slot, not implemented")
    if src_region.size_bytes < max(sizes) * threads or \
            dst_region.size_bytes < max(sizes) * threads:
        raise SizeMismatch("regions too small for size sweep x threads")
    results = []
    for size in sizes:
        all_samples: list[float] = []
        verified = True

        src_view = src_region.view8()
        dst_view = dst_region.view8()

        def one_thread(i: int):
            src = src_region.addr + i * size
            dst = dst_region.addr + i * size
            if cpus:
                pin_thread(cpus[i % len(cpus)])
            if timer.is_mock:
                # timing comes from the schedule; the copy itself still runs
                for _ in range(samples):
                    all_samples.append(calibration.to_ns(timed_section(timer, lambda: None)))
                np.copyto(dst_view[i * size:(i + 1) * size],
                          src_view[i * size:(i + 1) * size])
                return
            out = np.zeros(samples, dtype=np.uint64)
            kernels.copy_samples(dst, src, size, samples, int(not cached), out.ctypes.data)
            all_samples.extend(calibration.to_ns(c) for c in out)

        rng = np.random.default_rng(size)
        src_view[: size * threads] = rng.integers(0, 256, size * threads, dtype=np.uint8)
        dst_view[: size * threads] = 0
        if threads == 1 or timer.is_mock:
            for i in range(threads):
                one_thread(i)
        else:
            ts = [threading.Thread(target=one_thread, args=(i,)) for i in range(threads)]
            for t in ts:
                t.start()
            for t in ts:
                t.join()
        for i in range(threads):
            if not np.array_equal(src_view[i * size:(i + 1) * size],
                                  dst_view[i * size:(i + 1) * size]):
                verified = False
        med = float(np.median(all_samples))
        gib = (size * threads) / GIB / (med / 1e9) if med > 0 else 0.0
        results.append(CopyResult(engine=engine, size_bytes=size, cached=cached,
                                  threads=threads, latency_ns=med, gib_per_s=gib,
                                  verified=verified))
    return results
