"""Amortized load/store latency, atomic-op latency, spinlock contention,
and software-prefetch probes.

Latency numbers are per-hop: each sample times `rounds_per_sample` full
chain traversals and divides by the hop count, matching the
average-per-cache-line reporting convention.  Per-sample probes
(prefetch and single loads) are timed inside the C kernels because one
sample is only a few hundred nanoseconds.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import CounterUnavailable, InstructionUnsupported
from .patterns import PointerChain, traverse
from .stats import LatencyStats
from .timing import Calibration, CounterSpec, TimerBackend, open_counter, timed_section
from .topology import pin_thread


@dataclass
class MeasurementConfig:
    repeats: int = 1000
    warmup_rounds: int = 1
    rounds_per_sample: int = 1
    flush_each: bool = False
    fence_policy: str = "strict"
    pin_cpu: int | None = None
    prefetchers: str = "unknown"  # off | on | unknown
    footprint_bytes: int | None = None

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.prefetchers not in ("off", "on", "unknown"):
            raise ValueError(f"bad prefetchers state {self.prefetchers!r}")


@dataclass
class ContentionStats:
    lock_kind: str
    iterations: int
    counter_source: str  # perf | absent
    per_thread: list[dict] = field(default_factory=list)


PREFETCH_HINT_NAMES = tuple(kernels.PREFETCH_HINTS)


def _strict(cfg: MeasurementConfig) -> int:
    return 1 if cfg.fence_policy == "strict" else 0


def _chase_body(chain: PointerChain, cfg: MeasurementConfig, op: str):
    hops = cfg.rounds_per_sample * chain.num_blocks
    start = chain.start_addr
    flush = int(cfg.flush_each)
    strict = _strict(cfg)
    if not kernels.HAVE_X86:
        if op != "load":
            raise InstructionUnsupported(f"{op} chase requires the x86 kernels")
        return lambda: traverse(chain, cfg.rounds_per_sample)
    if op == "load":
        return lambda: kernels.chase(start, hops, flush, strict)
    if op == "store":
        return lambda: kernels.chase_store(start, hops, flush, strict)
    if op == "cmpxchg_load":
        return lambda: kernels.chase_cmpxchg(start, hops, 0, flush, strict)
    if op == "cmpxchg_store":
        return lambda: kernels.chase_cmpxchg(start, hops, 1, flush, strict)
    if op == "nt_load":
        return lambda: kernels.chase_nt(start, hops)
    raise ValueError(f"unknown chase op {op!r}")


def _chase_latency(chain: PointerChain, cfg: MeasurementConfig, timer: TimerBackend,
                   calibration: Calibration, op: str) -> LatencyStats:
    if cfg.pin_cpu is not None:
        pin_thread(cfg.pin_cpu)
    body = _chase_body(chain, cfg, op)
    if cfg.warmup_rounds:
        warm = _chase_body(
            chain,
            MeasurementConfig(repeats=1, warmup_rounds=0,
                              rounds_per_sample=cfg.warmup_rounds,
                              flush_each=cfg.flush_each, fence_policy=cfg.fence_policy),
            op,
        )
        warm()
    hops = cfg.rounds_per_sample * chain.num_blocks
    overhead = timer.overhead_cycles
    samples = []
    for _ in range(cfg.repeats):
        cycles = timed_section(timer, body)
        cycles = cycles - overhead if cycles > overhead else cycles
        samples.append(calibration.to_ns(cycles) / hops)
    return LatencyStats.from_samples_ns(samples, calibration.snapshot())


def load_latency(chain: PointerChain, cfg: MeasurementConfig, timer: TimerBackend,
                 calibration: Calibration) -> LatencyStats:
    """Per-line load latency; with flush_each every hop misses all caches."""
    return _chase_latency(chain, cfg, timer, calibration, "load")


def store_latency(chain: PointerChain, cfg: MeasurementConfig, timer: TimerBackend,
                  calibration: Calibration) -> LatencyStats:
    """Per-line latency with a dependent store into each visited line."""
    return _chase_latency(chain, cfg, timer, calibration, "store")


def atomic_latency(chain: PointerChain, cfg: MeasurementConfig, timer: TimerBackend,
                   calibration: Calibration, op: str = "cmpxchg_load") -> LatencyStats:
    """Lock-prefixed compare-exchange per hop.

    cmpxchg_load uses a never-matching expected value (no write occurs,
    isolating the read-for-ownership cost); cmpxchg_store matches the
    zeroed scratch word so the write happens every hop.
    """
    if op not in ("cmpxchg_load", "cmpxchg_store"):
        raise ValueError(f"unknown atomic op {op!r}")
    return _chase_latency(chain, cfg, timer, calibration, op)


def nt_load_latency(chain: PointerChain, cfg: MeasurementConfig, timer: TimerBackend,
                    calibration: Calibration) -> LatencyStats:
    if not kernels.HAVE_SSE41:
        raise InstructionUnsupported("non-temporal loads unavailable")
    return _chase_latency(chain, cfg, timer, calibration, "nt_load")


# ---------------------------------------------------------------------
# Spinlock contention

def spinlock_contention(region, iterations: int, cpus: tuple[int, int],
                        timer: TimerBackend, calibration: Calibration,
                        hold_cycles: int = 0, flush_each: bool = True) -> ContentionStats:
    """Two pinned threads fight over one lock guarding a shared line.

    Each iteration: acquire (test-and-test-and-set with pause), write a
    random value, flush it, optional injected hold time, release.
    Branch counts come from per-thread perf counters when available;
    the kernel-side spin-retry count is always reported.  Under the mock
    timer the two workers run sequentially so results stay deterministic.
    """
    if not kernels.HAVE_X86:
        raise InstructionUnsupported("spinlock worker requires the x86 kernels")
    lock_addr = region.addr
    data_addr = region.addr + 64
    region.view64()[0] = 0
    stats = ContentionStats(lock_kind="spinlock", iterations=iterations,
                            counter_source="perf")
    results: dict[int, dict] = {}
    barrier = threading.Barrier(2)
    sequential = timer.is_mock

    def worker(thread_id: int, cpu: int, seed: int):
        pin_thread(cpu)
        counter = None
        try:
            counter = open_counter(CounterSpec("branches"))
        except CounterUnavailable:
            pass
        if not sequential:
            barrier.wait()
        t0 = timer.read_cycles()
        ops, spins = kernels.spin_worker(lock_addr, data_addr, iterations, seed,
                                         hold_cycles, int(flush_each))
        t1 = timer.read_cycles()
        branches = None
        if counter is not None:
            branches = counter.read()
            counter.close()
        results[thread_id] = {
            "thread": thread_id,
            "cpu": cpu,
            "ops": ops,
            "elapsed_ns": calibration.to_ns(t1 - t0),
            "branch_count": branches,
            "spin_retries": spins,
        }

    if sequential:
        worker(0, cpus[0], 11)
        worker(1, cpus[1], 22)
    else:
        threads = [threading.Thread(target=worker, args=(i, cpus[i], 11 * (i + 1)))
                   for i in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    stats.per_thread = [results[0], results[1]]
    if any(r["branch_count"] is None for r in stats.per_thread):
        stats.counter_source = "absent"
    assert stats.per_thread[0]["ops"] == stats.per_thread[1]["ops"]
    return stats


# ---------------------------------------------------------------------
# Software prefetch probes

def _sample_addresses(chain: PointerChain, n: int) -> np.ndarray:
    take = min(n, chain.num_blocks)
    idx = np.arange(take, dtype=np.uint64)
    return (np.uint64(chain.region.addr)
            + idx * np.uint64(chain.stride_bytes)).astype(np.uint64)


def _sampled_stats(out_cycles: np.ndarray, overhead: float, calibration: Calibration,
                   ) -> LatencyStats:
    adj = out_cycles.astype(np.float64) - overhead
    adj[adj < 0.0] = 0.0
    samples = [calibration.to_ns(c) for c in adj]
    return LatencyStats.from_samples_ns(samples, calibration.snapshot())


def _probe_overhead_cycles() -> float:
    """Median cost of an empty serialized bracket (same shape as samplers)."""
    return float(kernels.tsc_overhead(2001))


def prefetch_latency(chain: PointerChain, hint: str, cfg: MeasurementConfig,
                     timer: TimerBackend, calibration: Calibration) -> LatencyStats:
    """Time the prefetch instruction itself against cold lines."""
    if hint not in kernels.PREFETCH_HINTS:
        raise ValueError(f"unknown prefetch hint {hint!r}")
    if timer.is_mock:
        samples = [calibration.to_ns(timed_section(timer, lambda: None))
                   for _ in range(cfg.repeats)]
        return LatencyStats.from_samples_ns(samples, calibration.snapshot())
    if not kernels.HAVE_X86:
        raise InstructionUnsupported("prefetch probes require the x86 kernels")
    if cfg.pin_cpu is not None:
        pin_thread(cfg.pin_cpu)
    addrs = _sample_addresses(chain, cfg.repeats)
    overhead = _probe_overhead_cycles()
    out = np.zeros(len(addrs), dtype=np.uint64)
    kernels.prefetch_samples(addrs.ctypes.data, len(addrs),
                             kernels.PREFETCH_HINTS[hint], out.ctypes.data)
    return _sampled_stats(out, overhead, calibration)


def load_after_prefetch(chain: PointerChain, hint: str, cfg: MeasurementConfig,
                        timer: TimerBackend, calibration: Calibration) -> LatencyStats:
    """Prefetch a cold line, serialize, then time a demand load on it."""
    if hint not in kernels.PREFETCH_HINTS:
        raise ValueError(f"unknown prefetch hint {hint!r}")
    if timer.is_mock:
        samples = [calibration.to_ns(timed_section(timer, lambda: None))
                   for _ in range(cfg.repeats)]
        return LatencyStats.from_samples_ns(samples, calibration.snapshot())
    if not kernels.HAVE_X86:
        raise InstructionUnsupported("prefetch probes require the x86 kernels")
    if cfg.pin_cpu is not None:
        pin_thread(cfg.pin_cpu)
    addrs = _sample_addresses(chain, cfg.repeats)
    overhead = _probe_overhead_cycles()
    out = np.zeros(len(addrs), dtype=np.uint64)
    kernels.load_after_prefetch_samples(addrs.ctypes.data, len(addrs),
                                        kernels.PREFETCH_HINTS[hint], out.ctypes.data)
    return _sampled_stats(out, overhead, calibration)


def single_load_latency(addrs: np.ndarray, calibration: Calibration,
                        flush_first: bool = True) -> LatencyStats:
    """Individually timed demand loads (reference for post-flush checks)."""
    if not kernels.HAVE_X86:
        raise InstructionUnsupported("single-load probes require the x86 kernels")
    addrs = np.ascontiguousarray(addrs, dtype=np.uint64)
    overhead = _probe_overhead_cycles()
    out = np.zeros(len(addrs), dtype=np.uint64)
    kernels.load_samples(addrs.ctypes.data, len(addrs), int(flush_first), out.ctypes.data)
    return _sampled_stats(out, overhead, calibration)
