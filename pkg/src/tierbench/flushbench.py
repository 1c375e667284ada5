"""Flush-instruction latency curves (clflush / clflushopt / clwb).

Each point times one full flush pass over a buffer of the given size and
divides by the line count.  The default fence policy is a single fence
after the pass: the optimized instructions owe their throughput to
flushing lines in parallel, and a per-line fence (available behind
`per_line_fence`) would serialize them artificially.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InstructionUnsupported
from .stats import LatencyStats
from .timing import Calibration, TimerBackend, timed_section
from .topology import MemoryRegion

LINE = 64
DEFAULT_MAX_SIZE = 256 * 1024 * 1024


def geometric_sizes(lo: int = LINE, hi: int = DEFAULT_MAX_SIZE, factor: int = 4) -> tuple[int, ...]:
    sizes = []
    size = lo
    while size <= hi:
        sizes.append(size)
        size *= factor
    return tuple(sizes)


@dataclass(frozen=True)
class FlushSpec:
    instruction: str  # clflush | clflushopt | clwb
    state: str  # clean | dirty
    sizes: tuple[int, ...] = field(default_factory=geometric_sizes)
    per_line_fence: bool = False
    full_line_dirty: bool = False
    repeats: int = 5

    def __post_init__(self):
        if self.instruction not in kernels.FLUSH_INSTRUCTIONS:
            raise ValueError(f"unknown flush instruction {self.instruction!r}")
        if self.state not in ("clean", "dirty"):
            raise ValueError(f"unknown line state {self.state!r}")
        if not self.sizes:
            raise ValueError("need at least one size")
        if any(s < LINE or s % LINE for s in self.sizes):
            raise ValueError("sizes must be positive multiples of 64")


@dataclass
class FlushCurve:
    spec: FlushSpec
    points: list[dict]  # {size_bytes, lines, ns_per_line, total_ns}


def _prepare(region: MemoryRegion, size: int, state: str, full_line: bool) -> None:
    if state == "clean":
        # evict, then load: lines end up cached and unmodified.  The prep
        # path for clean never writes, by construction.
        kernels.flush_pass(region.addr, size, kernels.FLUSH_INSTRUCTIONS["clflush"], 0)
        kernels.load_pass(region.addr, size)
    else:
        kernels.dirty_pass(region.addr, size, int(full_line))


def flush_latency(region: MemoryRegion, spec: FlushSpec, timer: TimerBackend,
                  calibration: Calibration) -> FlushCurve:
    """Per-line flush cost for every requested size (median of repeats)."""
    if not timer.is_mock and not kernels.flush_supported(spec.instruction):
        raise InstructionUnsupported(
            f"{spec.instruction} not supported on this CPU"
        )
    instr = kernels.FLUSH_INSTRUCTIONS[spec.instruction]
    points = []
    for size in spec.sizes:
        if size > region.size_bytes:
            raise ValueError(f"size {size} exceeds region")
        lines = size // LINE
        totals = []
        for _ in range(spec.repeats):
            if timer.is_mock:
                cycles = timed_section(timer, lambda: None)
            else:
                _prepare(region, size, spec.state, spec.full_line_dirty)
                cycles = kernels.flush_pass(region.addr, size, instr,
                                            int(spec.per_line_fence))
            totals.append(calibration.to_ns(cycles))
        total_ns = float(np.median(totals))
        points.append({
            "size_bytes": size,
            "lines": lines,
            "total_ns": total_ns,
            "ns_per_line": total_ns / lines,
        })
    return FlushCurve(spec=spec, points=points)


def post_flush_reload(region: MemoryRegion, instruction: str,
                      calibration: Calibration, n_lines: int = 2048) -> LatencyStats:
    """Reload latency right after flushing each line with `instruction`.

    Per line: dirty, flush, fence, timed reload.  After clflush the
    reload costs a memory round trip; after clwb the line stays valid in
    some cache level, so the reload is a cache hit.  Lines are sampled
    every other line (buddy prefetches must not cache a future target)
    in randomized order (pointer-array prefetchers must not run ahead).
    """
    if not kernels.flush_supported(instruction):
        raise InstructionUnsupported(f"{instruction} not supported on this CPU")
    n_lines = min(n_lines, region.size_bytes // (2 * LINE))
    addrs = np.ascontiguousarray(
        np.uint64(region.addr)
        + np.arange(n_lines, dtype=np.uint64) * np.uint64(2 * LINE))
    out = np.zeros(n_lines, dtype=np.uint64)
    kernels.flush_reload_samples(addrs.ctypes.data, n_lines,
                                 kernels.FLUSH_INSTRUCTIONS[instruction],
                                 out.ctypes.data)
    overhead = float(kernels.tsc_overhead(2001))
    adj = out.astype(np.float64) - overhead
    adj[adj < 0.0] = 0.0
    samples = [calibration.to_ns(c) for c in adj]
    return LatencyStats.from_samples_ns(samples, calibration.snapshot())
