"""Cycle-accurate timing with an injectable backend.

The hardware backend reads the serialized cycle counter through the C
kernels; the mock backend replays a scripted sequence of per-read tick
increments so every downstream statistic is bit-reproducible in tests.
"""

from __future__ import annotations

import ctypes
import os
import struct
import time
from dataclasses import dataclass
from typing import Callable, Iterable

from . import kernels
from .errors import (
    CalibrationUnstable,
    CounterUnavailable,
    MockScheduleExhausted,
    NonInvariantTsc,
)

STRICT = "strict"
RELAXED = "relaxed"


class HardwareTimer:
    """Serialized cycle-counter reads (mfence+lfence / rdtscp fencing).

    `fence_policy` selects the serialization flavour for reads; strict is
    the default so no instruction of a timed body can be reordered out of
    the window.
    """

    kind = "hardware-cycle-counter"
    is_mock = False

    def __init__(self, fence_policy: str = STRICT):
        if not kernels.HAVE_X86:
            raise NonInvariantTsc("no cycle counter available on this build")
        if fence_policy not in (STRICT, RELAXED):
            raise ValueError(f"unknown fence policy {fence_policy!r}")
        self.fence_policy = fence_policy
        self._strict = 1 if fence_policy == STRICT else 0
        self._last = 0
        self._overhead: int | None = None

    def read_cycles(self) -> int:
        v = kernels.tsc(self._strict)
        if v < self._last:
            v = self._last
        self._last = v
        return v

    @property
    def overhead_cycles(self) -> int:
        """Median cost of an empty timed section, measured once."""
        if self._overhead is None:
            self._overhead = kernels.tsc_overhead(1001)
        return self._overhead


class MockTimer:
    """Replays a schedule of per-read tick increments.

    The schedule is consumed one increment per read and exhaustion is an
    error; `MockTimer.uniform(dt)` provides an inexhaustible constant
    increment stream for whole-suite deterministic runs.
    """

    kind = "mock"
    is_mock = True
    fence_policy = STRICT
    overhead_cycles = 0

    def __init__(self, schedule: Iterable[int] | None = None, uniform_ticks: int | None = None):
        if (schedule is None) == (uniform_ticks is None):
            raise ValueError("provide exactly one of schedule or uniform_ticks")
        if schedule is not None:
            steps = list(schedule)
            if any(s < 0 for s in steps):
                raise ValueError("mock increments must be non-negative")
            self._steps: list[int] | None = steps
        else:
            if uniform_ticks < 0:
                raise ValueError("mock increments must be non-negative")
            self._steps = None
        self._uniform = uniform_ticks
        self._pos = 0
        self._now = 0

    @classmethod
    def uniform(cls, ticks: int) -> "MockTimer":
        return cls(uniform_ticks=ticks)

    def read_cycles(self) -> int:
        if self._steps is None:
            self._now += self._uniform
        else:
            if self._pos >= len(self._steps):
                raise MockScheduleExhausted(
                    f"mock schedule exhausted after {self._pos} reads"
                )
            self._now += self._steps[self._pos]
            self._pos += 1
        return self._now


TimerBackend = HardwareTimer | MockTimer


def timed_section(timer: TimerBackend, body: Callable[[], object]) -> int:
    """Run `body` bracketed by serialized reads; returns raw elapsed cycles.

    The measurement overhead of an empty body is `timer.overhead_cycles`;
    callers subtract it where per-sample accuracy matters.
    """
    t0 = timer.read_cycles()
    body()
    t1 = timer.read_cycles()
    return t1 - t0


@dataclass(frozen=True)
class Calibration:
    """Cycles-to-nanoseconds conversion with its measurement context."""

    cycles_per_ns: float
    calibration_window_ns: int
    residual_error_ppm: float
    tsc_invariant: bool
    backend: str

    def __post_init__(self):
        if self.cycles_per_ns <= 0:
            raise ValueError("cycles_per_ns must be positive")
        if self.residual_error_ppm < 0:
            raise ValueError("residual_error_ppm must be non-negative")

    def to_ns(self, cycles: float) -> float:
        return cycles / self.cycles_per_ns

    def snapshot(self) -> dict:
        return {
            "cycles_per_ns": self.cycles_per_ns,
            "calibration_window_ns": self.calibration_window_ns,
            "residual_error_ppm": self.residual_error_ppm,
            "tsc_invariant": self.tsc_invariant,
            "backend": self.backend,
        }


def _one_window(timer: TimerBackend, wall: Callable[[], int], window_ns: int) -> float:
    w0 = wall()
    t0 = timer.read_cycles()
    while True:
        w = wall()
        if w - w0 >= window_ns:
            break
    t1 = timer.read_cycles()
    elapsed_ns = w - w0
    if elapsed_ns <= 0 or t1 <= t0:
        raise CalibrationUnstable("degenerate calibration window")
    return (t1 - t0) / elapsed_ns


def calibrate(
    timer: TimerBackend,
    window_ns: int = 100_000_000,
    wall: Callable[[], int] = time.perf_counter_ns,
    require_invariant: bool = False,
) -> Calibration:
    """Measure cycles-per-ns against a monotonic wall clock, twice.

    Two back-to-back windows must agree within 1% or the calibration is
    rejected.  A platform that does not advertise an invariant cycle
    counter only errors when `require_invariant` is set; otherwise the
    fact is recorded in the result (common inside VMs, where the host
    TSC is stable but the flag is hidden).
    """
    if window_ns <= 0:
        raise CalibrationUnstable("calibration window must be positive")
    invariant = kernels.HAVE_INVARIANT_TSC
    if not timer.is_mock and require_invariant and not invariant:
        raise NonInvariantTsc("platform does not advertise an invariant cycle counter")
    r1 = _one_window(timer, wall, window_ns)
    r2 = _one_window(timer, wall, window_ns)
    ratio = r1 / r2
    if abs(ratio - 1.0) > 0.01:
        raise CalibrationUnstable(
            f"calibration windows disagree: {r1:.6f} vs {r2:.6f} cycles/ns"
        )
    return Calibration(
        cycles_per_ns=(r1 + r2) / 2.0,
        calibration_window_ns=window_ns,
        residual_error_ppm=abs(ratio - 1.0) * 1e6,
        tsc_invariant=bool(invariant) if not timer.is_mock else True,
        backend=timer.kind,
    )


# ---------------------------------------------------------------------
# Per-thread hardware event counters (perf_event_open)

_PERF_EVENT_OPEN = 298  # x86_64
_IOC_ENABLE = 0x2400
_IOC_DISABLE = 0x2401
_IOC_RESET = 0x2403

# type, config pairs for the supported named events
_EVENTS = {
    "branches": (0, 2),  # PERF_TYPE_HARDWARE / BRANCH_INSTRUCTIONS
    "cache-misses": (0, 3),  # PERF_TYPE_HARDWARE / CACHE_MISSES
    "llc-misses": (3, 2 | (0 << 8) | (1 << 16)),  # HW_CACHE: LL read miss
}


@dataclass(frozen=True)
class CounterSpec:
    event: str
    raw_config: int | None = None  # required for event == "custom-raw"


class CounterHandle:
    """One per-thread event counter; owned by the opening thread."""

    def __init__(self, fd: int, spec: CounterSpec):
        self._fd = fd
        self.spec = spec
        self._libc = ctypes.CDLL(None, use_errno=True)

    def read(self) -> int:
        data = os.read(self._fd, 8)
        return struct.unpack("<Q", data)[0]

    def reset(self) -> None:
        self._libc.ioctl(self._fd, _IOC_RESET, 0)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_counter(spec: CounterSpec) -> CounterHandle:
    """Open a per-thread counter for the calling thread.

    Raises CounterUnavailable on unsupported events or when the OS
    refuses the perf interface; callers degrade to counter-less stats
    and must never fabricate counts.
    """
    if spec.event == "custom-raw":
        if spec.raw_config is None:
            raise CounterUnavailable("custom-raw requires raw_config")
        ev_type, config = 4, spec.raw_config  # PERF_TYPE_RAW
    elif spec.event in _EVENTS:
        ev_type, config = _EVENTS[spec.event]
    else:
        raise CounterUnavailable(f"unsupported event {spec.event!r}")

    # perf_event_attr, VER0 layout (64 bytes)
    flags = (1 << 5) | (1 << 6)  # exclude_kernel | exclude_hv
    attr = struct.pack(
        "<IIQQQQQIIQ",
        ev_type,  # type
        64,  # size (PERF_ATTR_SIZE_VER0)
        config,
        0,  # sample_period
        0,  # sample_type
        0,  # read_format
        flags,
        0,  # wakeup_events
        0,  # bp_type
        0,  # bp_addr
    )
    libc = ctypes.CDLL(None, use_errno=True)
    buf = ctypes.create_string_buffer(attr, len(attr))
    fd = libc.syscall(_PERF_EVENT_OPEN, buf, 0, -1, -1, 0)
    if fd < 0:
        err = ctypes.get_errno()
        raise CounterUnavailable(f"perf_event_open failed: {os.strerror(err)}")
    handle = CounterHandle(fd, spec)
    libc.ioctl(fd, _IOC_RESET, 0)
    libc.ioctl(fd, _IOC_ENABLE, 0)
    return handle


def read_counter(handle: CounterHandle) -> int:
    return handle.read()
