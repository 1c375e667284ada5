"""Thin access layer over the compiled measurement kernels.

Everything hardware-specific funnels through here: CPU feature flags,
the CPUID cache hierarchy fallback, and the raw kernel entry points.
On platforms where the extension was built without x86-64 support the
`HAVE_X86` flag is False and callers must use portable paths (pure
Python chain walking, no flush instructions).
"""

from __future__ import annotations

from . import _kernels

FEATURES: dict[str, int] = _kernels.features()

HAVE_X86: bool = bool(FEATURES.get("x86"))
HAVE_CLFLUSHOPT: bool = bool(FEATURES.get("clflushopt"))
HAVE_CLWB: bool = bool(FEATURES.get("clwb"))
HAVE_AVX2: bool = bool(FEATURES.get("avx2"))
HAVE_SSE41: bool = bool(FEATURES.get("sse41"))
HAVE_PREFETCHW: bool = bool(FEATURES.get("prefetchw"))
HAVE_RDTSCP: bool = bool(FEATURES.get("rdtscp"))
HAVE_INVARIANT_TSC: bool = bool(FEATURES.get("invariant_tsc"))

#: Widest regular vector width the streaming kernels will use, in bytes.
STREAM_ACCESS_WIDTH: int = 32 if HAVE_AVX2 else 8

PREFETCH_HINTS = {"T0": 0, "T1": 1, "T2": 2, "NTA": 3, "W": 4}
FLUSH_INSTRUCTIONS = {"clflush": 0, "clflushopt": 1, "clwb": 2}


def flush_supported(instruction: str) -> bool:
    if not HAVE_X86:
        return False
    if instruction == "clflushopt":
        return HAVE_CLFLUSHOPT
    if instruction == "clwb":
        return HAVE_CLWB
    return instruction == "clflush"


def cpuid_cache_info() -> list[dict]:
    """Cache hierarchy straight from CPUID (fallback when sysfs lacks it)."""
    return _kernels.cache_info()


# Re-export the raw entry points; benchmark modules call these directly.
tsc = getattr(_kernels, "tsc", None)
tsc_overhead = getattr(_kernels, "tsc_overhead", None)
chase = getattr(_kernels, "chase", None)
chase_store = getattr(_kernels, "chase_store", None)
chase_cmpxchg = getattr(_kernels, "chase_cmpxchg", None)
chase_nt = getattr(_kernels, "chase_nt", None)
stream_load = getattr(_kernels, "stream_load", None)
stream_store = getattr(_kernels, "stream_store", None)
load_pass = getattr(_kernels, "load_pass", None)
dirty_pass = getattr(_kernels, "dirty_pass", None)
flush_pass = getattr(_kernels, "flush_pass", None)
prefetch_samples = getattr(_kernels, "prefetch_samples", None)
load_after_prefetch_samples = getattr(_kernels, "load_after_prefetch_samples", None)
load_samples = getattr(_kernels, "load_samples", None)
flush_reload_samples = getattr(_kernels, "flush_reload_samples", None)
copy_samples = getattr(_kernels, "copy_samples", None)
footprint_probe = getattr(_kernels, "footprint_probe", None)
spin_worker = getattr(_kernels, "spin_worker", None)

spsc_init = _kernels.spsc_init
spsc_produce = _kernels.spsc_produce
spsc_consume = _kernels.spsc_consume
mpmc_init = _kernels.mpmc_init
mpmc_enqueue = _kernels.mpmc_enqueue
mpmc_dequeue = _kernels.mpmc_dequeue
map_init = _kernels.map_init
map_populate = _kernels.map_populate
map_update_worker = _kernels.map_update_worker
map_get_worker = _kernels.map_get_worker
map_final_check = _kernels.map_final_check
