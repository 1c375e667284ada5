"""Lock-free data-structure benchmarks over placement configurations.

Three in-repo structures (bounded SPSC ring, Michael-Scott-style MPMC
queue over a tagged-index node pool, open-addressing atomic map) live
entirely inside placed regions so the placement policy governs every
byte of queue/map traffic.  A structure must pass its correctness gate
(verify_structure) before run_lfds will time it.

Placements generalize the six thread/data cases: "cxl" means the
designated far tier (any CPU-less node); unrealizable cases raise so
the runner can record a skip.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import OutOfMemory, PlacementUnrealizable, StructureUnverified
from .timing import Calibration, TimerBackend
from .topology import MemoryRegion, PlacementPolicy, TopologyMap, allocate, pin_thread

STRUCTURES = ("spsc_queue", "mpmc_queue", "concurrent_map")
PLACEMENTS = (
    "same-local-dimm",
    "same-local-cxl",
    "same-remote-dimm",
    "same-remote-cxl",
    "diff-setter-cxl",
    "diff-getter-cxl",
)

QUEUE_ELEMENT_BYTES = 8
MAP_ELEMENT_BYTES = 16  # 8-byte key + 8-byte value

_SPSC_HEADER = 256
_MPMC_HEADER = 256
_MPMC_NODE = 64
_MAP_HEADER = 64
_SPSC_SLACK = 8192

_verified: set[str] = set()


@dataclass(frozen=True)
class LfdsWorkload:
    structure: str
    ops_per_thread: int = 1_000_000
    initial_elements: int = 0

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown structure {self.structure!r}")
        if self.ops_per_thread < 0 or self.initial_elements < 0:
            raise ValueError("negative workload parameter")

    @property
    def element_size(self) -> int:
        return MAP_ELEMENT_BYTES if self.structure == "concurrent_map" else QUEUE_ELEMENT_BYTES

    @property
    def footprint_bytes(self) -> int:
        return self.initial_elements * self.element_size


@dataclass(frozen=True)
class LfdsResult:
    structure: str
    placement: str
    initial_elements: int
    ops_per_thread: int
    element_size: int
    footprint_bytes: int
    total_time_ns: float
    setter_cpu: int
    getter_cpu: int
    data_node: int


def _next_pow2(n: int) -> int:
    return 1 << max(n - 1, 1).bit_length()


def resolve_placement(placement: str, topo: TopologyMap) -> tuple[int, int, int]:
    """Map a placement name to (setter_cpu, getter_cpu, data_node).

    Raises PlacementUnrealizable when the host topology cannot express
    the case (single socket, no far tier, too few cpus).
    """
    if placement not in PLACEMENTS:
        raise ValueError(f"unknown placement {placement!r}")
    sockets = sorted(set(topo.sockets.values()))
    far = topo.far_tier_nodes()

    def two_cpus(socket: int) -> tuple[int, int]:
        cpus = topo.cpus_of_socket(socket)
        if len(cpus) < 2:
            raise PlacementUnrealizable(f"socket {socket} has fewer than 2 cpus")
        return cpus[0], cpus[1]

    def dram_node_of_socket(socket: int) -> int:
        for node in topo.nodes:
            if node.cpu_ids and topo.sockets.get(node.cpu_ids[0]) == socket:
                return node.node_id
        raise PlacementUnrealizable(f"no memory node for socket {socket}")

    def far_node_near(socket: int, nearest: bool) -> int:
        if not far:
            raise PlacementUnrealizable("no far-tier (CPU-less) node on this host")
        home = dram_node_of_socket(socket)
        ranked = sorted(
            far,
            key=lambda n: topo.distances[home][n]
            if home < len(topo.distances) and n < len(topo.distances[home]) else 0,
        )
        return ranked[0] if nearest else ranked[-1]

    s0 = sockets[0]
    if placement == "same-local-dimm":
        a, b = two_cpus(s0)
        return a, b, dram_node_of_socket(s0)
    if placement == "same-local-cxl":
        a, b = two_cpus(s0)
        return a, b, far_node_near(s0, nearest=True)
    if placement == "same-remote-dimm":
        if len(sockets) < 2:
            raise PlacementUnrealizable("single socket: no remote DIMM")
        a, b = two_cpus(s0)
        return a, b, dram_node_of_socket(sockets[1])
    if placement == "same-remote-cxl":
        if len(sockets) < 2:
            raise PlacementUnrealizable("single socket: no remote CXL")
        a, b = two_cpus(s0)
        return a, b, far_node_near(sockets[1], nearest=True)
    # diff-*: setter and getter on different sockets
    if len(sockets) < 2:
        raise PlacementUnrealizable("single socket: threads cannot be split")
    setter = topo.cpus_of_socket(s0)[0]
    getter = topo.cpus_of_socket(sockets[1])[0]
    if placement == "diff-setter-cxl":
        return setter, getter, far_node_near(s0, nearest=True)
    return setter, getter, far_node_near(sockets[1], nearest=True)


# ---------------------------------------------------------------------
# Structure lifecycle inside a region

def _region_for(workload: LfdsWorkload, node: int | None) -> MemoryRegion:
    if workload.structure == "spsc_queue":
        cap = workload.initial_elements + _SPSC_SLACK
        size = _SPSC_HEADER + cap * 8
    elif workload.structure == "mpmc_queue":
        pool = workload.initial_elements + 4096
        size = _MPMC_HEADER + pool * _MPMC_NODE
    else:
        slots = _next_pow2(max(2 * workload.initial_elements, 1024))
        size = _MAP_HEADER + slots * 16
    size += (-size) % 4096
    policy = PlacementPolicy.bind(node) if node is not None else PlacementPolicy.none()
    try:
        return allocate(size, policy, verify=False)
    except (OSError, MemoryError) as exc:
        raise OutOfMemory(f"cannot allocate {size} bytes for {workload.structure}") from exc


def _init_structure(region: MemoryRegion, workload: LfdsWorkload) -> dict:
    """Initialize and pre-populate; returns geometry for the workers."""
    if workload.structure == "spsc_queue":
        # constant slack past the fill level keeps the producer's burst
        # size (and so the wait-handoff rate) independent of the sweep
        cap = workload.initial_elements + _SPSC_SLACK
        kernels.spsc_init(region.addr, cap)
        if workload.initial_elements:
            kernels.spsc_produce(region.addr, workload.initial_elements, 0)
        return {"capacity": cap, "preloaded": workload.initial_elements}
    if workload.structure == "mpmc_queue":
        pool = workload.initial_elements + 4096
        kernels.mpmc_init(region.addr, pool)
        if workload.initial_elements:
            kernels.mpmc_enqueue(region.addr, workload.initial_elements, 0)
        return {"pool": pool, "preloaded": workload.initial_elements}
    slots = _next_pow2(max(2 * workload.initial_elements, 1024))
    kernels.map_init(region.addr, slots)
    n_keys = max(workload.initial_elements, 1)
    kernels.map_populate(region.addr, n_keys)
    return {"slots": slots, "n_keys": n_keys}


def run_lfds(workload: LfdsWorkload, placement: str, topo: TopologyMap,
             timer: TimerBackend, calibration: Calibration,
             data_node: int | None = None) -> LfdsResult:
    """Wall time for a setter and a getter to finish ops_per_thread each.

    Initialization and pre-population are excluded from the timed
    window.  The structure kind must have passed verify_structure first.
    """
    if workload.structure not in _verified:
        raise StructureUnverified(
            f"{workload.structure} has not passed its correctness gate"
        )
    setter_cpu, getter_cpu, node = resolve_placement(placement, topo)
    if data_node is not None:
        node = data_node
    region = _region_for(workload, node)
    try:
        geo = _init_structure(region, workload)
        ops = workload.ops_per_thread
        barrier = threading.Barrier(3)
        errors: list[BaseException] = []

        def setter():
            try:
                pin_thread(setter_cpu)
                barrier.wait()
                if workload.structure == "spsc_queue":
                    kernels.spsc_produce(region.addr, ops, geo["preloaded"])
                elif workload.structure == "mpmc_queue":
                    kernels.mpmc_enqueue(region.addr, ops, geo["preloaded"])
                else:
                    kernels.map_update_worker(region.addr, ops, geo["n_keys"], 42, 0, 0)
            except BaseException as exc:  # propagated after join
                errors.append(exc)

        def getter():
            try:
                pin_thread(getter_cpu)
                barrier.wait()
                if workload.structure == "spsc_queue":
                    kernels.spsc_consume(region.addr, ops, 0)
                elif workload.structure == "mpmc_queue":
                    kernels.mpmc_dequeue(region.addr, ops)
                else:
                    kernels.map_get_worker(region.addr, ops, geo["n_keys"], 99)
            except BaseException as exc:
                errors.append(exc)

        threads = [threading.Thread(target=setter), threading.Thread(target=getter)]
        for t in threads:
            t.start()
        barrier.wait()
        t0 = timer.read_cycles()
        for t in threads:
            t.join()
        t1 = timer.read_cycles()
        if errors:
            raise errors[0]
        return LfdsResult(
            structure=workload.structure,
            placement=placement,
            initial_elements=workload.initial_elements,
            ops_per_thread=ops,
            element_size=workload.element_size,
            footprint_bytes=workload.footprint_bytes,
            total_time_ns=calibration.to_ns(t1 - t0),
            setter_cpu=setter_cpu,
            getter_cpu=getter_cpu,
            data_node=node,
        )
    finally:
        region.close()


# ---------------------------------------------------------------------
# Correctness gates

def verify_structure(structure: str, heavy: bool = True) -> dict:
    """Run the structure's correctness gate; benchmark timing is refused
    until this passes.

    SPSC: FIFO order, zero loss, zero duplication (1M items, 2 threads).
    MPMC: exact multiset equality (4x4 threads x 250k items).
    Map: read-your-writes per update plus last-write visibility after
    quiesce, with a concurrent reader observing only well-formed values.
    """
    if structure not in STRUCTURES:
        raise ValueError(f"unknown structure {structure!r}")
    checks: dict[str, bool] = {}
    if structure == "spsc_queue":
        checks.update(_verify_spsc(heavy))
    elif structure == "mpmc_queue":
        checks.update(_verify_mpmc(heavy))
    else:
        checks.update(_verify_map(heavy))
    ok = all(checks.values())
    if ok:
        _verified.add(structure)
    else:
        _verified.discard(structure)
    return {"ok": ok, "checks": checks}


def _scratch(size: int) -> MemoryRegion:
    size += (-size) % 4096
    return allocate(size, PlacementPolicy.none(), verify=False)


def _verify_spsc(heavy: bool) -> dict[str, bool]:
    checks = {}
    with _scratch(_SPSC_HEADER + 4096 * 8) as region:
        kernels.spsc_init(region.addr, 4096)
        out = np.zeros(100, dtype=np.uint64)
        kernels.spsc_produce(region.addr, 100, 1)
        violations, checksum = kernels.spsc_consume(region.addr, 100, 1, out.ctypes.data)
        checks["single_thread_fifo"] = (
            violations == 0 and out.tolist() == list(range(1, 101))
        )
    n = 1_000_000 if heavy else 50_000
    with _scratch(_SPSC_HEADER + 4096 * 8) as region:
        kernels.spsc_init(region.addr, 4096)
        result: dict = {}

        def producer():
            kernels.spsc_produce(region.addr, n, 0)

        def consumer():
            result["v"], result["sum"] = kernels.spsc_consume(region.addr, n, 0)

        ts = [threading.Thread(target=producer), threading.Thread(target=consumer)]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
        # zero FIFO violations and the exact arithmetic-series checksum
        # together rule out loss, duplication, and reordering
        checks["two_thread_order"] = result["v"] == 0
        checks["two_thread_checksum"] = result["sum"] == n * (n - 1) // 2
    return checks


def _verify_mpmc(heavy: bool) -> dict[str, bool]:
    checks = {}
    with _scratch(_MPMC_HEADER + 8192 * _MPMC_NODE) as region:
        kernels.mpmc_init(region.addr, 8192)
        out = np.zeros(500, dtype=np.uint64)
        kernels.mpmc_enqueue(region.addr, 500, 1000)
        count, _ = kernels.mpmc_dequeue(region.addr, 500, out.ctypes.data)
        checks["single_thread_multiset"] = (
            count == 500 and sorted(out.tolist()) == list(range(1000, 1500))
        )
    per_thread = 250_000 if heavy else 20_000
    producers = consumers = 4
    with _scratch(_MPMC_HEADER + 16384 * _MPMC_NODE) as region:
        kernels.mpmc_init(region.addr, 16384)
        outs = [np.zeros(per_thread, dtype=np.uint64) for _ in range(consumers)]

        def produce(tag: int):
            kernels.mpmc_enqueue(region.addr, per_thread, tag * 10_000_000)

        def consume(i: int):
            kernels.mpmc_dequeue(region.addr, per_thread, outs[i].ctypes.data)

        ts = [threading.Thread(target=produce, args=(i,)) for i in range(producers)]
        ts += [threading.Thread(target=consume, args=(i,)) for i in range(consumers)]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
        got = np.sort(np.concatenate(outs))
        want = np.sort(np.concatenate(
            [np.arange(per_thread, dtype=np.uint64) + np.uint64(i * 10_000_000)
             for i in range(producers)]
        ))
        checks["multiset_equality_4x4"] = bool(np.array_equal(got, want))
    return checks


def _verify_map(heavy: bool) -> dict[str, bool]:
    checks = {}
    n_keys = 10_000
    slots = _next_pow2(2 * n_keys)
    with _scratch(_MAP_HEADER + slots * 16) as region:
        kernels.map_init(region.addr, slots)
        failed = kernels.map_populate(region.addr, n_keys)
        violations, _ = kernels.map_get_worker(region.addr, 20_000, n_keys, 7)
        checks["populate_then_get"] = failed == 0 and violations == 0

    ops = 1_000_000 if heavy else 50_000
    with _scratch(_MAP_HEADER + slots * 16) as region:
        kernels.map_init(region.addr, slots)
        kernels.map_populate(region.addr, n_keys)
        last = np.zeros(n_keys, dtype=np.uint64)
        result: dict = {}

        def updater():
            result["ryw"] = kernels.map_update_worker(
                region.addr, ops, n_keys, 42, 1, last.ctypes.data
            )

        def getter():
            result["get"], _ = kernels.map_get_worker(region.addr, ops, n_keys, 5)

        ts = [threading.Thread(target=updater), threading.Thread(target=getter)]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
        checks["read_your_writes"] = result["ryw"] == 0
        checks["reader_sees_valid_values"] = result["get"] == 0
        checks["last_write_visible"] = (
            kernels.map_final_check(region.addr, n_keys, last.ctypes.data) == 0
        )
    return checks


def verified_structures() -> set[str]:
    return set(_verified)
