"""NUMA/cache topology discovery, thread pinning, and placed memory.

All OS paths (sysfs, resctrl, MSR device files, /proc) are taken
relative to the TIERBENCH_ROOT prefix so the whole module can be tested
against synthetic filesystem fixtures.  Global hardware state mutations
(prefetcher MSRs, interleave weights, CAT groups) are serialized behind
one module-level lock and journaled so an interrupted run can be
restored by the next one.
"""

from __future__ import annotations

import ctypes
import glob
import json
import logging
import mmap
import os
import re
import stat
import tempfile
import threading
from dataclasses import dataclass

import numpy as np

from . import kernels, msr_tables
from .errors import (
    DaxOpenFailed,
    HugepageUnavailable,
    KernelTooOld,
    MsrUnavailable,
    NonContiguousMask,
    OutOfMemory,
    PinFailed,
    ResctrlUnavailable,
    TopologyUnreadable,
)

log = logging.getLogger("tierbench.topology")

PAGE_4K = 4096
PAGE_2M = 2 * 1024 * 1024
PAGE_1G = 1024 * 1024 * 1024
_PAGE_SIZES = (PAGE_4K, PAGE_2M, PAGE_1G)

_MAP_HUGETLB = 0x40000
_MAP_HUGE_SHIFT = 26

# mempolicy modes
_MPOL_BIND = 2
_MPOL_WEIGHTED_INTERLEAVE = 6
_MPOL_F_NODE = 1
_MPOL_F_ADDR = 2

_SYS_MBIND = 237
_SYS_GET_MEMPOLICY = 239

#: serializes process-global mutations (MSR, sysfs weights, resctrl)
GLOBAL_MUTATOR = threading.Lock()


def fs_root() -> str:
    return os.environ.get("TIERBENCH_ROOT", "/")


def _p(*parts: str) -> str:
    return os.path.join(fs_root(), *parts)


def _read(path: str) -> str:
    with open(path) as fh:
        return fh.read().strip()


def _parse_cpulist(text: str) -> list[int]:
    cpus: list[int] = []
    text = text.strip()
    if not text:
        return cpus
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            cpus.extend(range(int(lo), int(hi) + 1))
        else:
            cpus.append(int(part))
    return cpus


def _parse_size(text: str) -> int:
    text = text.strip()
    if text.endswith("K"):
        return int(text[:-1]) * 1024
    if text.endswith("M"):
        return int(text[:-1]) * 1024 * 1024
    if text.endswith("G"):
        return int(text[:-1]) * 1024 * 1024 * 1024
    return int(text)


# ---------------------------------------------------------------------
# Discovery

@dataclass(frozen=True)
class NodeInfo:
    node_id: int
    cpu_ids: tuple[int, ...]
    capacity_bytes: int
    kind: str  # dram | cxl | hbm | unknown


@dataclass(frozen=True)
class CacheInfo:
    level: int
    capacity_bytes: int
    line_bytes: int
    shared_by_cpu_ids: tuple[int, ...]
    source: str  # sysfs | cpuid


@dataclass(frozen=True)
class TopologyMap:
    nodes: tuple[NodeInfo, ...]
    caches: tuple[CacheInfo, ...]
    sockets: dict[int, int]  # cpu -> socket
    distances: tuple[tuple[int, ...], ...]
    source: str  # sysfs | synthetic-single-node

    def node_of_cpu(self, cpu: int) -> int:
        for node in self.nodes:
            if cpu in node.cpu_ids:
                return node.node_id
        return 0

    def cpus_of_node(self, node_id: int) -> tuple[int, ...]:
        for node in self.nodes:
            if node.node_id == node_id:
                return node.cpu_ids
        return ()

    def cpus_of_socket(self, socket: int) -> tuple[int, ...]:
        return tuple(sorted(c for c, s in self.sockets.items() if s == socket))

    def socket_count(self) -> int:
        return len(set(self.sockets.values())) if self.sockets else 1

    def far_tier_nodes(self) -> tuple[int, ...]:
        return tuple(n.node_id for n in self.nodes if not n.cpu_ids)

    def cache_capacity(self, level: int) -> int | None:
        best = None
        for c in self.caches:
            if c.level == level:
                best = max(best or 0, c.capacity_bytes)
        return best

    def llc_capacity(self) -> int | None:
        levels = [c.level for c in self.caches]
        return self.cache_capacity(max(levels)) if levels else None

    def snc_mode(self) -> str:
        """Detected (never set) sub-NUMA clustering state."""
        per_socket: dict[int, int] = {}
        for node in self.nodes:
            if not node.cpu_ids:
                continue
            socket = self.sockets.get(node.cpu_ids[0], 0)
            per_socket[socket] = per_socket.get(socket, 0) + 1
        worst = max(per_socket.values(), default=1)
        return f"snc{worst}" if worst > 1 else "off"

    def to_manifest(self) -> dict:
        return {
            "source": self.source,
            "nodes": [
                {
                    "node_id": n.node_id,
                    "cpu_ids": list(n.cpu_ids),
                    "capacity_bytes": n.capacity_bytes,
                    "kind": n.kind,
                }
                for n in self.nodes
            ],
            "caches": [
                {
                    "level": c.level,
                    "capacity_bytes": c.capacity_bytes,
                    "line_bytes": c.line_bytes,
                    "shared_by_cpu_ids": list(c.shared_by_cpu_ids),
                    "source": c.source,
                }
                for c in self.caches
            ],
            "sockets": {str(c): s for c, s in sorted(self.sockets.items())},
            "distances": [list(row) for row in self.distances],
            "snc_mode": self.snc_mode(),
        }


def _discover_caches(online: list[int]) -> list[CacheInfo]:
    caches: list[CacheInfo] = []
    cache_dir = _p("sys/devices/system/cpu/cpu0/cache")
    if os.path.isdir(cache_dir):
        seen: set[tuple[int, tuple[int, ...]]] = set()
        for cpu in online:
            base = _p(f"sys/devices/system/cpu/cpu{cpu}/cache")
            for index in sorted(glob.glob(os.path.join(base, "index*"))):
                try:
                    if _read(os.path.join(index, "type")) == "Instruction":
                        continue
                    level = int(_read(os.path.join(index, "level")))
                    size = _parse_size(_read(os.path.join(index, "size")))
                    line = int(_read(os.path.join(index, "coherency_line_size")))
                    shared = tuple(_parse_cpulist(_read(os.path.join(index, "shared_cpu_list"))))
                except (OSError, ValueError):
                    continue
                key = (level, shared)
                if key in seen:
                    continue
                seen.add(key)
                caches.append(CacheInfo(level, size, line, shared, "sysfs"))
        if caches:
            return caches
    # gVisor-style hosts expose no cache tree; fall back to CPUID.
    for entry in kernels.cpuid_cache_info():
        shared = tuple(online) if entry["level"] >= 3 else (0,)
        caches.append(
            CacheInfo(entry["level"], entry["size_bytes"], entry["line_bytes"], shared, "cpuid")
        )
    return caches


def discover(kind_overrides: dict[int, str] | None = None) -> TopologyMap:
    """Read the NUMA/cache topology from sysfs.

    Hosts without a node tree (some container runtimes) get a synthetic
    single node covering every online CPU; the synthesis is recorded in
    the map so reports can flag it.
    """
    cpu_dir = _p("sys/devices/system/cpu")
    if not os.path.isdir(cpu_dir):
        raise TopologyUnreadable(f"no cpu sysfs tree under {fs_root()}")
    try:
        online = _parse_cpulist(_read(os.path.join(cpu_dir, "online")))
    except OSError as exc:
        raise TopologyUnreadable(f"cannot read online cpus: {exc}") from exc

    sockets: dict[int, int] = {}
    for cpu in online:
        pkg = _p(f"sys/devices/system/cpu/cpu{cpu}/topology/physical_package_id")
        try:
            sockets[cpu] = int(_read(pkg))
        except (OSError, ValueError):
            sockets[cpu] = 0

    overrides = kind_overrides or {}
    nodes: list[NodeInfo] = []
    node_dirs = sorted(
        glob.glob(_p("sys/devices/system/node/node[0-9]*")),
        key=lambda p: int(re.search(r"node(\d+)$", p).group(1)),
    )
    source = "sysfs"
    if node_dirs:
        for d in node_dirs:
            node_id = int(re.search(r"node(\d+)$", d).group(1))
            try:
                cpus = tuple(_parse_cpulist(_read(os.path.join(d, "cpulist"))))
            except OSError:
                cpus = ()
            capacity = 0
            meminfo = os.path.join(d, "meminfo")
            if os.path.exists(meminfo):
                m = re.search(r"MemTotal:\s+(\d+)\s*kB", _read(meminfo))
                if m:
                    capacity = int(m.group(1)) * 1024
            if capacity == 0:
                log.warning("node %d reports zero capacity", node_id)
            kind = overrides.get(node_id) or ("dram" if cpus else "cxl")
            nodes.append(NodeInfo(node_id, cpus, capacity, kind))
        distances = []
        for d in node_dirs:
            try:
                distances.append(tuple(int(x) for x in _read(os.path.join(d, "distance")).split()))
            except OSError:
                distances.append(tuple())
    else:
        source = "synthetic-single-node"
        capacity = 0
        meminfo = _p("proc/meminfo")
        if os.path.exists(meminfo):
            m = re.search(r"MemTotal:\s+(\d+)\s*kB", _read(meminfo))
            if m:
                capacity = int(m.group(1)) * 1024
        nodes.append(NodeInfo(0, tuple(online), capacity, overrides.get(0, "dram")))
        distances = [(10,)]

    return TopologyMap(
        nodes=tuple(nodes),
        caches=tuple(_discover_caches(online)),
        sockets=sockets,
        distances=tuple(distances),
        source=source,
    )


# ---------------------------------------------------------------------
# Thread pinning

def pin_thread(cpu_id: int) -> None:
    """Set the calling thread's affinity mask to exactly {cpu_id}."""
    try:
        os.sched_setaffinity(0, {cpu_id})
    except (OSError, ValueError) as exc:
        raise PinFailed(f"cannot pin to cpu {cpu_id}: {exc}") from exc


def current_affinity() -> set[int]:
    return set(os.sched_getaffinity(0))


# ---------------------------------------------------------------------
# mempolicy syscalls

_libc = ctypes.CDLL(None, use_errno=True)


def _nodemask(nodes: list[int]) -> tuple[ctypes.Array, int]:
    maxnode = 64
    mask = 0
    for n in nodes:
        if n < 0 or n >= maxnode:
            raise ValueError(f"node {n} out of nodemask range")
        mask |= 1 << n
    arr = (ctypes.c_ulong * 1)(mask)
    return arr, maxnode


def _mbind(addr: int, length: int, mode: int, nodes: list[int]) -> None:
    arr, maxnode = _nodemask(nodes)
    res = _libc.syscall(
        ctypes.c_long(_SYS_MBIND),
        ctypes.c_void_p(addr),
        ctypes.c_ulong(length),
        ctypes.c_int(mode),
        ctypes.byref(arr),
        ctypes.c_ulong(maxnode),
        ctypes.c_uint(0),
    )
    if res != 0:
        err = ctypes.get_errno()
        raise OSError(err, os.strerror(err))


def page_to_node(addr: int) -> int | None:
    """Query which node a faulted-in page lives on; None when unsupported."""
    node = ctypes.c_int(-1)
    res = _libc.syscall(
        ctypes.c_long(_SYS_GET_MEMPOLICY),
        ctypes.byref(node),
        None,
        ctypes.c_ulong(0),
        ctypes.c_void_p(addr),
        ctypes.c_ulong(_MPOL_F_NODE | _MPOL_F_ADDR),
    )
    if res != 0 or node.value < 0:
        return None
    return node.value


# ---------------------------------------------------------------------
# Placement policies and regions

@dataclass(frozen=True)
class PlacementPolicy:
    mode: str  # bind | weighted_interleave | dax | none
    node: int | None = None
    weights: dict[int, int] | None = None
    dax_path: str | None = None
    page_size: int = PAGE_4K

    def __post_init__(self):
        if self.page_size not in _PAGE_SIZES:
            raise ValueError(f"unsupported page size {self.page_size}")
        if self.mode == "bind" and self.node is None:
            raise ValueError("bind policy needs a node")
        if self.mode == "weighted_interleave":
            validate_weights(self.weights or {})
        if self.mode == "dax" and not self.dax_path:
            raise ValueError("dax policy needs a path")

    @staticmethod
    def bind(node: int, page_size: int = PAGE_4K) -> "PlacementPolicy":
        return PlacementPolicy(mode="bind", node=node, page_size=page_size)

    @staticmethod
    def weighted(weights: dict[int, int], page_size: int = PAGE_4K) -> "PlacementPolicy":
        return PlacementPolicy(mode="weighted_interleave", weights=dict(weights),
                               page_size=page_size)

    @staticmethod
    def dax(path: str, page_size: int = PAGE_4K) -> "PlacementPolicy":
        return PlacementPolicy(mode="dax", dax_path=path, page_size=page_size)

    @staticmethod
    def none(page_size: int = PAGE_4K) -> "PlacementPolicy":
        return PlacementPolicy(mode="none", page_size=page_size)


def validate_weights(weights: dict[int, int]) -> None:
    if not weights:
        raise ValueError("weights must not be empty")
    if any(w < 0 for w in weights.values()):
        raise ValueError("weights must be non-negative")
    if not any(w > 0 for w in weights.values()):
        raise ValueError("at least one weight must be positive")


def weight_cycle(weights: dict[int, int]) -> list[int]:
    """Expanded allocation order for one weight cycle, e.g. {0:2,1:2,2:1}
    -> [0,0,1,1,2], mirroring the kernel's consecutive-run semantics."""
    cycle: list[int] = []
    for node in sorted(weights):
        cycle.extend([node] * weights[node])
    return cycle


class MemoryRegion:
    """An mmap-backed buffer with an explicit placement policy.

    `page_nodes` records which node each page was assigned to (exact for
    the userspace fallback, policy-derived otherwise); `residency`
    carries the page-to-node verification outcome.
    """

    def __init__(self, mm: mmap.mmap, size_bytes: int, policy: PlacementPolicy,
                 mechanism: str, page_nodes: np.ndarray | None, fd: int | None = None):
        self._mm = mm
        self.size_bytes = size_bytes
        self.policy = policy
        self.mechanism = mechanism
        self.page_nodes = page_nodes
        self.touched = False
        self.physical = True  # False when placement labels have no physical node
        self.residency: dict = {"verified": False}
        self._fd = fd
        self._u8 = np.frombuffer(mm, dtype=np.uint8)
        self._u64 = np.frombuffer(mm, dtype=np.uint64)
        self.addr = int(self._u8.ctypes.data)

    def view8(self) -> np.ndarray:
        return self._u8

    def view64(self) -> np.ndarray:
        return self._u64

    def fault_in(self) -> None:
        self._u8[:: self.policy.page_size] = 1
        self.touched = True

    def page_count(self) -> int:
        return self.size_bytes // self.policy.page_size

    def verify_residency(self, sample_pages: int = 256) -> dict:
        """Sample page-to-node placements and compare with the policy."""
        pages = self.page_count()
        take = min(pages, max(sample_pages, 1))
        idx = np.linspace(0, pages - 1, take).astype(np.int64)
        by_node: dict[int, int] = {}
        unknown = 0
        conformant = 0
        for i in idx:
            node = page_to_node(self.addr + int(i) * self.policy.page_size)
            if node is None:
                unknown += 1
                continue
            by_node[node] = by_node.get(node, 0) + 1
            expect = self._expected_node(int(i))
            if expect is None or node == expect:
                conformant += 1
        if unknown == take:
            self.residency = {"verified": False, "reason": "page-to-node query unsupported"}
        else:
            seen = take - unknown
            self.residency = {
                "verified": True,
                "sampled": int(take),
                "by_node": by_node,
                "conformance": conformant / seen if seen else 0.0,
            }
        return self.residency

    def _expected_node(self, page_index: int) -> int | None:
        if self.page_nodes is not None:
            return int(self.page_nodes[page_index])
        if self.policy.mode == "bind":
            return self.policy.node
        return None

    def close(self) -> None:
        self._u8 = None
        self._u64 = None
        if self._mm is not None:
            self._mm.close()
            self._mm = None
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _mmap_anonymous(size: int, page_size: int) -> mmap.mmap:
    flags = mmap.MAP_PRIVATE | mmap.MAP_ANONYMOUS
    if page_size == PAGE_2M:
        flags |= _MAP_HUGETLB | (21 << _MAP_HUGE_SHIFT)
    elif page_size == PAGE_1G:
        flags |= _MAP_HUGETLB | (30 << _MAP_HUGE_SHIFT)
    try:
        return mmap.mmap(-1, size, flags=flags, prot=mmap.PROT_READ | mmap.PROT_WRITE)
    except OSError as exc:
        if page_size != PAGE_4K:
            raise HugepageUnavailable(f"hugepage mmap failed: {exc}") from exc
        raise OutOfMemory(f"mmap failed: {exc}") from exc


def allocate(size_bytes: int, policy: PlacementPolicy,
             verify: bool = True) -> MemoryRegion:
    """Map, place, and fully fault in a region under `policy`.

    Weighted interleave prefers the kernel mempolicy; when the kernel
    lacks it the userspace fallback mbinds consecutive per-node runs of
    pages, reproducing the same weight-cycle semantics, and the region
    records which mechanism was used.
    """
    if size_bytes <= 0 or size_bytes % policy.page_size:
        raise ValueError("size must be a positive multiple of the page size")

    if policy.mode == "dax":
        region = _allocate_dax(size_bytes, policy)
    elif policy.mode == "weighted_interleave":
        region = _allocate_weighted(size_bytes, policy)
    else:
        mm = _mmap_anonymous(size_bytes, policy.page_size)
        region = MemoryRegion(mm, size_bytes, policy, "plain", None)
        if policy.mode == "bind":
            try:
                _mbind(region.addr, size_bytes, _MPOL_BIND, [policy.node])
                region.mechanism = "bind"
            except OSError as exc:
                region.close()
                raise OutOfMemory(f"mbind failed: {exc}") from exc

    region.fault_in()
    if verify:
        region.verify_residency()
    return region


def _allocate_dax(size_bytes: int, policy: PlacementPolicy) -> MemoryRegion:
    path = os.path.join(fs_root(), policy.dax_path.lstrip("/")) \
        if not os.path.isabs(policy.dax_path) else policy.dax_path
    try:
        st = os.stat(path)
    except OSError as exc:
        raise DaxOpenFailed(f"cannot stat dax device {path}: {exc}") from exc
    if not stat.S_ISCHR(st.st_mode):
        raise DaxOpenFailed(f"{path} is not a character device")
    try:
        fd = os.open(path, os.O_RDWR)
        mm = mmap.mmap(fd, size_bytes, flags=mmap.MAP_SHARED,
                       prot=mmap.PROT_READ | mmap.PROT_WRITE)
    except OSError as exc:
        raise DaxOpenFailed(f"cannot map dax device {path}: {exc}") from exc
    return MemoryRegion(mm, size_bytes, policy, "dax", None, fd=fd)


def _allocate_weighted(size_bytes: int, policy: PlacementPolicy) -> MemoryRegion:
    weights = {n: w for n, w in policy.weights.items() if w > 0}
    cycle = weight_cycle(weights)
    pages = size_bytes // policy.page_size
    page_nodes = np.array([cycle[i % len(cycle)] for i in range(pages)], dtype=np.int32)

    mm = _mmap_anonymous(size_bytes, policy.page_size)
    region = MemoryRegion(mm, size_bytes, policy, "userspace-fallback", page_nodes)

    if weighted_interleave_available() and len(weights) > 1:
        try:
            _mbind(region.addr, size_bytes, _MPOL_WEIGHTED_INTERLEAVE, list(weights))
            region.mechanism = "kernel"
            return region
        except OSError as exc:
            log.info("kernel weighted interleave rejected (%s); using fallback", exc)

    # Fallback: bind each consecutive same-node run of pages.  When the
    # requested nodes do not physically exist (single-node host running
    # a synthetic-label sweep) the assignment ledger is kept but no
    # mbind is issued and the region is marked non-physical.
    distinct = sorted(set(cycle))
    physical_nodes = {n.node_id for n in discover().nodes}
    if len(distinct) > 1 and all(n in physical_nodes for n in distinct):
        region.physical = True
        run_start = 0
        for i in range(1, pages + 1):
            if i == pages or page_nodes[i] != page_nodes[run_start]:
                addr = region.addr + run_start * policy.page_size
                length = (i - run_start) * policy.page_size
                try:
                    _mbind(addr, length, _MPOL_BIND, [int(page_nodes[run_start])])
                except OSError as exc:
                    log.warning("fallback mbind failed at page %d: %s", run_start, exc)
                    region.physical = False
                    break
                run_start = i
    else:
        region.physical = len(distinct) <= 1
        if not region.physical:
            log.info("weighted fallback over non-physical node labels %s", distinct)
    return region


# ---------------------------------------------------------------------
# Kernel weighted-interleave sysfs weights

_WI_DIR = "sys/kernel/mm/mempolicy/weighted-interleave"


def weighted_interleave_available() -> bool:
    return os.path.isdir(_p(_WI_DIR))


def set_interleave_weights(weights: dict[int, int]) -> dict[int, int]:
    """Write per-node weights to the kernel tree; returns prior values.

    Raises KernelTooOld when the tree is absent: callers fall back to
    the userspace allocator (same weight semantics) and reports record
    which mechanism ran.
    """
    validate_weights(weights)
    if not weighted_interleave_available():
        raise KernelTooOld("kernel weighted-interleave sysfs tree absent")
    previous: dict[int, int] = {}
    with GLOBAL_MUTATOR:
        journal = _journal_load()
        for node, weight in sorted(weights.items()):
            path = _p(_WI_DIR, f"node{node}")
            try:
                raw = open(path).read()
                previous[node] = int(raw.strip())
            except (OSError, ValueError) as exc:
                raise KernelTooOld(f"cannot read weight for node {node}: {exc}") from exc
            # journal keeps the raw text so recovery is byte-exact
            journal.setdefault("weights", {}).setdefault(str(node), raw)
        _journal_save(journal)
        for node, weight in sorted(weights.items()):
            with open(_p(_WI_DIR, f"node{node}"), "w") as fh:
                fh.write(str(weight))
    return previous


def restore_interleave_weights(previous: dict[int, int]) -> None:
    with GLOBAL_MUTATOR:
        for node, weight in sorted(previous.items()):
            path = _p(_WI_DIR, f"node{node}")
            try:
                with open(path, "w") as fh:
                    fh.write(str(weight))
            except OSError as exc:
                log.warning("cannot restore weight for node %d: %s", node, exc)
        journal = _journal_load()
        journal.pop("weights", None)
        _journal_save(journal)


# ---------------------------------------------------------------------
# Hardware prefetcher control (MSR)

def _cpu_vendor_family() -> tuple[str, int]:
    vendor, family = "unknown", 0
    path = _p("proc/cpuinfo")
    try:
        text = _read(path)
    except OSError:
        return vendor, family
    m = re.search(r"vendor_id\s*:\s*(\S+)", text)
    if m:
        vendor = m.group(1)
    m = re.search(r"cpu family\s*:\s*(\d+)", text)
    if m:
        family = int(m.group(1))
    return vendor, family


class PrefetcherGuard:
    """Restores prefetcher MSR state on exit; journal-backed."""

    def __init__(self, controller: "PrefetcherController", saved: dict[int, int]):
        self._controller = controller
        self._saved = dict(saved)
        self.active = True

    def restore(self) -> None:
        if not self.active:
            return
        with GLOBAL_MUTATOR:
            for cpu, value in self._saved.items():
                self._controller._write(cpu, value)
            journal = _journal_load()
            journal.pop("msr", None)
            _journal_save(journal)
        self.active = False

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.restore()


class PrefetcherController:
    """Reads/writes the per-vendor prefetcher control register."""

    def __init__(self, cpus: list[int] | None = None):
        self.vendor, self.family = _cpu_vendor_family()
        self.entry = msr_tables.lookup(self.vendor, self.family)
        self.cpus = cpus if cpus is not None else sorted(current_affinity())

    def _msr_path(self, cpu: int) -> str:
        return _p(f"dev/cpu/{cpu}/msr")

    def available(self) -> bool:
        if self.entry is None:
            return False
        path = self._msr_path(self.cpus[0] if self.cpus else 0)
        return os.path.exists(path) and os.access(path, os.R_OK | os.W_OK)

    def _read(self, cpu: int) -> int:
        fd = os.open(self._msr_path(cpu), os.O_RDONLY)
        try:
            return int.from_bytes(os.pread(fd, 8, self.entry["msr"]), "little")
        finally:
            os.close(fd)

    def _write(self, cpu: int, value: int) -> None:
        fd = os.open(self._msr_path(cpu), os.O_WRONLY)
        try:
            os.pwrite(fd, value.to_bytes(8, "little"), self.entry["msr"])
        finally:
            os.close(fd)

    def _set(self, bit_names: list[str], disabled: bool) -> PrefetcherGuard:
        if not self.available():
            raise MsrUnavailable(
                f"prefetcher MSR not writable (vendor={self.vendor}, family={self.family})"
            )
        saved: dict[int, int] = {}
        with GLOBAL_MUTATOR:
            journal = _journal_load()
            for cpu in self.cpus:
                try:
                    old = self._read(cpu)
                except OSError as exc:
                    raise MsrUnavailable(f"cannot read MSR on cpu {cpu}: {exc}") from exc
                saved[cpu] = old
                journal.setdefault("msr", {}).setdefault(
                    str(cpu), {"addr": self.entry["msr"], "value": old}
                )
            _journal_save(journal)
            for cpu in self.cpus:
                value = saved[cpu]
                for name in bit_names:
                    bit = self.entry["bits"][name]
                    if disabled:
                        value |= 1 << bit  # set bit = prefetcher off
                    else:
                        value &= ~(1 << bit)
                try:
                    self._write(cpu, value)
                except OSError as exc:
                    raise MsrUnavailable(f"cannot write MSR on cpu {cpu}: {exc}") from exc
        return PrefetcherGuard(self, saved)

    def set_all(self, enabled: bool) -> PrefetcherGuard:
        return self._set(list(self.entry["bits"]) if self.entry else [], not enabled)

    def set_only(self, keep_enabled: str) -> PrefetcherGuard:
        """Disable every prefetcher except `keep_enabled`."""
        if self.entry is None or keep_enabled not in self.entry.get("bits", {}):
            raise MsrUnavailable(f"no per-prefetcher bit for {keep_enabled!r}")
        others = [n for n in self.entry["bits"] if n != keep_enabled]
        guard = self._set(others, True)
        # ensure the kept engine is on
        with GLOBAL_MUTATOR:
            for cpu in self.cpus:
                value = self._read(cpu)
                value &= ~(1 << self.entry["bits"][keep_enabled])
                self._write(cpu, value)
        return guard

    def prefetcher_names(self) -> list[str]:
        return list(self.entry["bits"]) if self.entry else []


def set_hw_prefetchers(enabled: bool, cpus: list[int] | None = None) -> PrefetcherGuard:
    """Toggle all hardware prefetchers on the given (default: pinned) cpus.

    MsrUnavailable is the degradation signal: benchmarks run anyway and
    report prefetchers="unknown", never a silent claim of "off".
    """
    return PrefetcherController(cpus).set_all(enabled)


def prefetcher_state(cpus: list[int] | None = None) -> str:
    """Best-effort current state for report rows: off | on | unknown."""
    ctl = PrefetcherController(cpus)
    if not ctl.available():
        return "unknown"
    try:
        mask = 0
        for name, bit in ctl.entry["bits"].items():
            mask |= 1 << bit
        states = {ctl._read(cpu) & mask for cpu in ctl.cpus}
    except OSError:
        return "unknown"
    if states == {mask}:
        return "off"
    if states == {0}:
        return "on"
    return "mixed"


# ---------------------------------------------------------------------
# Cache Allocation Technology (resctrl)

def _resctrl_root() -> str:
    return _p("sys/fs/resctrl")


def resctrl_available() -> bool:
    return os.path.exists(os.path.join(_resctrl_root(), "schemata"))


def _mask_contiguous(mask: int) -> bool:
    if mask <= 0:
        return False
    shifted = mask >> (mask & -mask).bit_length() - 1
    return (shifted & (shifted + 1)) == 0


class CatGroup:
    """A resctrl CLOS group created by this process."""

    def __init__(self, name: str, path: str):
        self.name = name
        self.path = path

    def read_mask(self) -> int:
        text = _read(os.path.join(self.path, "schemata"))
        m = re.search(r"L3:0=([0-9a-fA-F]+)", text)
        if not m:
            raise ResctrlUnavailable(f"no L3 schemata in group {self.name}")
        return int(m.group(1), 16)

    def remove(self) -> None:
        with GLOBAL_MUTATOR:
            try:
                _remove_group_dir(self.path)
            except OSError as exc:
                log.warning("cannot remove CAT group %s: %s", self.name, exc)
            journal = _journal_load()
            groups = journal.get("resctrl", [])
            if self.name in groups:
                groups.remove(self.name)
                journal["resctrl"] = groups
                _journal_save(journal)


def _remove_group_dir(path: str) -> None:
    """rmdir a CLOS group; fixture trees hold real files, kernel trees don't."""
    try:
        os.rmdir(path)
    except OSError:
        for name in ("schemata", "cpus_list", "tasks"):
            try:
                os.unlink(os.path.join(path, name))
            except OSError:
                pass
        os.rmdir(path)


def set_cat_mask(clos_id: int, mask: int, cpus: list[int] | None = None) -> CatGroup:
    """Create a CLOS group carrying `mask` and assign `cpus` to it."""
    if not resctrl_available():
        raise ResctrlUnavailable(f"resctrl not mounted under {_resctrl_root()}")
    if not _mask_contiguous(mask):
        raise NonContiguousMask(f"CAT mask {mask:#x} is not contiguous")
    name = f"tierbench-clos{clos_id}"
    path = os.path.join(_resctrl_root(), name)
    with GLOBAL_MUTATOR:
        journal = _journal_load()
        groups = journal.setdefault("resctrl", [])
        if name not in groups:
            groups.append(name)
        _journal_save(journal)
        os.makedirs(path, exist_ok=True)
        root_schemata = _read(os.path.join(_resctrl_root(), "schemata"))
        domains = re.findall(r"(\d+)=([0-9a-fA-F]+)", root_schemata)
        if domains:
            line = "L3:" + ";".join(f"{dom}={mask:x}" for dom, _ in domains)
        else:
            line = f"L3:0={mask:x}"
        with open(os.path.join(path, "schemata"), "w") as fh:
            fh.write(line + "\n")
        if cpus:
            with open(os.path.join(path, "cpus_list"), "w") as fh:
                fh.write(",".join(str(c) for c in cpus) + "\n")
    return CatGroup(name, path)


def default_cat_mask() -> int | None:
    try:
        text = _read(os.path.join(_resctrl_root(), "info", "L3", "cbm_mask"))
        return int(text, 16)
    except OSError:
        return None


# ---------------------------------------------------------------------
# Restore journal

def journal_path() -> str:
    base = os.environ.get("TIERBENCH_JOURNAL_DIR", tempfile.gettempdir())
    return os.path.join(base, "tierbench-restore-journal.json")


def _journal_load() -> dict:
    try:
        with open(journal_path()) as fh:
            return json.load(fh)
    except (OSError, ValueError):
        return {}


def _journal_save(journal: dict) -> None:
    if not journal:
        try:
            os.unlink(journal_path())
        except OSError:
            pass
        return
    with open(journal_path(), "w") as fh:
        json.dump(journal, fh, sort_keys=True)


def restore_stale_journal() -> list[str]:
    """Re-apply any state recorded by an interrupted run; returns notes."""
    journal = _journal_load()
    if not journal:
        return []
    notes: list[str] = []
    msr = journal.get("msr", {})
    if msr:
        ctl = PrefetcherController([int(c) for c in msr])
        for cpu, rec in msr.items():
            try:
                ctl._write(int(cpu), rec["value"])
                notes.append(f"restored MSR {rec['addr']:#x} on cpu {cpu}")
            except OSError as exc:
                notes.append(f"failed to restore MSR on cpu {cpu}: {exc}")
    for node, raw in journal.get("weights", {}).items():
        try:
            with open(_p(_WI_DIR, f"node{node}"), "w") as fh:
                fh.write(str(raw))
            notes.append(f"restored interleave weight for node {node}")
        except OSError as exc:
            notes.append(f"failed to restore weight for node {node}: {exc}")
    for name in journal.get("resctrl", []):
        try:
            _remove_group_dir(os.path.join(_resctrl_root(), name))
            notes.append(f"removed stale CAT group {name}")
        except OSError as exc:
            notes.append(f"failed to remove CAT group {name}: {exc}")
    _journal_save({})
    return notes
