import os
from pathlib import Path

import pytest

from tierbench import topology

# captured before any test pins a thread
ORIGINAL_AFFINITY = set(os.sched_getaffinity(0))


@pytest.fixture(autouse=True)
def _restore_affinity():
    yield
    os.sched_setaffinity(0, ORIGINAL_AFFINITY)


@pytest.fixture
def plain_region():
    regions = []

    def make(size_bytes: int = 8 * 1024 * 1024):
        size_bytes += (-size_bytes) % 4096
        r = topology.allocate(size_bytes, topology.PlacementPolicy.none(), verify=False)
        regions.append(r)
        return r

    yield make
    for r in regions:
        r.close()


def build_sysfs(root: Path, nodes: dict[int, dict], cpus: list[int],
                caches: list[dict] | None = None, weighted_interleave: bool = False,
                cpuinfo: str | None = None) -> None:
    """Materialize a synthetic /sys (+/proc) tree for fixture tests.

    nodes: {node_id: {"cpus": [..], "mem_kb": int}}
    """
    cpu_dir = root / "sys/devices/system/cpu"
    cpu_dir.mkdir(parents=True)
    (cpu_dir / "online").write_text(_cpulist(cpus) + "\n")
    for cpu in cpus:
        topo = cpu_dir / f"cpu{cpu}/topology"
        topo.mkdir(parents=True)
        socket = 0
        for nid, info in nodes.items():
            if cpu in info["cpus"]:
                socket = info.get("socket", nid)
        (topo / "physical_package_id").write_text(f"{socket}\n")
    for nid, info in nodes.items():
        nd = root / f"sys/devices/system/node/node{nid}"
        nd.mkdir(parents=True)
        (nd / "cpulist").write_text(_cpulist(info["cpus"]) + "\n")
        (nd / "meminfo").write_text(
            f"Node {nid} MemTotal:       {info.get('mem_kb', 1024)} kB\n"
        )
        dist = info.get("distance", [10 + 11 * abs(nid - other) for other in nodes])
        (nd / "distance").write_text(" ".join(str(d) for d in dist) + "\n")
    for spec in caches or []:
        for cpu in spec.get("cpus", cpus):
            idx = cpu_dir / f"cpu{cpu}/cache/index{spec['index']}"
            idx.mkdir(parents=True, exist_ok=True)
            (idx / "level").write_text(f"{spec['level']}\n")
            (idx / "type").write_text(spec.get("type", "Unified") + "\n")
            (idx / "size").write_text(spec["size"] + "\n")
            (idx / "coherency_line_size").write_text("64\n")
            (idx / "shared_cpu_list").write_text(_cpulist(spec.get("shared", [cpu])) + "\n")
    if weighted_interleave:
        wi = root / "sys/kernel/mm/mempolicy/weighted-interleave"
        wi.mkdir(parents=True)
        for nid in nodes:
            (wi / f"node{nid}").write_text("1\n")
    proc = root / "proc"
    proc.mkdir(exist_ok=True)
    total_kb = sum(info.get("mem_kb", 1024) for info in nodes.values())
    (proc / "meminfo").write_text(f"MemTotal:       {total_kb} kB\n")
    (proc / "cpuinfo").write_text(
        cpuinfo
        or "processor\t: 0\nvendor_id\t: GenuineIntel\ncpu family\t: 6\nmodel\t\t: 143\n"
    )


def build_msr(root: Path, cpus: list[int], size: int = 8192) -> None:
    for cpu in cpus:
        path = root / f"dev/cpu/{cpu}"
        path.mkdir(parents=True, exist_ok=True)
        (path / "msr").write_bytes(b"\x00" * size)


def build_resctrl(root: Path, cbm_mask: str = "7fff") -> None:
    rc = root / "sys/fs/resctrl"
    (rc / "info/L3").mkdir(parents=True)
    (rc / "info/L3/cbm_mask").write_text(cbm_mask + "\n")
    (rc / "info/L3/min_cbm_bits").write_text("1\n")
    (rc / "schemata").write_text(f"L3:0={cbm_mask}\n")


def _cpulist(cpus: list[int]) -> str:
    return ",".join(str(c) for c in sorted(cpus))


@pytest.fixture
def fixture_root(tmp_path, monkeypatch):
    """Point the suite at a synthetic filesystem root; returns its Path."""

    def activate(root: Path | None = None) -> Path:
        root = root or tmp_path
        monkeypatch.setenv("TIERBENCH_ROOT", str(root))
        monkeypatch.setenv("TIERBENCH_JOURNAL_DIR", str(root))
        return root

    return activate


@pytest.fixture(autouse=True)
def _isolated_journal(tmp_path, monkeypatch):
    if "TIERBENCH_JOURNAL_DIR" not in os.environ:
        monkeypatch.setenv("TIERBENCH_JOURNAL_DIR", str(tmp_path / "journal"))
        (tmp_path / "journal").mkdir(exist_ok=True)
