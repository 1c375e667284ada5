import pytest

from tierbench import kernels, lfds, topology
from tierbench.errors import PlacementUnrealizable, StructureUnverified
from tierbench.timing import Calibration, HardwareTimer, MockTimer, calibrate
from tests.conftest import build_sysfs

MOCK_CAL = Calibration(1.0, 1, 0.0, True, "mock")

TWO_SOCKET_CXL = {
    0: {"cpus": [0, 1], "mem_kb": 4 * 1024 * 1024, "socket": 0},
    1: {"cpus": [2, 3], "mem_kb": 4 * 1024 * 1024, "socket": 1},
    2: {"cpus": [], "mem_kb": 8 * 1024 * 1024},
}


@pytest.fixture(scope="module")
def verified():
    for s in lfds.STRUCTURES:
        result = lfds.verify_structure(s, heavy=False)
        assert result["ok"], result
    return True


class TestVerification:
    def test_gates_pass_light(self, verified):
        assert lfds.verified_structures() == set(lfds.STRUCTURES)

    def test_unverified_structure_refused(self):
        was_verified = "spsc_queue" in lfds.verified_structures()
        lfds._verified.discard("spsc_queue")
        try:
            topo = topology.discover()
            with pytest.raises(StructureUnverified):
                lfds.run_lfds(lfds.LfdsWorkload("spsc_queue", ops_per_thread=10),
                              "same-local-dimm", topo, MockTimer.uniform(1), MOCK_CAL)
        finally:
            if was_verified:
                lfds._verified.add("spsc_queue")

    def test_workload_validation(self):
        with pytest.raises(ValueError):
            lfds.LfdsWorkload("stack")
        with pytest.raises(ValueError):
            lfds.LfdsWorkload("spsc_queue", ops_per_thread=-1)

    def test_element_sizes(self):
        assert lfds.LfdsWorkload("spsc_queue").element_size == 8
        assert lfds.LfdsWorkload("concurrent_map").element_size == 16
        w = lfds.LfdsWorkload("concurrent_map", initial_elements=1000)
        assert w.footprint_bytes == 16_000


class TestPlacementResolution:
    def test_six_cases_on_two_socket_cxl_fixture(self, tmp_path, fixture_root):
        build_sysfs(tmp_path, TWO_SOCKET_CXL, cpus=[0, 1, 2, 3])
        fixture_root()
        topo = topology.discover()
        resolved = {p: lfds.resolve_placement(p, topo) for p in lfds.PLACEMENTS}
        assert resolved["same-local-dimm"] == (0, 1, 0)
        assert resolved["same-remote-dimm"] == (0, 1, 1)
        assert resolved["same-local-cxl"][2] == 2
        setter, getter, node = resolved["diff-setter-cxl"]
        assert topo.sockets[setter] != topo.sockets[getter]
        assert node == 2

    def test_single_socket_unrealizable(self, tmp_path, fixture_root):
        build_sysfs(tmp_path, {0: {"cpus": [0, 1], "mem_kb": 1024}}, cpus=[0, 1])
        fixture_root()
        topo = topology.discover()
        lfds.resolve_placement("same-local-dimm", topo)  # fine
        for placement in ("same-remote-dimm", "same-remote-cxl",
                          "diff-setter-cxl", "diff-getter-cxl", "same-local-cxl"):
            with pytest.raises(PlacementUnrealizable):
                lfds.resolve_placement(placement, topo)

    def test_unknown_placement(self):
        with pytest.raises(ValueError):
            lfds.resolve_placement("same-local-hbm", topology.discover())


@pytest.mark.skipif(not kernels.HAVE_X86, reason="x86 kernels unavailable")
class TestRuns:
    def test_zero_ops_completes(self, verified):
        topo = topology.discover()
        timer = HardwareTimer()
        cal = calibrate(timer, window_ns=20_000_000)
        w = lfds.LfdsWorkload("spsc_queue", ops_per_thread=0)
        res = lfds.run_lfds(w, "same-local-dimm", topo, timer, cal)
        assert res.total_time_ns >= 0
        assert res.ops_per_thread == 0

    def test_result_record_fields(self, verified):
        topo = topology.discover()
        timer = HardwareTimer()
        cal = calibrate(timer, window_ns=20_000_000)
        w = lfds.LfdsWorkload("concurrent_map", ops_per_thread=20_000,
                              initial_elements=4096)
        res = lfds.run_lfds(w, "same-local-dimm", topo, timer, cal)
        assert res.structure == "concurrent_map"
        assert res.footprint_bytes == 4096 * 16
        assert res.total_time_ns > 0
        assert res.data_node == 0

    def test_timing_excludes_initialization(self, verified):
        # a tiny-op run over a heavily pre-populated map must not pay for
        # the population inside the timed window
        topo = topology.discover()
        timer = HardwareTimer()
        cal = calibrate(timer, window_ns=20_000_000)
        w = lfds.LfdsWorkload("concurrent_map", ops_per_thread=1000,
                              initial_elements=1_000_000)
        res = lfds.run_lfds(w, "same-local-dimm", topo, timer, cal)
        assert res.total_time_ns < 0.5e9  # population alone takes far longer
