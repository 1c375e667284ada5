import pytest

from tierbench import bandwidth as bw
from tierbench import kernels, topology
from tierbench.errors import EngineUnavailable, NotEnoughCores, SizeMismatch
from tierbench.timing import Calibration, HardwareTimer, MockTimer, calibrate

needs_hw = pytest.mark.skipif(not kernels.HAVE_X86, reason="x86 kernels unavailable")

MOCK_CAL = Calibration(2.0, 1, 0.0, True, "mock")


@pytest.fixture(scope="module")
def hw():
    if not kernels.HAVE_X86:
        pytest.skip("x86 kernels unavailable")
    timer = HardwareTimer()
    return timer, calibrate(timer, window_ns=50_000_000)


@pytest.fixture(scope="module")
def region_256m():
    region = topology.allocate(256 * 1024 * 1024, topology.PlacementPolicy.none(),
                               verify=False)
    yield region
    region.close()


class TestSlices:
    def test_disjoint_and_aligned(self, region_256m):
        slices = bw._slices(region_256m, 4, None)
        assert len(slices) == 4
        for (a, n), (b, _) in zip(slices, slices[1:]):
            assert a + n <= b
        assert all(addr % bw.SLICE_ALIGN == region_256m.addr % bw.SLICE_ALIGN
                   for addr, _ in slices)
        assert all(n % bw.SLICE_ALIGN == 0 for _, n in slices)


class TestBandwidthSweep:
    def test_mock_analytic_gibs(self, region_256m):
        # 4 MiB in 4,000,000 ns (8e6 ticks at 2 cycles/ns) -> exact value
        timer = MockTimer([0, 8_000_000])
        pts = bw.bandwidth_sweep(region_256m, "load", [1], [0], timer, MOCK_CAL,
                                 per_thread_bytes=4 * 1024 * 1024)
        assert pts[0].gib_per_s == (4 * 1024 * 1024) / bw.GIB / (4e6 / 1e9)

    def test_not_enough_cores(self, region_256m):
        with pytest.raises(NotEnoughCores):
            bw.bandwidth_sweep(region_256m, "load", [3], [0, 1],
                               MockTimer.uniform(10), MOCK_CAL)

    def test_bad_op_rejected(self, region_256m):
        with pytest.raises(ValueError):
            bw.bandwidth_sweep(region_256m, "copy", [1], [0],
                               MockTimer.uniform(10), MOCK_CAL)

    @needs_hw
    def test_hardware_positive_bandwidth(self, hw, region_256m):
        timer, cal = hw
        cpus = sorted(topology.current_affinity())
        pts = bw.bandwidth_sweep(region_256m, "load", [1], cpus, timer, cal,
                                 window_s=0.3, warmup_s=0.1, trials=1)
        assert pts[0].gib_per_s > 0.5  # any real machine streams >0.5 GiB/s
        assert pts[0].access_width_bytes == kernels.STREAM_ACCESS_WIDTH


class TestLoadedLatency:
    @needs_hw
    def test_points_ordered_and_positive(self, hw, region_256m):
        timer, cal = hw
        cpus = sorted(topology.current_affinity())
        if len(cpus) < 2:
            pytest.skip("need 2 cpus")
        pts = bw.loaded_latency(region_256m, [0, 1], cpus, timer, cal,
                                probe_footprint_bytes=32 * 1024 * 1024,
                                probe_rounds=2)
        assert [p.offered_load_threads for p in pts] == [0, 1]
        assert all(p.probe_latency_ns > 0 for p in pts)
        assert pts[0].achieved_gib_per_s == 0.0
        assert pts[1].achieved_gib_per_s > 0

    def test_not_enough_cores(self, region_256m):
        with pytest.raises(NotEnoughCores):
            bw.loaded_latency(region_256m, [2], [0, 1], MockTimer.uniform(1), MOCK_CAL)


class TestInterleaveSweep:
    @needs_hw
    def test_degenerate_weight_matches_bind(self, hw):
        # a single nonzero weight is bind by construction; the bandwidth
        # comparison only means something when the host itself can repeat
        # a measurement within the tolerance, so gauge the noise floor
        # with a third row of the same placement
        timer, cal = hw
        cpus = sorted(topology.current_affinity())
        rows = bw.interleave_sweep([{0: 1}, {0: 4}, {0: 1}], "load",
                                   384 * 1024 * 1024, 1, cpus, timer, cal,
                                   window_s=0.7)
        assert all(r.mechanism == "bind" for r in rows)
        a, b, a2 = (r.aggregate_gib_per_s for r in rows)
        noise = abs(a - a2) / max(a, a2)
        if noise >= 0.04:
            pytest.skip(f"host bandwidth noise floor {noise:.1%} exceeds tolerance")
        assert abs(a - b) / max(a, b) < 0.05

    @needs_hw
    def test_mechanism_recorded_for_synthetic_nodes(self, hw):
        timer, cal = hw
        cpus = sorted(topology.current_affinity())
        rows = bw.interleave_sweep([{0: 2, 1: 2, 2: 1}], "load", 64 * 1024 * 1024,
                                   1, cpus, timer, cal, window_s=0.2)
        assert rows[0].mechanism in ("kernel", "userspace-fallback")


class TestCopyBench:
    def test_offload_slot_unavailable(self, region_256m):
        with pytest.raises(EngineUnavailable):
            bw.copy_bench(region_256m, region_256m, [512], 1, True,
                          MockTimer.uniform(1), MOCK_CAL, engine="external-offload")

    def test_size_mismatch(self, plain_region):
        src = plain_region(4096)
        dst = plain_region(4096)
        with pytest.raises(SizeMismatch):
            bw.copy_bench(src, dst, [1024 * 1024], 4, True,
                          MockTimer.uniform(1), MOCK_CAL)

    def test_mock_copies_and_verifies(self, plain_region):
        src = plain_region(1024 * 1024)
        dst = plain_region(1024 * 1024)
        res = bw.copy_bench(src, dst, [512, 4096], 1, True,
                            MockTimer.uniform(100), MOCK_CAL, samples=3)
        assert all(r.verified for r in res)
        assert [r.size_bytes for r in res] == [512, 4096]

    @needs_hw
    def test_sweep_endpoints_and_amortization(self, hw, plain_region):
        timer, cal = hw
        src = plain_region(2 * 1024 * 1024)
        dst = plain_region(2 * 1024 * 1024)
        sizes = [512, 8192, 524288]
        res = bw.copy_bench(src, dst, sizes, 1, True, timer, cal, samples=7)
        assert [r.size_bytes for r in res] == sizes
        assert all(r.verified for r in res)
        assert res[-1].gib_per_s > res[0].gib_per_s  # fixed overhead amortizes

    def test_offload_config_schema_exists(self):
        cfg = bw.OffloadEngineConfig()
        assert cfg.work_queues == 2 and cfg.max_batch == 32
