import pytest

from tierbench import cachebench, kernels, topology
from tierbench.errors import InvalidWorkingSet, NoPlateau, SingleSocket
from tierbench.timing import Calibration, HardwareTimer, MockTimer, calibrate

needs_hw = pytest.mark.skipif(not kernels.HAVE_X86, reason="x86 kernels unavailable")

MOCK_CAL = Calibration(1.0, 1, 0.0, True, "mock")


def synthetic_grid(values_by_count, stride=64):
    counts = sorted(values_by_count)
    cells = {(stride, c): values_by_count[c] for c in counts}
    return cachebench.HeatmapGrid((stride,), tuple(counts), cells, "regular", 3)


@pytest.fixture(scope="module")
def hw():
    if not kernels.HAVE_X86:
        pytest.skip("x86 kernels unavailable")
    topology.pin_thread(0)
    timer = HardwareTimer()
    return timer, calibrate(timer, window_ns=50_000_000)


class TestKneeEstimate:
    def test_step_function(self):
        # 10 ns up to 32 MiB of footprint, 90 ns beyond -> knee at 32 MiB
        mib = 1024 * 1024
        counts = {c: (10.0 if c * 64 <= 32 * mib else 90.0)
                  for c in [2 ** k for k in range(15, 21)]}
        grid = synthetic_grid(counts)
        knee = cachebench.estimate_knee(grid)
        assert knee.estimated_capacity_bytes == 32 * mib
        assert knee.threshold_ns == 15.0

    def test_monotone_ramp_has_no_plateau(self):
        counts = {2 ** k: 10.0 * (k - 9) for k in range(10, 17)}
        with pytest.raises(NoPlateau):
            cachebench.estimate_knee(synthetic_grid(counts))

    def test_all_flat_is_lower_bound(self):
        counts = {2 ** k: 10.0 for k in range(10, 16)}
        knee = cachebench.estimate_knee(synthetic_grid(counts))
        assert knee.confidence == "lower-bound"
        assert knee.estimated_capacity_bytes == (2 ** 15) * 64

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            cachebench.estimate_knee(synthetic_grid({16: 1.0, 32: 1.0, 64: 1.0}))


class TestHeatmap:
    def test_oversized_cells_marked_skipped(self, plain_region):
        region = plain_region(1024 * 1024)
        grid = cachebench.cache_heatmap(region, [64], [256, 1 << 16, 1 << 22],
                                        "regular", MockTimer.uniform(10), MOCK_CAL,
                                        rounds=1)
        assert grid.cell(64, 256) is not None
        assert grid.cell(64, 1 << 22) is None  # footprint exceeds region

    def test_axes_must_increase(self, plain_region):
        region = plain_region(1024 * 1024)
        with pytest.raises(ValueError):
            cachebench.cache_heatmap(region, [128, 64], [16], "regular",
                                     MockTimer.uniform(1), MOCK_CAL)

    def test_mock_cells_exactly_equal(self, plain_region):
        # schedule charges ticks proportional to each cell's hop count, so
        # every per-hop cell collapses to the same value
        region = plain_region(1024 * 1024)
        counts = [64, 128, 256, 512]
        schedule = []
        for _stride in (64, 128):
            for c in counts:
                schedule += [0, 50 * c] * 3  # 3 rounds of 50 ticks/hop
        grid = cachebench.cache_heatmap(region, [64, 128], counts, "regular",
                                        MockTimer(schedule), MOCK_CAL, rounds=3)
        values = {v for v in grid.cells.values()}
        assert values == {50.0}

    @needs_hw
    def test_monotone_envelope_beyond_knee(self, hw, plain_region):
        # at fixed stride, latency never falls by more than 10% as the
        # footprint grows past the knee
        timer, cal = hw
        region = plain_region(64 * 1024 * 1024)
        counts = [2 ** k for k in range(12, 20)]
        grid = cachebench.cache_heatmap(region, [64], counts, "regular", timer, cal,
                                        rounds=5, pin_cpu=0, estimator="min")
        knee = cachebench.estimate_knee(grid)
        beyond = [grid.cell(64, c) for c in counts
                  if c * 64 >= knee.estimated_capacity_bytes]
        for prev, nxt in zip(beyond, beyond[1:]):
            assert nxt >= prev * 0.9, beyond

    @needs_hw
    def test_knee_brackets_discovered_cache(self, hw, plain_region):
        # dev-host sanity: the measured knee lands around a real cache
        # capacity bracket (L2-L3 transition on this machine)
        timer, cal = hw
        region = plain_region(64 * 1024 * 1024)
        counts = [2 ** k for k in range(12, 20)]
        grid = cachebench.cache_heatmap(region, [64], counts, "regular", timer, cal,
                                        rounds=5, pin_cpu=0, estimator="min")
        knee = cachebench.estimate_knee(grid)
        assert 256 * 1024 <= knee.estimated_capacity_bytes <= 8 * 1024 * 1024


class TestPrefetcherFootprint:
    def test_disabled_probe_never_detects(self, plain_region):
        region = plain_region(1024 * 1024)
        cal = Calibration(1.0, 1, 0.0, True, "mock")
        miss = 200

        def all_miss_probe(base, stride, warm, reps):
            return miss

        rows = cachebench.hw_prefetcher_footprint(
            region, [64, 128], 8, cal, prefetcher="all-off", probe=all_miss_probe)
        assert all(r["blocks_before_prefetch"] is None for r in rows)

    def test_engaged_probe_detects_threshold(self, plain_region):
        region = plain_region(1024 * 1024)
        cal = Calibration(1.0, 1, 0.0, True, "mock")

        def stream_probe(base, stride, warm, reps):
            return 10 if warm >= 8 else 200  # engages after 8 blocks

        rows = cachebench.hw_prefetcher_footprint(
            region, [64], 16, cal, probe=stream_probe)
        assert rows[0]["blocks_before_prefetch"] == 8

    @needs_hw
    def test_real_stream_detector_fires_at_line_stride(self, hw, plain_region):
        timer, cal = hw
        region = plain_region(16 * 1024 * 1024)
        rows = cachebench.hw_prefetcher_footprint(region, [64], 64, cal, pin_cpu=0)
        detected = rows[0]["blocks_before_prefetch"]
        assert detected is not None and detected <= 32


class TestHandoff:
    def test_zero_working_set(self, plain_region):
        region = plain_region(4096)
        with pytest.raises(InvalidWorkingSet):
            cachebench.shared_data_handoff(region, 0, (0, 0),
                                           MockTimer.uniform(1), MOCK_CAL)

    def test_single_socket_is_skippable(self, plain_region):
        region = plain_region(1024 * 1024)
        with pytest.raises(SingleSocket):
            cachebench.shared_data_handoff(region, 65536, (0, 0),
                                           MockTimer.uniform(1), MOCK_CAL,
                                           socket_count=1)

    @needs_hw
    def test_same_socket_symmetry_control(self, hw, plain_region):
        # with both threads on the same machine's cpus the two steady-state
        # latencies agree within 20%
        timer, cal = hw
        region = plain_region(2 * 1024 * 1024)
        cpus = sorted(topology.current_affinity())
        result = cachebench.shared_data_handoff(
            region, 1024 * 1024, (cpus[0], cpus[-1]), timer, cal,
            socket_count=2, rounds=48, estimator="min")
        t0, t1 = result["t0_latency_ns"], result["t1_latency_ns"]
        assert abs(t1 - t0) / max(t0, t1) < 0.2


class TestEvictionConflict:
    def test_mock_flat_series(self, plain_region):
        p0 = plain_region(1024 * 1024)
        p1 = plain_region(1024 * 1024)
        rows = cachebench.eviction_conflict(
            p0, p1, cachebench.CatMask(1, 0xF), [0xF, 0xF0, 0xF00], (0, 0),
            MockTimer.uniform(100), MOCK_CAL, 65536, rounds=4)
        values = {r["p1_mean_latency_ns"] for r in rows}
        assert len(values) == 1  # deterministic and flat

    def test_mask_validation(self):
        with pytest.raises(ValueError):
            cachebench.CatMask(1, 0)
        assert cachebench.CatMask(1, 0xFF).way_count == 8
