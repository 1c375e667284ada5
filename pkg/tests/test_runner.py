import json

import pytest

from tierbench import cli, runner, topology
from tierbench.errors import ConfigInvalid
from tests.conftest import build_msr, build_resctrl, build_sysfs

MOCK_TIMER = {"backend": "mock", "uniform_ticks": 1000, "cycles_per_ns": 1.0}


def mock_config(experiments, **kwargs):
    return runner.SuiteConfig.from_dict({
        "experiments": experiments, "timer": MOCK_TIMER, **kwargs,
    })


class TestConfigValidation:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigInvalid, match="unknown config keys"):
            runner.SuiteConfig.from_dict({"experiments": [], "extra": 1})

    def test_unknown_kind(self):
        with pytest.raises(ConfigInvalid, match="unknown experiment kind"):
            runner.SuiteConfig.from_dict(
                {"experiments": [{"id": "x", "kind": "frobnicate"}]})

    def test_unknown_param(self):
        with pytest.raises(ConfigInvalid, match="unknown params"):
            runner.SuiteConfig.from_dict(
                {"experiments": [{"id": "x", "kind": "latency",
                                  "params": {"bogus": 1}}]})

    def test_duplicate_ids(self):
        with pytest.raises(ConfigInvalid, match="duplicate experiment id"):
            runner.SuiteConfig.from_dict(
                {"experiments": [{"id": "x", "kind": "latency"},
                                 {"id": "x", "kind": "latency"}]})

    def test_bad_timer(self):
        with pytest.raises(ConfigInvalid, match="bad timer"):
            runner.SuiteConfig.from_dict({"experiments": [],
                                          "timer": {"backend": "sundial"}})

    def test_config_hash_stable(self):
        a = mock_config([{"id": "x", "kind": "latency", "params": {}}])
        b = mock_config([{"id": "x", "kind": "latency", "params": {}}])
        assert a.config_hash() == b.config_hash()


class TestRunSuite:
    def test_empty_config_gives_manifest_only(self):
        bundle = runner.run_suite(mock_config([]))
        assert bundle.manifest["timer_backend"] == "mock"
        assert bundle.manifest["topology"]["nodes"]
        assert bundle.tables == {}

    def test_mock_suite_bit_identical(self):
        cfg = mock_config([
            {"id": "lat", "kind": "latency",
             "params": {"ops": ["load"], "footprint_bytes": 65536, "repeats": 10}},
        ])
        docs = [json.dumps(runner.run_suite(cfg).to_json_dict(), sort_keys=True)
                for _ in range(3)]
        assert docs[0] == docs[1] == docs[2]

    def test_missing_capability_recorded_as_skip(self):
        if topology.resctrl_available():
            pytest.skip("host has resctrl; skip-path not exercised")
        cfg = mock_config([
            {"id": "cat", "kind": "cat_heatmap", "params": {"mask": 0xFF}},
        ])
        bundle = runner.run_suite(cfg)
        log = bundle.tables["experiment_log"]
        assert log[0]["status"] == "skipped"
        assert "resctrl" in log[0]["reason"]

    def test_experiment_failure_contained(self):
        cfg = mock_config([
            {"id": "boom", "kind": "fault_injection", "params": {"mutate": []}},
            {"id": "lat", "kind": "latency",
             "params": {"ops": ["load"], "footprint_bytes": 65536, "repeats": 5}},
        ])
        bundle = runner.run_suite(cfg)
        statuses = {r["experiment_id"]: r["status"]
                    for r in bundle.tables["experiment_log"]}
        assert statuses["boom"] == "failed"
        assert statuses["lat"] == "ok"
        assert bundle.tables["latency"]

    def test_every_row_carries_manifest_hash(self):
        cfg = mock_config([
            {"id": "lat", "kind": "latency",
             "params": {"ops": ["load"], "footprint_bytes": 65536, "repeats": 5}},
        ])
        bundle = runner.run_suite(cfg)
        for rows in bundle.tables.values():
            for row in rows:
                assert row["manifest_hash"] == bundle.manifest_hash

    def test_latency_raw_samples_retained_by_default(self):
        cfg = mock_config([
            {"id": "lat", "kind": "latency",
             "params": {"ops": ["load"], "footprint_bytes": 65536, "repeats": 5}},
        ])
        bundle = runner.run_suite(cfg)
        raw = bundle.tables["latency_samples"]
        assert len(raw) == 5
        assert [r["sample_index"] for r in raw] == list(range(5))
        # the retained samples reproduce the summary row exactly
        mean = sum(r["ns"] for r in raw) / len(raw)
        assert mean == bundle.tables["latency"][0]["mean_ns"]

    def test_raw_retention_can_be_disabled(self):
        cfg = mock_config([
            {"id": "lat", "kind": "latency",
             "params": {"ops": ["load"], "footprint_bytes": 65536, "repeats": 5,
                        "retain_samples": False}},
        ])
        bundle = runner.run_suite(cfg)
        assert "latency_samples" not in bundle.tables


class TestStateHygiene:
    def test_fault_injection_restores_fixture_state(self, tmp_path, fixture_root):
        build_sysfs(tmp_path, {0: {"cpus": [0, 1], "mem_kb": 1024 * 1024}},
                    cpus=[0, 1], weighted_interleave=True)
        build_msr(tmp_path, [0, 1])
        build_resctrl(tmp_path)
        fixture_root()
        msr_before = [(tmp_path / f"dev/cpu/{c}/msr").read_bytes() for c in (0, 1)]
        weights_before = [(tmp_path / "sys/kernel/mm/mempolicy/weighted-interleave"
                           / "node0").read_text()]
        cfg = mock_config([
            {"id": "boom", "kind": "fault_injection",
             "params": {"mutate": ["msr", "weights", "cat"]}},
        ])
        bundle = runner.run_suite(cfg)
        log = {r["experiment_id"]: r for r in bundle.tables["experiment_log"]
               if r["status"] == "failed"}
        assert "boom" in log
        assert [(tmp_path / f"dev/cpu/{c}/msr").read_bytes()
                for c in (0, 1)] == msr_before
        assert [(tmp_path / "sys/kernel/mm/mempolicy/weighted-interleave"
                 / "node0").read_text()] == weights_before
        leftover = list((tmp_path / "sys/fs/resctrl").glob("tierbench-*"))
        assert leftover == []


class TestCapabilityProbe:
    def test_probe_reports_all_keys(self):
        caps = runner.capability_probe()
        for key in ("msr", "resctrl", "weighted_interleave", "hugepages_2m",
                    "perf_counters", "multi_socket", "far_tier", "cores", "x86"):
            assert key in caps

    def test_fixture_driven_probe(self, tmp_path, fixture_root):
        build_sysfs(tmp_path, {
            0: {"cpus": [0, 1], "mem_kb": 1024, "socket": 0},
            1: {"cpus": [2, 3], "mem_kb": 1024, "socket": 1},
            2: {"cpus": [], "mem_kb": 2048},
        }, cpus=[0, 1, 2, 3], weighted_interleave=True)
        build_msr(tmp_path, [0])
        build_resctrl(tmp_path)
        fixture_root()
        caps = runner.capability_probe()
        assert caps["multi_socket"] and caps["far_tier"]
        assert caps["weighted_interleave"] and caps["resctrl"] and caps["msr"]


class TestCli:
    def test_probe_and_list(self, capsys):
        assert cli.main(["probe"]) == 0
        assert json.loads(capsys.readouterr().out)["capabilities"]
        assert cli.main(["list"]) == 0
        out = capsys.readouterr().out
        assert "latency" in out and "fig8" in out

    def test_run_emit_plotdata_pipeline(self, tmp_path, capsys):
        cfg_path = tmp_path / "suite.json"
        cfg_path.write_text(json.dumps({
            "experiments": [
                {"id": "fig4-mini", "kind": "latency",
                 "params": {"ops": ["load"], "footprint_bytes": 65536,
                            "repeats": 5}},
            ],
            "timer": MOCK_TIMER,
        }))
        out = tmp_path / "out"
        assert cli.main(["run", str(cfg_path), "--out", str(out)]) == 0
        assert (out / "latency.csv").exists()
        assert (out / "manifest.json").exists()

        bundle_json = tmp_path / "bundle.json"
        assert cli.main(["emit", "--in", str(out), "--format", "json",
                         "--out", str(bundle_json.parent)]) == 0
        assert (tmp_path / "bundle.json").exists()

        plot_dir = tmp_path / "plotdata"
        assert cli.main(["plot-data", str(out), "--out", str(plot_dir)]) == 0
        assert (plot_dir / "fig4" / "latency.csv").exists()

    def test_run_rejects_bad_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"experiments\": [{\"id\": \"x\", \"kind\": \"nope\"}]}")
        assert cli.main(["run", str(bad)]) == 1
