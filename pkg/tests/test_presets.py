import pytest

from tierbench import presets, topology
from tierbench.errors import UnknownFigure
from tests.conftest import build_sysfs


class TestPresetCompilation:
    @pytest.mark.parametrize("figure", presets.FIGURES)
    @pytest.mark.parametrize("scale", ["desk", "paper"])
    def test_compiles_to_valid_config(self, figure, scale):
        fp = presets.preset(figure, scale)
        assert fp.config.experiments
        assert fp.figure == figure
        assert fp.scale_notes.startswith(f"preset={figure}")

    def test_unknown_figure(self):
        with pytest.raises(UnknownFigure):
            presets.preset("fig3")

    @pytest.mark.parametrize("figure", presets.FIGURES)
    def test_scales_differ_only_in_magnitude(self, figure):
        desk = presets.preset(figure, "desk").config
        paper = presets.preset(figure, "paper").config
        assert [e.kind for e in desk.experiments] == [e.kind for e in paper.experiments]
        for d, p in zip(desk.experiments, paper.experiments):
            assert set(d.params) == set(p.params)

    def test_fig8_paper_size_axis(self):
        fp = presets.preset("fig8", "paper")
        sizes = fp.config.experiments[0].params["sizes"]
        assert sizes[0] == 64
        assert sizes[-1] == 256 * 1024 * 1024
        assert len(sizes) >= 6

    def test_fig8_desk_keeps_axis_shape(self):
        fp = presets.preset("fig8", "desk")
        sizes = fp.config.experiments[0].params["sizes"]
        assert sizes[0] == 64
        assert len(sizes) >= 6
        assert sizes[-1] <= 16 * 1024 * 1024

    def test_fig10_paper_ops(self):
        fp = presets.preset("fig10", "paper")
        assert all(e.params["ops_per_thread"] == 1_000_000
                   for e in fp.config.experiments)

    def test_fig4_desk_footprint_capped_by_ram(self):
        fp = presets.preset("fig4", "desk")
        ram = sum(n.capacity_bytes for n in topology.discover().nodes)
        footprint = fp.config.experiments[0].params["footprint_bytes"]
        assert footprint <= ram // 4
        assert "scale_factor=" in fp.scale_notes

    def test_fig4_desk_shrinks_at_least_10x(self):
        desk = presets.preset("fig4", "desk").config.experiments[0].params
        paper = presets.preset("fig4", "paper").config.experiments[0].params
        desk_total = desk["footprint_bytes"] * desk["repeats"]
        paper_total = paper["footprint_bytes"] * paper["repeats"]
        assert desk_total * 10 <= paper_total

    def test_fig7_sweeps_three_node_ratios(self):
        fp = presets.preset("fig7", "desk")
        configs = fp.config.experiments[0].params["weight_configs"]
        assert len(configs) >= 6
        assert {"0": 4, "1": 2, "2": 1} in configs


class TestAnnotations:
    def test_every_figure_annotated(self):
        for figure in presets.FIGURES:
            assert presets.preset(figure).annotations

    def test_matching_against_fixture_topology(self, tmp_path, fixture_root):
        build_sysfs(tmp_path, {
            0: {"cpus": [0], "mem_kb": 1024, "socket": 0},
            1: {"cpus": [], "mem_kb": 2048},
        }, cpus=[0])
        fixture_root()
        topo = topology.discover()
        classes = presets.matched_hardware_classes(topo)
        assert "far-tier" in classes
        rows = presets.annotation_rows(presets.preset("fig4"), topo)
        assert any(r["matched"] and r["hardware_class"] == "far-tier" for r in rows)

    def test_non_matching_class_not_matched(self):
        topo = topology.discover()
        rows = presets.annotation_rows(presets.preset("fig11"), topo)
        if not topo.far_tier_nodes():
            assert all(not r["matched"] for r in rows
                       if r["hardware_class"] == "intel-far-tier")
