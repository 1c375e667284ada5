"""Canned per-figure experiment configurations.

Each preset compiles to a full SuiteConfig.  The paper scale reproduces
the original sweep geometry; the desk scale shrinks footprints and
durations by at least 10x while keeping the same swept dimensions and
at least six points per axis wherever the hardware has enough cores to
express them.  Expected-shape annotations ride along and are attached
to reports as commentary; they are directional expectations tied to a
hardware class, never assertions on non-matching hosts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import topology
from .errors import UnknownFigure
from .runner import SuiteConfig

FIGURES = ("fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10", "fig11",
           "fig14", "fig15", "fig16", "fig17", "fig19", "fig20")

GIB = 1024 ** 3
MIB = 1024 ** 2


@dataclass(frozen=True)
class Annotation:
    hardware_class: str  # any | far-tier | intel | amd | intel-far-tier
    note: str


@dataclass
class FigurePreset:
    figure: str
    scale: str
    config: SuiteConfig
    annotations: list[Annotation] = field(default_factory=list)
    scale_notes: str = ""


ANNOTATIONS: dict[str, list[Annotation]] = {
    "fig4": [
        Annotation("far-tier", "far-tier latency expected well above local DRAM; "
                               "device controller dominates the gap"),
        Annotation("any", "with prefetchers off, sequential and random chains "
                          "should land close together"),
    ],
    "fig5": [
        Annotation("any", "DRAM load bandwidth should rise with thread count "
                          "until channel saturation"),
        Annotation("far-tier", "far-tier store bandwidth often stays flat with "
                               "thread count on expander-class devices"),
    ],
    "fig6": [
        Annotation("any", "probe latency climbs sharply once offered load "
                          "passes the saturation point"),
    ],
    "fig7": [
        Annotation("far-tier", "adding a small far-tier weight should raise "
                               "aggregate bandwidth over DIMM-only interleave"),
    ],
    "fig8": [
        Annotation("intel", "clflush throughput trails clflushopt/clwb on large "
                            "buffers (serialized execution)"),
        Annotation("amd", "all three flush instructions tend to converge on "
                          "large buffers"),
    ],
    "fig9": [
        Annotation("far-tier", "locks resident in the far tier spin longer: "
                               "expect higher branch/spin counts than DRAM"),
    ],
    "fig10": [
        Annotation("any", "queue total time should be flat across initial "
                          "sizes; map time grows once the footprint leaves cache"),
        Annotation("far-tier", "cross-socket far-tier placements can double "
                               "queue completion time"),
    ],
    "fig11": [
        Annotation("intel-far-tier", "remote far-tier reads may only occupy a "
                                     "fraction of the LLC (reduced plateau)"),
    ],
    "fig14": [
        Annotation("any", "narrowing the CAT mask shrinks the usable-cache "
                          "plateau proportionally"),
    ],
    "fig15": [
        Annotation("any", "P1 latency spikes where its mask overlaps P0's"),
    ],
    "fig16": [
        Annotation("any", "loads after T1/T2 prefetch cost a few ns more than "
                          "after T0 (L2 vs L1 placement)"),
    ],
    "fig17": [
        Annotation("intel", "stream detectors engage after a short run of "
                            "sequential blocks and give up at large strides"),
    ],
    "fig19": [
        Annotation("any", "copy throughput rises with size as fixed overheads "
                          "amortize; uncached copies are slower"),
    ],
    "fig20": [
        Annotation("any", "multiple threads are needed to approach peak copy "
                          "bandwidth"),
    ],
}


def _host() -> dict:
    topo = topology.discover()
    ram = sum(n.capacity_bytes for n in topo.nodes) or 8 * GIB
    cores = sum(len(n.cpu_ids) for n in topo.nodes) or 1
    llc = topo.llc_capacity() or 32 * MIB
    return {"ram": ram, "cores": cores, "llc": llc}


def _geometric(lo: int, hi: int, factor: int) -> list[int]:
    out = []
    v = lo
    while v <= hi:
        out.append(v)
        v *= factor
    return out


def _thread_axis(cores: int, paper: bool) -> list[int]:
    hi = 64 if paper else cores
    axis = sorted({min(t, hi) for t in [1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64]})
    return [t for t in axis if t <= hi]


def preset(figure_id: str, scale: str = "desk") -> FigurePreset:
    """Compile one figure's sweep into a validated SuiteConfig."""
    if figure_id not in FIGURES:
        raise UnknownFigure(f"no preset for {figure_id!r}")
    if scale not in ("paper", "desk"):
        raise ValueError("scale must be 'paper' or 'desk'")
    paper = scale == "paper"
    host = _host()
    experiments: list[dict] = []
    noise = {"prefetchers": "leave"}
    notes = f"preset={figure_id} scale={scale}"

    if figure_id == "fig4":
        repeats = 1000 if paper else 200
        target_total = 32 * GIB if paper else 2 * GIB
        footprint = min(target_total // repeats, host["ram"] // 4)
        notes += (f" footprint={footprint} repeats={repeats}"
                  f" scale_factor={footprint * repeats / (32 * GIB):.4f}")
        noise = {"prefetchers": "off"}
        experiments.append({
            "id": f"{figure_id}-latency", "kind": "latency",
            "params": {"ops": ["load", "store"],
                       "patterns": ["random", "sequential"],
                       "footprint_bytes": int(footprint), "flush_each": True,
                       "repeats": repeats},
        })
    elif figure_id == "fig5":
        threads = _thread_axis(host["cores"], paper)
        size = 2 * GIB if paper else 256 * MIB
        size = min(size, host["ram"] // 4)
        experiments.append({
            "id": f"{figure_id}-bandwidth", "kind": "bandwidth",
            "params": {"ops": ["load", "store"], "thread_counts": threads,
                       "size_bytes": int(size),
                       "window_s": 2.0 if paper else 0.5},
        })
    elif figure_id == "fig6":
        gens = [0, 1, 2, 4, 8, 16, 32] if paper else list(range(host["cores"]))
        size = 2 * GIB if paper else 256 * MIB
        size = min(size, host["ram"] // 4)
        experiments.append({
            "id": f"{figure_id}-loaded-latency", "kind": "loaded_latency",
            "params": {"load_thread_counts": gens, "size_bytes": int(size)},
        })
    elif figure_id == "fig7":
        tuples = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 1, 1),
                  (2, 1, 1), (2, 2, 1), (4, 2, 1), (4, 4, 1)]
        size = 1 * GIB if paper else 128 * MIB
        size = min(size, host["ram"] // 8)
        experiments.append({
            "id": f"{figure_id}-interleave", "kind": "interleave",
            "params": {"weight_configs": [{"0": a, "1": b, "2": c}
                                          for a, b, c in tuples],
                       "op": "load", "size_bytes": int(size),
                       "threads": min(host["cores"], 8)},
        })
    elif figure_id == "fig8":
        hi = 256 * MIB if paper else 16 * MIB
        experiments.append({
            "id": f"{figure_id}-flush", "kind": "flush",
            "params": {"instructions": ["clflush", "clflushopt", "clwb"],
                       "states": ["clean", "dirty"],
                       "sizes": _geometric(64, hi, 4),
                       "repeats": 5 if paper else 3},
        })
    elif figure_id == "fig9":
        noise = {"prefetchers": "off"}
        footprint = 32 * MIB if paper else 4 * MIB
        experiments.append({
            "id": f"{figure_id}-atomic", "kind": "latency",
            "params": {"ops": ["cmpxchg_load", "cmpxchg_store"],
                       "patterns": ["random"], "footprint_bytes": footprint,
                       "flush_each": True, "repeats": 1000 if paper else 200},
        })
        experiments.append({
            "id": f"{figure_id}-spinlock", "kind": "spinlock",
            "params": {"iterations": 1_000_000 if paper else 100_000},
        })
    elif figure_id == "fig10":
        ops = 1_000_000 if paper else 100_000
        if paper:
            queue_init = [2 ** k for k in range(7, 28, 3)]  # 1 KiB .. 1 GiB of 8 B items
            map_init = [2 ** k for k in range(6, 27, 3)]
        else:
            # keep fill >= ops so both sides stream steadily: below that the
            # run measures scheduler handoff, not the memory tier
            queue_init = [2 ** k for k in range(17, 23)]
            map_init = [2 ** k for k in range(13, 19)]
        experiments.append({
            "id": f"{figure_id}-queues", "kind": "lfds",
            "params": {"structures": ["spsc_queue", "mpmc_queue"],
                       "placements": list(range_placements()),
                       "initial_elements": queue_init, "ops_per_thread": ops,
                       "best_of": 1 if paper else 3},
        })
        experiments.append({
            "id": f"{figure_id}-map", "kind": "lfds",
            "params": {"structures": ["concurrent_map"],
                       "placements": list(range_placements()),
                       "initial_elements": map_init, "ops_per_thread": ops,
                       "best_of": 1 if paper else 3},
        })
    elif figure_id == "fig11":
        noise = {"prefetchers": "off"}
        if paper:
            strides = _geometric(64, 65536, 2)
            lo = max((host["llc"] // 8) // 64, 1024)
            counts = _geometric(lo, (host["llc"] * 8) // 64, 2)
        else:
            strides = [64, 128, 256, 512, 1024, 4096]
            counts = [2 ** k for k in range(10, 19)]
        experiments.append({
            "id": f"{figure_id}-heatmap", "kind": "heatmap",
            "params": {"strides": strides, "counts": counts,
                       "instruction_class": "regular",
                       "max_region_bytes": int(min(host["ram"] // 4, 8 * GIB))},
        })
    elif figure_id == "fig14":
        noise = {"prefetchers": "off"}
        masks = [0x7FFF, 0xFF, 0x3F, 0xF, 0x3, 0x1]
        counts = ([2 ** k for k in range(12, 20)] if paper
                  else [2 ** k for k in range(10, 18)])
        for i, mask in enumerate(masks):
            experiments.append({
                "id": f"{figure_id}-cat-{mask:#x}", "kind": "cat_heatmap",
                "params": {"mask": mask, "clos_id": i + 1, "strides": [64],
                           "counts": counts},
            })
    elif figure_id == "fig15":
        noise = {"prefetchers": "off"}
        positions = [0xF << k for k in range(0, 12, 2)]
        experiments.append({
            "id": f"{figure_id}-conflict", "kind": "eviction_conflict",
            "params": {"p0_mask": 0xF, "p1_mask_positions": positions,
                       "p1_working_set_bytes": 2 * MIB if paper else 1 * MIB,
                       "rounds": 64 if paper else 16},
        })
    elif figure_id == "fig16":
        noise = {"prefetchers": "off"}
        experiments.append({
            "id": f"{figure_id}-prefetch", "kind": "prefetch",
            "params": {"hints": ["T0", "T1", "T2", "NTA", "W"],
                       "footprint_bytes": 32 * MIB if paper else 16 * MIB,
                       "repeats": 1000 if paper else 500},
        })
    elif figure_id == "fig17":
        noise = {"prefetchers": "off"}
        experiments.append({
            "id": f"{figure_id}-footprint", "kind": "prefetch_footprint",
            "params": {"strides": [64, 128, 256, 512, 1024, 2048, 4096, 8192,
                                   16384, 32768, 65536],
                       "max_warm_blocks": 512 if paper else 64,
                       "region_bytes": 128 * MIB if paper else 64 * MIB},
        })
    elif figure_id in ("fig19", "fig20"):
        sizes = _geometric(512, 512 * 1024, 2)
        threads = [1, min(10, host["cores"])] if figure_id == "fig20" else [1]
        for t in sorted(set(threads)):
            experiments.append({
                "id": f"{figure_id}-copy-{t}t", "kind": "copy",
                "params": {"sizes": sizes, "threads": t, "cached": [True, False],
                           "samples": 9 if paper else 5},
            })

    config = SuiteConfig.from_dict({
        "experiments": experiments,
        "noise": noise,
        "notes": notes,
        "timer": {"backend": "hardware"},
    })
    return FigurePreset(
        figure=figure_id, scale=scale, config=config,
        annotations=list(ANNOTATIONS.get(figure_id, [])), scale_notes=notes,
    )


def range_placements() -> tuple[str, ...]:
    from .lfds import PLACEMENTS

    return PLACEMENTS


def matched_hardware_classes(topo: topology.TopologyMap) -> set[str]:
    """Hardware classes the current host belongs to, for annotations."""
    classes = {"any"}
    vendor, _family = topology._cpu_vendor_family()
    if vendor == "GenuineIntel":
        classes.add("intel")
    elif vendor == "AuthenticAMD":
        classes.add("amd")
    if topo.far_tier_nodes():
        classes.add("far-tier")
        if "intel" in classes:
            classes.add("intel-far-tier")
    return classes


def annotation_rows(fp: FigurePreset, topo: topology.TopologyMap) -> list[dict]:
    classes = matched_hardware_classes(topo)
    return [
        {"figure": fp.figure, "hardware_class": a.hardware_class,
         "matched": a.hardware_class in classes, "note": a.note}
        for a in fp.annotations
    ]
