"""Figure rendering for the eight result families.

Rendering is a pure function of (CSV bytes, options): Agg backend, fixed
geometry, no timestamps, PNG metadata stripped, so repeated renders are
pixel-identical.  Every figure carries the environment-manifest hash in
its footer.  Empty inputs produce a placeholder that states the reason
instead of failing the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .schema import manifest_hash, read_rows

FAMILIES = (
    "latency-bars",
    "bandwidth-scaling",
    "loaded-latency",
    "interleave-bars",
    "flush-curves",
    "heatmap",
    "lfds-panels",
    "contention-bars",
)

#: which result-family CSV each figure family consumes
FAMILY_SOURCES = {
    "latency-bars": "latency",
    "bandwidth-scaling": "bandwidth",
    "loaded-latency": "loaded_latency",
    "interleave-bars": "interleave",
    "flush-curves": "flush",
    "heatmap": "heatmap",
    "lfds-panels": "lfds",
    "contention-bars": "contention",
}

_STYLE = {
    "figure.figsize": (8.0, 4.8),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


@dataclass
class PlotSpec:
    family: str
    inputs: list[str]
    output: str
    title: str | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown figure family {self.family!r}")
        if not self.inputs:
            raise ValueError("need at least one input CSV")


def _fmt_bytes(n: float) -> str:
    for unit in ("B", "KiB", "MiB", "GiB"):
        if n < 1024:
            return f"{n:g}{unit}"
        n /= 1024
    return f"{n:g}TiB"


def _series(rows, keys):
    """Group rows by the tuple of `keys` (None-safe, stable order)."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = tuple(str(row.get(k)) for k in keys)
        groups.setdefault(key, []).append(row)
    return dict(sorted(groups.items()))


def _plot_latency_bars(ax, rows):
    groups = _series(rows, ("op", "pattern", "tier"))
    labels, means, p95s = [], [], []
    for key, grp in groups.items():
        labels.append("\n".join(key))
        means.append(np.mean([r["mean_ns"] for r in grp]))
        p95s.append(np.mean([r["p95_ns"] for r in grp]))
    x = np.arange(len(labels))
    ax.bar(x, means, width=0.6, label="mean")
    ax.plot(x, p95s, "k_", markersize=14, label="p95")
    ax.set_xticks(x, labels)
    ax.set_ylabel("latency per line (ns)")
    ax.legend()


def _plot_bandwidth_scaling(ax, rows):
    for key, grp in _series(rows, ("op", "notes", "node")).items():
        grp = sorted(grp, key=lambda r: r["threads"])
        ax.plot([r["threads"] for r in grp], [r["gib_per_s"] for r in grp],
                marker="o", label="/".join(key))
    ax.set_xlabel("threads")
    ax.set_ylabel("GiB/s")
    ax.legend()


def _plot_loaded_latency(ax, rows):
    for key, grp in _series(rows, ("notes", "node")).items():
        grp = sorted(grp, key=lambda r: r["offered_load_threads"])
        ax.plot([r["achieved_gib_per_s"] for r in grp],
                [r["probe_latency_ns"] for r in grp],
                marker="o", label="/".join(key))
    ax.set_xlabel("achieved bandwidth (GiB/s)")
    ax.set_ylabel("probe latency (ns)")
    ax.legend()


def _plot_interleave_bars(ax, rows):
    labels = [str(r["weights"]) for r in rows]
    values = [r["aggregate_gib_per_s"] for r in rows]
    x = np.arange(len(labels))
    ax.bar(x, values, width=0.6)
    ax.set_xticks(x, labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("GiB/s")
    ax.set_xlabel("interleave weights")


def _plot_flush_curves(ax, rows):
    for key, grp in _series(rows, ("instruction", "state")).items():
        grp = sorted(grp, key=lambda r: r["size_bytes"])
        ax.plot([r["size_bytes"] for r in grp], [r["ns_per_line"] for r in grp],
                marker="o", label="/".join(key))
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("buffer size (bytes)")
    ax.set_ylabel("ns per line")
    ax.legend(fontsize=7)


def _plot_heatmap(ax, rows):
    strides = sorted({r["stride_bytes"] for r in rows})
    counts = sorted({r["num_blocks"] for r in rows})
    grid = np.full((len(counts), len(strides)), np.nan)
    for r in rows:
        if r["mean_ns"] is not None and not r.get("skipped"):
            grid[counts.index(r["num_blocks"]), strides.index(r["stride_bytes"])] = \
                r["mean_ns"]
    im = ax.imshow(grid, aspect="auto", origin="lower", cmap="viridis")
    # log-scaled sweep geometry: axes are geometric, ticks show raw values
    ax.set_xticks(range(len(strides)), [_fmt_bytes(s) for s in strides],
                  rotation=45, fontsize=7)
    step = max(1, len(counts) // 8)
    ax.set_yticks(range(0, len(counts), step),
                  [str(c) for c in counts[::step]], fontsize=7)
    ax.set_xlabel("stride")
    ax.set_ylabel("blocks")
    plt.colorbar(im, ax=ax, label="ns per access")


def _plot_lfds_panels(ax, rows):
    # one marker style per structure, one line per placement
    structures = sorted({r["structure"] for r in rows})
    for si, structure in enumerate(structures):
        sub = [r for r in rows if r["structure"] == structure]
        for key, grp in _series(sub, ("placement",)).items():
            grp = sorted(grp, key=lambda r: r["footprint_bytes"])
            ax.plot([max(r["footprint_bytes"], 1) for r in grp],
                    [r["total_time_ns"] / 1e6 for r in grp],
                    marker="so^v*d"[si % 6],
                    label=f"{structure}/{key[0]}", alpha=0.8)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("element footprint (bytes)")
    ax.set_ylabel("total time (ms)")
    ax.legend(fontsize=6)


def _plot_contention_bars(ax, rows):
    labels, spins, elapsed = [], [], []
    for r in rows:
        labels.append(f"{r.get('notes') or r.get('node')}/t{r['thread']}")
        spins.append(r["spin_retries"] if r["spin_retries"] is not None else 0)
        elapsed.append(r["elapsed_ns"] / 1e6)
    x = np.arange(len(labels))
    ax.bar(x, spins, width=0.6, label="spin retries")
    ax2 = ax.twinx()
    ax2.plot(x, elapsed, "k_", markersize=14, label="elapsed (ms)")
    ax2.set_ylabel("elapsed (ms)")
    ax.set_xticks(x, labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("spin retries")
    ax.legend(loc="upper left")


_PLOTTERS = {
    "latency-bars": _plot_latency_bars,
    "bandwidth-scaling": _plot_bandwidth_scaling,
    "loaded-latency": _plot_loaded_latency,
    "interleave-bars": _plot_interleave_bars,
    "flush-curves": _plot_flush_curves,
    "heatmap": _plot_heatmap,
    "lfds-panels": _plot_lfds_panels,
    "contention-bars": _plot_contention_bars,
}


def _save(fig, path: str) -> str:
    # strip mutable PNG metadata so renders stay byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def render(spec: PlotSpec) -> str:
    """Render one figure family from its CSVs; returns the image path."""
    rows: list[dict] = []
    for path in spec.inputs:
        rows.extend(read_rows(path))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        title = spec.title or spec.family
        if not rows:
            ax.text(0.5, 0.55, "no data", ha="center", va="center",
                    fontsize=16, transform=ax.transAxes)
            reason = spec.options.get("skip_reason", "input produced no rows")
            ax.text(0.5, 0.4, reason, ha="center", va="center",
                    fontsize=9, transform=ax.transAxes)
            ax.set_axis_off()
            fig.suptitle(title)
            return _save(fig, spec.output)
        _PLOTTERS[spec.family](ax, rows)
        fig.suptitle(title)
        fig.text(0.99, 0.01, f"manifest {manifest_hash(rows)}",
                 ha="right", va="bottom", fontsize=6, alpha=0.7)
        fig.tight_layout(rect=(0, 0.02, 1, 0.97))
        return _save(fig, spec.output)
