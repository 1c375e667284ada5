"""tierbench: microbenchmarks for NUMA-exposed heterogeneous memory tiers."""

__version__ = "0.1.0"
