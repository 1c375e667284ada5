"""Distributional latency statistics.

Percentiles use the nearest-rank method on the sorted samples so the
ordering invariant min <= p50 <= p95 <= p99 <= max holds exactly and
results are bit-stable for a given sample sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


def _nearest_rank(sorted_samples: Sequence[float], q: float) -> float:
    n = len(sorted_samples)
    rank = max(1, math.ceil(q * n))
    return sorted_samples[rank - 1]


@dataclass(frozen=True, eq=False)
class LatencyStats:
    n_samples: int
    mean_ns: float
    p50_ns: float
    p95_ns: float
    p99_ns: float
    stdev_ns: float
    min_ns: float
    max_ns: float
    calibration: dict

    def __eq__(self, other):
        if not isinstance(other, LatencyStats):
            return NotImplemented
        return (self.as_row(), self.calibration) == (other.as_row(), other.calibration)

    def __post_init__(self):
        if not (self.min_ns <= self.p50_ns <= self.p95_ns <= self.p99_ns <= self.max_ns):
            raise ValueError("percentiles out of order")

    @classmethod
    def from_samples_ns(cls, samples: Sequence[float], calibration: dict,
                        keep_samples: bool = True) -> "LatencyStats":
        if not samples:
            raise ValueError("need at least one sample")
        ordered = sorted(samples)
        n = len(ordered)
        mean = math.fsum(ordered) / n
        if n > 1:
            var = math.fsum((s - mean) ** 2 for s in ordered) / (n - 1)
            stdev = math.sqrt(var)
        else:
            stdev = 0.0
        stats = cls(
            n_samples=n,
            mean_ns=mean,
            p50_ns=_nearest_rank(ordered, 0.50),
            p95_ns=_nearest_rank(ordered, 0.95),
            p99_ns=_nearest_rank(ordered, 0.99),
            stdev_ns=stdev,
            min_ns=ordered[0],
            max_ns=ordered[-1],
            calibration=calibration,
        )
        if keep_samples:
            # raw retention in measurement order, so every emitted number
            # stays traceable back to its samples
            object.__setattr__(stats, "samples_ns", list(samples))
        return stats

    def as_row(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "mean_ns": self.mean_ns,
            "p50_ns": self.p50_ns,
            "p95_ns": self.p95_ns,
            "p99_ns": self.p99_ns,
            "stdev_ns": self.stdev_ns,
            "min_ns": self.min_ns,
            "max_ns": self.max_ns,
        }
