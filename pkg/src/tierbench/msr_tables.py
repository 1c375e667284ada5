"""Per-vendor hardware-prefetcher control registers.

New CPUs are a table edit, not a code change.  Entries may also be
overridden at runtime by pointing TIERBENCH_MSR_TABLE at a JSON file
with the same shape.

Setting a listed bit to 1 disables that prefetcher on every vendor in
the table.  `collective_only` marks families whose individual engines
cannot be switched separately through this register.
"""

from __future__ import annotations

import json
import os

# vendor -> list of {families: [int] | None (any), msr, bits: {name: bit}}
PREFETCHER_MSRS: dict[str, list[dict]] = {
    "GenuineIntel": [
        {
            # MISC_FEATURE_CONTROL: big-core families (Nehalem onwards)
            "families": None,
            "msr": 0x1A4,
            "bits": {
                "l2_stream": 0,
                "l2_adjacent": 1,
                "dcu_stream": 2,
                "dcu_ip": 3,
            },
            "collective_only": False,
        }
    ],
    "AuthenticAMD": [
        {
            # Prefetch Control, Zen 3/4/5 (families 0x19, 0x1a)
            "families": [0x19, 0x1A],
            "msr": 0xC0000108,
            "bits": {
                "l1_stream": 0,
                "l1_stride": 1,
                "l1_region": 2,
                "l2_stream": 3,
                "up_down": 5,
            },
            "collective_only": False,
        }
    ],
}


def lookup(vendor: str, family: int) -> dict | None:
    """Return the MSR entry for a vendor/family pair, or None."""
    table = PREFETCHER_MSRS
    override = os.environ.get("TIERBENCH_MSR_TABLE")
    if override and os.path.exists(override):
        with open(override) as fh:
            table = json.load(fh)
    for entry in table.get(vendor, []):
        families = entry.get("families")
        if families is None or family in families:
            return entry
    return None
