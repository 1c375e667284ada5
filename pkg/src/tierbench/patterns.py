"""Access-pattern construction: pointer chains and strided sequences.

A chain embeds, in the first 8 bytes of each 64-byte-aligned block, the
absolute address of its successor.  Random chains use a seeded
single-cycle permutation (Sattolo-style guarantee: exactly one cycle
visiting every block) so a traversal covers the whole footprint each
round; a uniform random successor would fragment into sub-cycles and
skew latency.  Bytes 16..stride are pattern-filled; the word at +8 is
kept zero as scratch for the atomic kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import BadStride, RegionTooSmall
from .topology import MemoryRegion

LINE = 64
FILL_BYTE = 0xA5


@dataclass(frozen=True)
class StridedSequence:
    region: MemoryRegion
    start_offset: int
    stride_bytes: int
    count: int
    direction: str = "forward"

    def __post_init__(self):
        if self.stride_bytes % LINE or self.stride_bytes < LINE:
            raise BadStride(f"stride {self.stride_bytes} not a multiple of {LINE}")
        end = self.start_offset + (self.count - 1) * self.stride_bytes + LINE
        if self.start_offset % LINE or end > self.region.size_bytes:
            raise RegionTooSmall("sequence exceeds region")

    def addresses(self) -> np.ndarray:
        base = self.region.addr + self.start_offset
        return base + np.arange(self.count, dtype=np.uint64) * np.uint64(self.stride_bytes)


class PointerChain:
    def __init__(self, region: MemoryRegion, num_blocks: int, stride_bytes: int,
                 order: str, seed: int, successors: np.ndarray):
        self.region = region
        self.num_blocks = num_blocks
        self.stride_bytes = stride_bytes
        self.order = order
        self.seed = seed
        self.successors = successors  # block index -> successor block index
        self.start_addr = region.addr  # block 0

    @property
    def footprint_bytes(self) -> int:
        return self.num_blocks * self.stride_bytes


def _single_cycle_successors(num_blocks: int, seed: int) -> np.ndarray:
    """Seeded single-cycle permutation (uniform over cyclic permutations).

    Visit order is a random permutation; each block's successor is the
    next block in that order, which yields exactly one n-cycle.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(num_blocks)
    succ = np.empty(num_blocks, dtype=np.int64)
    succ[order] = np.roll(order, -1)
    return succ


def build_chain(region: MemoryRegion, num_blocks: int, stride_bytes: int,
                order: str = "random", seed: int = 0) -> PointerChain:
    """Write successor pointers into the region and return the chain."""
    if num_blocks < 1:
        raise RegionTooSmall("need at least one block")
    if stride_bytes < LINE or stride_bytes % LINE:
        raise BadStride(f"stride {stride_bytes} must be a positive multiple of {LINE}")
    if num_blocks * stride_bytes > region.size_bytes:
        raise RegionTooSmall(
            f"{num_blocks} blocks x {stride_bytes} B exceed region of {region.size_bytes} B"
        )
    if order == "sequential":
        succ = np.roll(np.arange(num_blocks, dtype=np.int64), -1)
    elif order == "random":
        succ = _single_cycle_successors(num_blocks, seed)
    else:
        raise ValueError(f"unknown order {order!r}")

    u64 = region.view64()
    word_idx = np.arange(num_blocks, dtype=np.int64) * (stride_bytes // 8)
    targets = np.uint64(region.addr) + succ.astype(np.uint64) * np.uint64(stride_bytes)
    u64[word_idx] = targets
    # scratch word for cmpxchg kernels stays zero; rest of the first line
    # carries a recognizable fill for dirty-state experiments
    u64[word_idx + 1] = 0
    for off in range(16, LINE, 8):
        u64[word_idx + off // 8] = FILL_BYTE * 0x0101010101010101
    return PointerChain(region, num_blocks, stride_bytes, order, seed, succ)


def read_successors(chain: PointerChain) -> np.ndarray:
    """Decode the successor indices actually present in memory."""
    u64 = chain.region.view64()
    word_idx = np.arange(chain.num_blocks, dtype=np.int64) * (chain.stride_bytes // 8)
    ptrs = u64[word_idx].astype(np.int64) - chain.region.addr
    if ptrs.min() < 0:
        raise ValueError("pointer outside region")
    if np.any(ptrs % chain.stride_bytes):
        raise ValueError("pointer not block-aligned")
    return ptrs // chain.stride_bytes


def verify_chain(chain: PointerChain) -> dict:
    """Walk the in-memory pointers with a visited-set oracle.

    ok is true iff the walk is a single cycle visiting every block
    exactly once.  Purely diagnostic; never raises on a bad chain.
    """
    try:
        succ = read_successors(chain).tolist()
    except ValueError:
        return {"cycle_length": 0, "distinct_blocks": 0, "ok": False}
    n = chain.num_blocks
    visited = bytearray(n)
    cur = 0
    length = 0
    distinct = 0
    while True:
        if not visited[cur]:
            visited[cur] = 1
            distinct += 1
        nxt = succ[cur]
        length += 1
        cur = nxt
        if cur == 0 or length > n:
            break
    ok = length == n and distinct == n
    return {"cycle_length": length, "distinct_blocks": distinct, "ok": ok}


def traverse(chain: PointerChain, rounds: int, flush_each: bool = False,
             strict_fence: bool = True) -> int:
    """Execute rounds x num_blocks dependent dereferences; returns hops.

    Each load's address is the previous load's value, so the hardware
    cannot overlap hops.  The cursor ends back at block 0 (cycle
    property), which callers may rely on between rounds.
    """
    hops = rounds * chain.num_blocks
    if hops == 0:
        return 0
    if kernels.HAVE_X86:
        end = kernels.chase(chain.start_addr, hops, int(flush_each), int(strict_fence))
    else:
        end = _traverse_portable(chain, hops)
    if end != chain.start_addr:
        raise RuntimeError("traversal did not return to the start block")
    return hops


def _traverse_portable(chain: PointerChain, hops: int) -> int:
    u64 = chain.region.view64()
    addr = chain.start_addr
    for _ in range(hops):
        addr = int(u64[(addr - chain.region.addr) // 8])
    return addr
