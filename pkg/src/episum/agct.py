"""Arithmetic garbled cuckoo table: the exit node's PIR database.

Each (address, message) pair occupies two bins chosen by seeded tabulation
hashes; the two bin values are an additive two-share encoding, so
bins[H1(a)] + bins[H2(a)] mod 2^128 reconstructs the message. Insertion is
solved globally on the cuckoo graph (bins are vertices, pairs are edges):
every acyclic component is satisfiable by fixing one free share at the root
and propagating, while any cycle - including the degenerate H1(a) == H2(a)
case - is a double collision that forces a reseed of both hash functions.

After a successful assignment every untouched bin is filled with a
PRF-uniform block so the finalized table carries no occupancy pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crypto import BLOCK_BITS, BLOCK_MASK, prf_stream

DEFAULT_EXPANSION = 10
DEFAULT_RETRY_CAP = 32
MIN_BINS = 128  # keeps any table usable as a PIR domain

_DUMP_VERSION = 1
_DUMP_MAGIC = b"AGC"


class BuildFailure(Exception):
    """Raised when the table cannot be built within the reseed cap."""


@dataclass(frozen=True)
class BinPositions:
    first: int
    second: int


class TabulationHash:
    """Seeded tabulation hash over 16-byte keys, one lookup table per byte."""

    def __init__(self, seed: bytes, tweak: int):
        stream = prf_stream(seed, tweak, 16 * 256 * 8)
        self.tables = np.frombuffer(stream, dtype="<u8").reshape(16, 256)

    def __call__(self, key16: bytes) -> int:
        t = self.tables
        acc = 0
        for i in range(16):
            acc ^= int(t[i, key16[i]])
        return acc

    def hash_many(self, keys: np.ndarray) -> np.ndarray:
        """Vectorized variant; ``keys`` is (n, 16) uint8."""
        acc = np.zeros(len(keys), dtype=np.uint64)
        for i in range(16):
            acc ^= self.tables[i, keys[:, i]]
        return acc


def _next_pow2(n: int) -> int:
    return 1 << max(n - 1, 1).bit_length() if n > 1 else 1


class AgctDatabase:
    """Finalized table: N blocks in Z_{2^128} plus the hash seeds needed by
    queriers to recompute bin positions. Immutable once built."""

    def __init__(self, n_bins, hash_seed, attempt, lo, hi, occupancy, n_items, expansion, reseeds):
        self.n_bins = n_bins
        self.hash_seed = hash_seed      # 16-byte seed; both hashes derive from it
        self.attempt = attempt          # reseed counter baked into the hashes
        self.lo = lo                    # (N,) uint64, low limb of each block
        self.hi = hi                    # (N,) uint64, high limb
        self.occupancy = occupancy      # bool array; True where a share was assigned
        self.n_items = n_items
        self.expansion = expansion
        self.reseeds = reseeds
        self._h1 = TabulationHash(hash_seed, 2 * attempt)
        self._h2 = TabulationHash(hash_seed, 2 * attempt + 1)

    def block(self, j: int) -> int:
        return int(self.lo[j]) | (int(self.hi[j]) << 64)

    def positions(self, address) -> BinPositions:
        key = address.to_bytes16() if hasattr(address, "to_bytes16") else bytes(address)
        return BinPositions(self._h1(key) % self.n_bins, self._h2(key) % self.n_bins)

    def positions_many(self, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = np.uint64(self.n_bins)
        return self._h1.hash_many(keys) % n, self._h2.hash_many(keys) % n

    def lookup_sum(self, address) -> int:
        """Test oracle: direct two-bin reconstruction, bypassing PIR."""
        pos = self.positions(address)
        return (self.block(pos.first) + self.block(pos.second)) & BLOCK_MASK

    def dump(self) -> bytes:
        """Wire format for the server-to-server database transfer."""
        header = (
            _DUMP_MAGIC
            + bytes([_DUMP_VERSION])
            + self.n_bins.to_bytes(4, "little")
            + BLOCK_BITS.to_bytes(2, "little")
            + self.hash_seed
            + self.attempt.to_bytes(4, "little")
        )
        body = np.empty((self.n_bins, 2), dtype="<u8")
        body[:, 0] = self.lo
        body[:, 1] = self.hi
        return header + body.tobytes()

    @staticmethod
    def load(data: bytes) -> "AgctDatabase":
        if data[:3] != _DUMP_MAGIC or data[3] != _DUMP_VERSION:
            raise ValueError("bad database dump header")
        n_bins = int.from_bytes(data[4:8], "little")
        ell = int.from_bytes(data[8:10], "little")
        if ell != BLOCK_BITS:
            raise ValueError(f"unsupported block width {ell}")
        seed = data[10:26]
        attempt = int.from_bytes(data[26:30], "little")
        body = np.frombuffer(data[30:], dtype="<u8").reshape(n_bins, 2)
        return AgctDatabase(
            n_bins=n_bins,
            hash_seed=seed,
            attempt=attempt,
            lo=body[:, 0].copy(),
            hi=body[:, 1].copy(),
            occupancy=np.zeros(n_bins, dtype=bool),
            n_items=0,
            expansion=0,
            reseeds=attempt,
        )

    def dump_bits(self) -> int:
        return len(self.dump()) * 8


def build(
    pairs,
    expansion: int = DEFAULT_EXPANSION,
    seed: bytes | None = None,
    retry_cap: int = DEFAULT_RETRY_CAP,
    n_bins: int | None = None,
) -> AgctDatabase:
    """Build a table holding ``pairs`` of (address, message in Z_{2^128}).

    Addresses must be distinct (the exit node deduplicates upstream). The
    bin count is expansion * n rounded up to a power of two, never below
    MIN_BINS. Raises BuildFailure if every reseed attempt hits a cycle.
    """
    pairs = list(pairs)
    keys = [a.to_bytes16() if hasattr(a, "to_bytes16") else bytes(a) for a, _ in pairs]
    if len(set(keys)) != len(keys):
        raise ValueError("addresses must be distinct")
    messages = [m & BLOCK_MASK for _, m in pairs]
    n = len(pairs)
    if n_bins is None:
        n_bins = max(_next_pow2(expansion * n), MIN_BINS)
    if seed is None:
        import os

        seed = os.urandom(16)

    kb = np.frombuffer(b"".join(keys), dtype=np.uint8).reshape(n, 16) if n else None
    for attempt in range(retry_cap + 1):
        h1 = TabulationHash(seed, 2 * attempt)
        h2 = TabulationHash(seed, 2 * attempt + 1)
        if n:
            u = (h1.hash_many(kb) % np.uint64(n_bins)).astype(np.int64)
            v = (h2.hash_many(kb) % np.uint64(n_bins)).astype(np.int64)
        else:
            u = v = np.zeros(0, dtype=np.int64)
        assignment = _solve(u, v, messages, n_bins, seed, attempt)
        if assignment is not None:
            lo, hi, occupancy = assignment
            return AgctDatabase(
                n_bins=n_bins,
                hash_seed=seed,
                attempt=attempt,
                lo=lo,
                hi=hi,
                occupancy=occupancy,
                n_items=n,
                expansion=expansion,
                reseeds=attempt,
            )
    raise BuildFailure(
        f"cuckoo graph kept a cycle after {retry_cap} reseeds "
        f"(n={n}, bins={n_bins}); increase expansion"
    )


def _solve(u, v, messages, n_bins, seed, attempt):
    """Assign shares over the cuckoo graph, or None if any component cycles."""
    n = len(messages)
    if np.any(u == v):
        return None
    # union-find cycle detection: a component is solvable iff it is a tree
    parent = {}

    def find(x):
        root = x
        while parent.get(root, root) != root:
            root = parent[root]
        while parent.get(x, x) != x:
            parent[x], x = root, parent[x]
        return root

    for a, b in zip(u.tolist(), v.tolist()):
        ra, rb = find(a), find(b)
        if ra == rb:
            return None
        parent[ra] = rb

    lo = np.empty(n_bins, dtype=np.uint64)
    hi = np.empty(n_bins, dtype=np.uint64)
    fill = np.frombuffer(prf_stream(seed, 2 * attempt + (1 << 32), 16 * n_bins), dtype="<u8")
    lo[:] = fill[0::2]
    hi[:] = fill[1::2]
    occupancy = np.zeros(n_bins, dtype=bool)

    # per-component spanning-tree propagation; the PRF fill doubles as the
    # root's free share, so assigned and empty bins share one distribution
    adj: dict[int, list[tuple[int, int]]] = {}
    for idx in range(n):
        adj.setdefault(int(u[idx]), []).append((int(v[idx]), idx))
        adj.setdefault(int(v[idx]), []).append((int(u[idx]), idx))
    seen = set()
    for start in sorted(adj):
        if start in seen:
            continue
        seen.add(start)
        occupancy[start] = True
        stack = [start]
        while stack:
            x = stack.pop()
            dx = int(lo[x]) | (int(hi[x]) << 64)
            for y, idx in adj[x]:
                if y in seen:
                    continue
                seen.add(y)
                occupancy[y] = True
                dy = (messages[idx] - dx) % (1 << BLOCK_BITS)
                lo[y] = dy & 0xFFFFFFFFFFFFFFFF
                hi[y] = dy >> 64
                stack.append(y)
    return lo, hi, occupancy
