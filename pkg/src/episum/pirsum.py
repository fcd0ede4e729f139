"""Sum-retrieval PIR over a replicated block database.

Three constructions with one contract: a client holding tau indices learns
exactly the sum of the addressed blocks mod 2^128 and nothing else, while
two database servers plus a helper detect any repeated index.

* naive  - the client secret-shares each one-hot query vector directly
           (PRF leg with server 1, explicit N-bit leg to server 2).
* fss    - query vectors travel compressed as DPF key pairs; upload is
           2*tau*((lambda+2)*log2(N/lambda) + 2*lambda) bits.
* helper - the client sends only shifted indices q' = q - shift to the
           helper, who runs the DPF client role; the servers undo the shift
           with a right cyclic rotation of their expanded shares. Client
           upload collapses to tau*log2(N) bits.

Per query the servers answer with XOR legs of the mask-shifted block
D[q] + m_q, where the tau masks are PRF-correlated to sum to zero, so the
per-query values are uniform and only the client-side total is meaningful.
Distinctness is enforced before any response leaves the servers: they XOR
all tau share vectors, apply a jointly derived permutation, and let the
helper count ones in the reconstruction (tau ones iff all queries distinct).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import dpf
from .crypto import BLOCK_BITS, LAMBDA, PrfKeyRing, derive_permutation_fast, sample_masks
from .ledger import Bus

try:
    from numba import njit

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover
    _HAVE_NUMBA = False

_CHUNK = 32  # queries expanded/selected per pass; bounds transient memory


class PirAborted(Exception):
    """The servers rejected the query set; the client receives no output."""


def _inv(base: int | None, purpose: int) -> int | None:
    """Domain-separate PRF invocations within one session: the same scope key
    serves masks, permutations, query legs, and shifts, which must not share
    a keystream."""
    return None if base is None else 4 * base + purpose


@dataclass(frozen=True)
class QuerySet:
    indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.indices) < 1:
            raise ValueError("query set must be non-empty")


@dataclass
class MaskedDb:
    """Lazy view of base[j] + mask; blocks are computed on access and the
    shifted database is never materialized."""

    lo: np.ndarray
    hi: np.ndarray
    mask: int

    def block(self, j: int) -> int:
        base = int(self.lo[j]) | (int(self.hi[j]) << 64)
        return (base + self.mask) & ((1 << BLOCK_BITS) - 1)


def to_limbs(db) -> tuple[np.ndarray, np.ndarray, int]:
    """Accept an AgctDatabase or a plain block list; return uint64 limb pair."""
    if hasattr(db, "lo") and hasattr(db, "hi"):
        return db.lo, db.hi, db.n_bins
    blocks = list(db)
    lo = np.array([b & 0xFFFFFFFFFFFFFFFF for b in blocks], dtype=np.uint64)
    hi = np.array([b >> 64 for b in blocks], dtype=np.uint64)
    return lo, hi, len(blocks)


def pad_domain(n: int) -> int:
    """DPF domain: next power of two, at least LAMBDA."""
    n = max(n, LAMBDA)
    return 1 << (n - 1).bit_length()


if _HAVE_NUMBA:

    @njit(cache=True)
    def _legs_kernel(bits, lo, hi, m_lo, m_hi, out_lo, out_hi):  # pragma: no cover
        for k in range(bits.shape[0]):
            acc_lo = np.uint64(0)
            acc_hi = np.uint64(0)
            ml = m_lo[k]
            mh = m_hi[k]
            for j in range(bits.shape[1]):
                if bits[k, j]:
                    t = lo[j] + ml
                    c = np.uint64(1) if t < ml else np.uint64(0)
                    th = hi[j] + mh + c
                    acc_lo ^= t
                    acc_hi ^= th
            out_lo[k] = acc_lo
            out_hi[k] = acc_hi


def _legs_numpy(bits, lo, hi, m_lo, m_hi, out_lo, out_hi):
    for k in range(bits.shape[0]):
        sel = bits[k].astype(bool)
        s_lo = lo[sel] + m_lo[k]
        carry = (s_lo < m_lo[k]).astype(np.uint64)
        s_hi = hi[sel] + m_hi[k] + carry
        out_lo[k] = np.bitwise_xor.reduce(s_lo) if s_lo.size else np.uint64(0)
        out_hi[k] = np.bitwise_xor.reduce(s_hi) if s_hi.size else np.uint64(0)


def _server_legs(bits: np.ndarray, lo: np.ndarray, hi: np.ndarray, masks: list[int]):
    """XOR-select masked blocks: leg_k = XOR_{j: bits[k,j]} (D[j] + m_k)."""
    n_pad = bits.shape[1]
    if n_pad > lo.shape[0]:
        pad = n_pad - lo.shape[0]
        lo = np.concatenate([lo, np.zeros(pad, dtype=np.uint64)])
        hi = np.concatenate([hi, np.zeros(pad, dtype=np.uint64)])
    m_lo = np.array([m & 0xFFFFFFFFFFFFFFFF for m in masks], dtype=np.uint64)
    m_hi = np.array([m >> 64 for m in masks], dtype=np.uint64)
    out_lo = np.empty(len(masks), dtype=np.uint64)
    out_hi = np.empty(len(masks), dtype=np.uint64)
    kern = _legs_kernel if _HAVE_NUMBA else _legs_numpy
    kern(np.ascontiguousarray(bits), lo, hi, m_lo, m_hi, out_lo, out_hi)
    return [int(out_lo[k]) | (int(out_hi[k]) << 64) for k in range(len(masks))]


def combine_legs(rows: np.ndarray) -> np.ndarray:
    """XOR of all share vectors held by one server (verification input)."""
    return np.bitwise_xor.reduce(rows.astype(np.uint8), axis=0)


def verify_distinct(
    leg1: np.ndarray,
    leg2: np.ndarray,
    ring: PrfKeyRing,
    tau: int,
    bus: Bus | None = None,
    session: str = "verify",
    invocation: int | None = None,
) -> bool:
    """Helper-side distinctness check on the combined share vectors.

    The servers permute their legs under a jointly derived permutation and
    send them to the helper, who reconstructs and accepts iff the combined
    vector has exactly tau ones. The helper sees only the permuted vector.
    """
    n = len(leg1)
    if len(leg2) != n:
        raise ValueError("leg length mismatch")
    pi = derive_permutation_fast(ring, ("S1", "S2"), n, _inv(invocation, 1))
    p1 = np.asarray(leg1, dtype=np.uint8)[pi]
    p2 = np.asarray(leg2, dtype=np.uint8)[pi]
    if bus is not None:
        bus.send(session, "S1", "S0", "verify-leg", payload_bits=n)
        bus.send(session, "S2", "S0", "verify-leg", payload_bits=n)
        bus.send(session, "S0", "S1", "verify-result", payload_bits=1)
        bus.send(session, "S0", "S2", "verify-result", payload_bits=1)
    return int((p1 ^ p2).sum()) == tau


def verify_shared_shift(q_primes, tau: int) -> bool:
    """Leakage-optimized check for the single-shift variant: with one common
    shift, distinct queries force distinct shifted indices, so the helper
    just tests pairwise distinctness. It learns the pairwise differences of
    the client's true indices."""
    if len(q_primes) != tau:
        raise ValueError("expected tau shifted queries")
    return len(set(q_primes)) == tau


def partition_positions(positions) -> list[list[int]]:
    """Split a position multiset into the minimum number of duplicate-free
    batches: batch k collects the k-th occurrence of every distinct value."""
    remaining = Counter(positions)
    batches = []
    while remaining:
        batch = sorted(remaining)
        batches.append(batch)
        for x in batch:
            remaining[x] -= 1
            if not remaining[x]:
                del remaining[x]
    return batches


def _client_sum(y_legs_1: list[int], y_legs_2: list[int]) -> int:
    total = 0
    for a, b in zip(y_legs_1, y_legs_2):
        total += a ^ b
    return total & ((1 << BLOCK_BITS) - 1)


def _check_queries(queries, n: int):
    qs = list(queries.indices if isinstance(queries, QuerySet) else queries)
    if not qs:
        raise ValueError("query set must be non-empty")
    if any(not 0 <= q < n for q in qs):
        raise ValueError("query index out of range")
    return qs


def _respond(bus, session, client, masks, b1, b2, lo, hi):
    y1 = _server_legs(b1, lo, hi, masks)
    y2 = _server_legs(b2, lo, hi, masks)
    if bus is not None:
        tau = len(masks)
        bus.send(session, "S1", client, "response", payload_bits=tau * BLOCK_BITS)
        bus.send(session, "S2", client, "response", payload_bits=tau * BLOCK_BITS)
    return _client_sum(y1, y2)


def pirsum_naive(
    queries,
    db,
    ring: PrfKeyRing,
    bus: Bus | None = None,
    session: str = "naive",
    client: str = "P",
    invocation: int | None = None,
    forced_vectors: np.ndarray | None = None,
) -> int:
    """Linear-summation construction: query vectors shared directly.

    The helper receives every permuted vector individually and checks that
    each is one-hot and that all are distinct (cost 2*tau*N + 2 bits).
    """
    lo, hi, n = to_limbs(db)
    qs = _check_queries(queries, n)
    tau = len(qs)
    nbytes = (n + 7) // 8

    if forced_vectors is not None:
        b = np.asarray(forced_vectors, dtype=np.uint8)
    else:
        b = np.zeros((tau, n), dtype=np.uint8)
        b[np.arange(tau), qs] = 1
    stream = (
        ring.sample(("P", "S1"), tau * nbytes)
        if invocation is None
        else ring.sample_at(("P", "S1"), _inv(invocation, 2), tau * nbytes)
    )
    b1 = np.unpackbits(np.frombuffer(stream, dtype=np.uint8).reshape(tau, nbytes), axis=1)[:, :n]
    b2 = b ^ b1
    if bus is not None:
        bus.send(session, client, "S2", "query-leg", payload_bits=tau * n)

    masks = sample_masks(ring, ("S1", "S2"), tau, _inv(invocation, 0))

    # per-vector verification at the helper
    pi = derive_permutation_fast(ring, ("S1", "S2"), n, _inv(invocation, 1))
    if bus is not None:
        bus.send(session, "S1", "S0", "verify-legs", payload_bits=tau * n)
        bus.send(session, "S2", "S0", "verify-legs", payload_bits=tau * n)
        bus.send(session, "S0", "S1", "verify-result", payload_bits=1)
        bus.send(session, "S0", "S2", "verify-result", payload_bits=1)
    recon = (b1 ^ b2)[:, pi]
    if not ((recon.sum(axis=1) == 1).all() and len({r.tobytes() for r in recon}) == tau):
        raise PirAborted("helper rejected the query vectors")

    return _respond(bus, session, client, masks, b1, b2, lo, hi)


def _expand_rolled(batch: dpf.DpfKeyBatch, shifts=None) -> np.ndarray:
    """Expand a key batch to unpacked share bits, optionally rotating each
    row right by its shift (the helper construction's correction step)."""
    out = np.empty((len(batch), batch.domain_size), dtype=np.uint8)
    for start in range(0, len(batch), _CHUNK):
        sub = dpf.DpfKeyBatch(
            batch.party,
            batch.domain_size,
            batch.seeds[start : start + _CHUNK],
            batch.cw_sigma[start : start + _CHUNK],
            batch.cw_t[start : start + _CHUNK],
            batch.final_cw[start : start + _CHUNK],
        )
        bits = np.unpackbits(dpf.eval_full_batch(sub), axis=1)
        if shifts is not None:
            for i in range(bits.shape[0]):
                s = int(shifts[start + i])
                if s:
                    bits[i] = np.roll(bits[i], s)
        out[start : start + bits.shape[0]] = bits
    return out


def pirsum_fss(
    queries,
    db,
    ring: PrfKeyRing,
    bus: Bus | None = None,
    session: str = "fss",
    client: str = "P",
    rng=None,
    invocation: int | None = None,
    well_formed: bool = True,
    forced_alphas=None,
) -> int:
    """DPF-compressed construction: one key pair per query.

    ``well_formed`` stands in for the interactive key-validity protocol of
    verifiable DPFs (not implemented here); the distinctness check always
    runs. ``forced_alphas`` lets tests model a malicious client whose keys
    encode different points than its claimed queries.
    """
    lo, hi, n = to_limbs(db)
    qs = _check_queries(queries, n)
    tau = len(qs)
    n_pad = pad_domain(n)

    alphas = np.asarray(forced_alphas if forced_alphas is not None else qs, dtype=np.int64)
    k1, k2 = dpf.gen_batch(alphas, n_pad, rng)
    key_bits = dpf.key_size_bits(n_pad)
    if bus is not None:
        bus.send(session, client, "S1", "dpf-keys", payload_bits=tau * key_bits)
        bus.send(session, client, "S2", "dpf-keys", payload_bits=tau * key_bits)

    if not well_formed:
        raise PirAborted("DPF key well-formedness check failed")

    b1 = _expand_rolled(k1)
    b2 = _expand_rolled(k2)
    masks = sample_masks(ring, ("S1", "S2"), tau, _inv(invocation, 0))

    if not verify_distinct(
        combine_legs(b1), combine_legs(b2), ring, tau, bus, session, invocation
    ):
        raise PirAborted("combined share vector does not have tau ones")

    return _respond(bus, session, client, masks, b1, b2, lo, hi)


def pirsum_helper(
    queries,
    db,
    ring: PrfKeyRing,
    bus: Bus | None = None,
    session: str = "helper",
    client: str = "P",
    rng=None,
    invocation: int | None = None,
    shared_shift: bool = False,
) -> int:
    """Helper-assisted construction: the client uploads only shifted indices.

    Shift corrections are PRF-correlated between the client and both
    database servers; the helper generates the DPF keys for the shifted
    points and the servers rotate their expanded shares back. With
    ``shared_shift`` one common shift serves all queries and the helper
    checks distinctness of the shifted indices directly instead of running
    the permuted-popcount verification (leaking relative query positions).
    """
    lo, hi, n = to_limbs(db)
    qs = _check_queries(queries, n)
    tau = len(qs)
    n_pad = pad_domain(n)
    qbits = int(math.log2(n_pad))

    nshift = 1 if shared_shift else tau
    stream = (
        ring.sample(("P", "S1", "S2"), nshift * 8)
        if invocation is None
        else ring.sample_at(("P", "S1", "S2"), _inv(invocation, 3), nshift * 8)
    )
    shifts = [int(w) % n_pad for w in np.frombuffer(stream, dtype="<u8")]
    if shared_shift:
        shifts = shifts * tau
    q_primes = [(q - s) % n_pad for q, s in zip(qs, shifts)]
    if bus is not None:
        bus.send(session, client, "S0", "shifted-queries", payload_bits=tau * qbits)

    if shared_shift and not verify_shared_shift(q_primes, tau):
        if bus is not None:
            bus.send(session, "S0", "S1", "verify-result", payload_bits=1)
            bus.send(session, "S0", "S2", "verify-result", payload_bits=1)
        raise PirAborted("helper saw duplicate shifted queries")

    # helper plays the DPF client for the shifted points
    k1, k2 = dpf.gen_batch(np.asarray(q_primes, dtype=np.int64), n_pad, rng)
    key_bits = dpf.key_size_bits(n_pad)
    if bus is not None:
        bus.send(session, "S0", "S1", "dpf-keys", payload_bits=tau * key_bits)
        bus.send(session, "S0", "S2", "dpf-keys", payload_bits=tau * key_bits)

    b1 = _expand_rolled(k1, shifts)
    b2 = _expand_rolled(k2, shifts)
    masks = sample_masks(ring, ("S1", "S2"), tau, _inv(invocation, 0))

    if not shared_shift:
        if not verify_distinct(
            combine_legs(b1), combine_legs(b2), ring, tau, bus, session, invocation
        ):
            raise PirAborted("combined share vector does not have tau ones")

    return _respond(bus, session, client, masks, b1, b2, lo, hi)


CONSTRUCTIONS = {
    "naive": pirsum_naive,
    "fss": pirsum_fss,
    "helper": pirsum_helper,
}


def query_sum(
    positions,
    db,
    ring: PrfKeyRing,
    construction: str = "helper",
    bus: Bus | None = None,
    session: str = "sum",
    client: str = "P",
    rng=None,
    invocation_base: int | None = None,
) -> int:
    """Retrieve the sum over a position multiset, batching around duplicates.

    Cuckoo-table retrieval queries two bins per logical message; when bins
    chain across messages the position multiset can repeat an index, which
    the distinctness check would reject. Each duplicate-free batch runs an
    independent session whose masks cancel on their own, and the client adds
    the partial sums locally.
    """
    batches = partition_positions(positions)
    fn = CONSTRUCTIONS[construction]
    total = 0
    for bi, batch in enumerate(batches):
        kwargs = {}
        if construction != "naive":
            kwargs["rng"] = rng
        inv = None if invocation_base is None else invocation_base + bi
        total += fn(
            batch,
            db,
            ring,
            bus=bus,
            session=f"{session}/b{bi}",
            client=client,
            invocation=inv,
            **kwargs,
        )
    return total & ((1 << BLOCK_BITS) - 1)
