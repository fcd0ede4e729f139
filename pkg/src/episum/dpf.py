"""(2,1)-distributed point functions over power-of-two domains.

A pair of keys compresses a one-hot bit vector of length N: the XOR of the
two parties' full-domain expansions is 1 exactly at the target index. The
construction is the classic seed-tree with a correction word per level and
early termination once a node covers LAMBDA indices, so the tree has
log2(N/LAMBDA) levels and each leaf emits a 128-bit block directly.

Core key size is (LAMBDA+2)*log2(N/LAMBDA) + 2*LAMBDA bits: a 128-bit root
seed, one (128+2)-bit correction word per level, and a 128-bit final
correction block.

The PRG is fixed-key AES in a Matyas-Meyer-Oseas arrangement
(E_K(s) ^ s with three fixed keys for left child, right child, and leaf
conversion), which lets full-domain expansion run as a handful of batched
AES calls per level.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .crypto import LAMBDA

KEY_VERSION = 1
HEADER_BITS = 24  # version byte, depth byte, party byte; padding is framing

_LOG_LAMBDA = 7


def _fixed_encryptor(tag: int):
    key = bytes([tag]) * 16
    return Cipher(algorithms.AES(key), modes.ECB()).encryptor()


_ENC_L = _fixed_encryptor(0x11)
_ENC_R = _fixed_encryptor(0x22)
_ENC_C = _fixed_encryptor(0x33)


def _expand(seeds: np.ndarray):
    """PRG step: (n,16) seeds -> left/right child seeds and t bits.

    The t bit is the low bit of the raw child block and is cleared from the
    returned seed so seed and t occupy disjoint bits.
    """
    data = seeds.tobytes()
    left = np.frombuffer(_ENC_L.update(data), dtype=np.uint8).reshape(seeds.shape) ^ seeds
    right = np.frombuffer(_ENC_R.update(data), dtype=np.uint8).reshape(seeds.shape) ^ seeds
    t_l = left[..., 15] & 1
    t_r = right[..., 15] & 1
    left[..., 15] &= 0xFE
    right[..., 15] &= 0xFE
    return left, t_l, right, t_r


def _convert(seeds: np.ndarray) -> np.ndarray:
    """Leaf conversion: rerandomize the final seed into a full 128-bit block."""
    data = seeds.tobytes()
    return np.frombuffer(_ENC_C.update(data), dtype=np.uint8).reshape(seeds.shape) ^ seeds


def _check_domain(domain_size: int) -> int:
    if domain_size < LAMBDA:
        raise ValueError(f"domain size must be >= {LAMBDA}")
    if domain_size & (domain_size - 1):
        raise ValueError("domain size must be a power of two")
    return domain_size.bit_length() - 1 - _LOG_LAMBDA


def key_size_bits(domain_size: int) -> int:
    """Closed-form core key size in bits for a domain of ``domain_size``."""
    depth = _check_domain(domain_size)
    return (LAMBDA + 2) * depth + 2 * LAMBDA


@dataclass(frozen=True)
class PointSpec:
    """Target of the point function: one-hot at ``alpha`` over ``domain_size``."""

    alpha: int
    domain_size: int
    beta: int = 1

    def __post_init__(self):
        _check_domain(self.domain_size)
        if not 0 <= self.alpha < self.domain_size:
            raise ValueError("alpha out of range")
        if self.beta != 1:
            raise ValueError("only single-bit payloads are supported")


class DpfKeyBatch:
    """Column-major bundle of one party's keys for many points at once.

    Generation and full-domain expansion vectorize across the batch; this is
    the representation the PIR servers work with.
    """

    def __init__(self, party, domain_size, seeds, cw_sigma, cw_t, final_cw):
        self.party = party
        self.domain_size = domain_size
        self.seeds = seeds          # (n, 16) uint8
        self.cw_sigma = cw_sigma    # (n, depth, 16) uint8
        self.cw_t = cw_t            # (n, depth, 2) uint8
        self.final_cw = final_cw    # (n, 16) uint8

    def __len__(self):
        return self.seeds.shape[0]

    @property
    def depth(self) -> int:
        return self.cw_sigma.shape[1]

    def key(self, i: int) -> "DpfKey":
        return DpfKey(
            party=self.party,
            domain_size=self.domain_size,
            seed=self.seeds[i].tobytes(),
            levels=[
                (self.cw_sigma[i, d].tobytes(), int(self.cw_t[i, d, 0]), int(self.cw_t[i, d, 1]))
                for d in range(self.depth)
            ],
            final_correction=self.final_cw[i].tobytes(),
        )

    @staticmethod
    def from_keys(keys: list["DpfKey"]) -> "DpfKeyBatch":
        n = len(keys)
        depth = len(keys[0].levels)
        seeds = np.frombuffer(b"".join(k.seed for k in keys), dtype=np.uint8).reshape(n, 16)
        cw_sigma = np.frombuffer(
            b"".join(sig for k in keys for sig, _, _ in k.levels), dtype=np.uint8
        ).reshape(n, depth, 16)
        cw_t = np.array(
            [[(tl, tr) for _, tl, tr in k.levels] for k in keys], dtype=np.uint8
        ).reshape(n, depth, 2)
        final = np.frombuffer(
            b"".join(k.final_correction for k in keys), dtype=np.uint8
        ).reshape(n, 16)
        return DpfKeyBatch(
            keys[0].party, keys[0].domain_size, seeds.copy(), cw_sigma.copy(), cw_t, final.copy()
        )


@dataclass(frozen=True)
class DpfKey:
    """One party's key: root seed, per-level correction words, final block."""

    party: int                  # 1 or 2; fixes the root t bit to party-1
    domain_size: int
    seed: bytes
    levels: list[tuple[bytes, int, int]]
    final_correction: bytes

    def core_size_bits(self) -> int:
        return (LAMBDA + 2) * len(self.levels) + 2 * LAMBDA

    def serialized_bits(self) -> int:
        """Exact bit content on the wire: fixed header plus the core.

        ``to_bytes`` pads the trailing t-bit field to a byte boundary; that
        padding is transport framing, not key material.
        """
        return HEADER_BITS + self.core_size_bits()

    def to_bytes(self) -> bytes:
        depth = len(self.levels)
        out = bytearray([KEY_VERSION, depth, self.party])
        out += self.seed
        for sigma, _, _ in self.levels:
            out += sigma
        out += self.final_correction
        # t-correction bits, two per level, MSB-first within each byte
        acc = 0
        nbits = 0
        for _, t_l, t_r in self.levels:
            acc = (acc << 2) | (t_l << 1) | t_r
            nbits += 2
        pad = (-nbits) % 8
        acc <<= pad
        out += acc.to_bytes((nbits + pad) // 8, "big")
        return bytes(out)

    @staticmethod
    def from_bytes(data: bytes) -> "DpfKey":
        if data[0] != KEY_VERSION:
            raise ValueError(f"unsupported key version {data[0]}")
        depth, party = data[1], data[2]
        off = 3
        seed = data[off : off + 16]
        off += 16
        sigmas = [data[off + 16 * i : off + 16 * (i + 1)] for i in range(depth)]
        off += 16 * depth
        final = data[off : off + 16]
        off += 16
        tbytes = data[off : off + (2 * depth + 7) // 8]
        acc = int.from_bytes(tbytes, "big") >> ((-2 * depth) % 8)
        levels = []
        for i in range(depth):
            shift = 2 * (depth - 1 - i)
            levels.append((sigmas[i], (acc >> (shift + 1)) & 1, (acc >> shift) & 1))
        return DpfKey(
            party=party,
            domain_size=LAMBDA << depth,
            seed=seed,
            levels=levels,
            final_correction=final,
        )


def gen_batch(alphas: np.ndarray, domain_size: int, rng=None) -> tuple[DpfKeyBatch, DpfKeyBatch]:
    """Generate key pairs for many point functions in one vectorized pass."""
    depth = _check_domain(domain_size)
    alphas = np.asarray(alphas, dtype=np.int64)
    if alphas.ndim != 1:
        raise ValueError("alphas must be one-dimensional")
    if len(alphas) and (alphas.min() < 0 or alphas.max() >= domain_size):
        raise ValueError("alpha out of range")
    n = len(alphas)
    raw = rng.bytes(32 * n) if rng is not None else os.urandom(32 * n)
    seeds = np.frombuffer(raw, dtype=np.uint8).reshape(2, n, 16).copy()
    leaf = alphas >> _LOG_LAMBDA
    inner = (alphas & (LAMBDA - 1)).astype(np.int64)

    s1, s2 = seeds[0], seeds[1]
    t1 = np.zeros(n, dtype=np.uint8)
    t2 = np.ones(n, dtype=np.uint8)
    cw_sigma = np.empty((n, depth, 16), dtype=np.uint8)
    cw_t = np.empty((n, depth, 2), dtype=np.uint8)

    for lvl in range(depth):
        bit = ((leaf >> (depth - 1 - lvl)) & 1).astype(np.uint8)
        l1, tl1, r1, tr1 = _expand(s1)
        l2, tl2, r2, tr2 = _expand(s2)
        # correction seed comes from the lose side (the path not taken)
        keep_r = bit[:, None].astype(bool)
        sigma = np.where(keep_r, l1 ^ l2, r1 ^ r2)
        t_cw_l = tl1 ^ tl2 ^ bit ^ 1
        t_cw_r = tr1 ^ tr2 ^ bit
        cw_sigma[:, lvl] = sigma
        cw_t[:, lvl, 0] = t_cw_l
        cw_t[:, lvl, 1] = t_cw_r
        # each party applies the correction to both children iff its t is set,
        # then descends on the keep side
        for s, t, l, tl, r, tr in ((s1, t1, l1, tl1, r1, tr1), (s2, t2, l2, tl2, r2, tr2)):
            m = t[:, None].astype(bool)
            l_c = np.where(m, l ^ sigma, l)
            r_c = np.where(m, r ^ sigma, r)
            tl_c = tl ^ (t & t_cw_l)
            tr_c = tr ^ (t & t_cw_r)
            s[:] = np.where(keep_r, r_c, l_c)
            t[:] = np.where(bit.astype(bool), tr_c, tl_c)

    one_hot = np.zeros((n, 16), dtype=np.uint8)
    if n:
        one_hot[np.arange(n), inner >> 3] = (1 << (7 - (inner & 7))).astype(np.uint8)
    final_cw = _convert(s1) ^ _convert(s2) ^ one_hot

    # s1/s2 were mutated in place during tree descent; reload root seeds
    roots = np.frombuffer(raw, dtype=np.uint8).reshape(2, n, 16)
    k1 = DpfKeyBatch(1, domain_size, roots[0].copy(), cw_sigma, cw_t, final_cw)
    k2 = DpfKeyBatch(2, domain_size, roots[1].copy(), cw_sigma.copy(), cw_t.copy(), final_cw.copy())
    return k1, k2


def gen(spec: PointSpec, rng=None) -> tuple[DpfKey, DpfKey]:
    """Key pair for a single point function."""
    b1, b2 = gen_batch(np.array([spec.alpha]), spec.domain_size, rng)
    return b1.key(0), b2.key(0)


def eval_full_batch(batch: DpfKeyBatch) -> np.ndarray:
    """Full-domain expansion of every key in the batch.

    Returns packed bit shares, shape (n, domain_size/8) uint8; bit j of the
    domain is the MSB-first j-th bit of the row (np.unpackbits order).
    """
    n = len(batch)
    depth = batch.depth
    s = batch.seeds.reshape(n, 1, 16).copy()
    t = np.full((n, 1), batch.party - 1, dtype=np.uint8)
    for lvl in range(depth):
        nodes = s.shape[1]
        l, t_l, r, t_r = _expand(s.reshape(-1, 16))
        l = l.reshape(n, nodes, 16)
        r = r.reshape(n, nodes, 16)
        t_l = t_l.reshape(n, nodes)
        t_r = t_r.reshape(n, nodes)
        m = t.astype(bool)[:, :, None]
        sigma = batch.cw_sigma[:, lvl][:, None, :]
        l = np.where(m, l ^ sigma, l)
        r = np.where(m, r ^ sigma, r)
        t_l = t_l ^ (t & batch.cw_t[:, lvl, 0][:, None])
        t_r = t_r ^ (t & batch.cw_t[:, lvl, 1][:, None])
        s = np.empty((n, 2 * nodes, 16), dtype=np.uint8)
        s[:, 0::2] = l
        s[:, 1::2] = r
        t = np.empty((n, 2 * nodes), dtype=np.uint8)
        t[:, 0::2] = t_l
        t[:, 1::2] = t_r
    leaves = s.shape[1]
    blocks = _convert(s.reshape(-1, 16)).reshape(n, leaves, 16)
    blocks ^= t[:, :, None] * batch.final_cw[:, None, :]
    return blocks.reshape(n, leaves * 16)


def eval_full(key: DpfKey) -> np.ndarray:
    """This party's share of the one-hot vector, as 0/1 bytes of length N."""
    packed = eval_full_batch(DpfKeyBatch.from_keys([key]))
    return np.unpackbits(packed[0])


def eval_point(key: DpfKey, x: int) -> int:
    """Share bit at a single position, by walking one root-to-leaf path."""
    if not 0 <= x < key.domain_size:
        raise ValueError("x out of range")
    depth = len(key.levels)
    leaf = x >> _LOG_LAMBDA
    s = np.frombuffer(key.seed, dtype=np.uint8).reshape(1, 16).copy()
    t = key.party - 1
    for lvl in range(depth):
        bit = (leaf >> (depth - 1 - lvl)) & 1
        l, t_l, r, t_r = _expand(s)
        sigma, t_cw_l, t_cw_r = key.levels[lvl]
        child = r if bit else l
        if t:
            child = child ^ np.frombuffer(sigma, dtype=np.uint8)
        s = child.reshape(1, 16)
        t = (t_r[0] if bit else t_l[0]) ^ (t & (t_cw_r if bit else t_cw_l))
        t = int(t)
    block = _convert(s)[0]
    if t:
        block = block ^ np.frombuffer(key.final_correction, dtype=np.uint8)
    inner = x & (LAMBDA - 1)
    return (int(block[inner >> 3]) >> (7 - (inner & 7))) & 1
