"""Shared-key setup, PRF-based non-interactive sampling, addressing and
blinding hashes, permutation derivation, and public-key primitives.

Parties that hold the same PRF key and invocation counter derive identical
values without communicating; every correlated object in the protocol stack
(mask lists, permutations, shift corrections, share legs) comes from here.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

LAMBDA = 128                      # PRF / key security parameter (bits)
BLOCK_BITS = 128                  # ring element width: values live in Z_{2^128}
BLOCK_BYTES = BLOCK_BITS // 8
BLOCK_MASK = (1 << BLOCK_BITS) - 1
TOKEN_BYTES = 16                  # encounter tokens are 128-bit

PRF_VECTORS_VERSION = 1


class DecryptionError(Exception):
    """Raised when a ciphertext cannot be decrypted under the given key."""


def prf_stream(key: bytes, invocation: int, nbytes: int) -> bytes:
    """AES-128-CTR keystream for one PRF invocation.

    The 128-bit counter block starts at ``invocation << 64`` so streams of
    different invocations never overlap (up to 2^64 blocks each).
    """
    if len(key) != 16:
        raise ValueError("PRF key must be 16 bytes")
    nonce = struct.pack(">QQ", invocation, 0)
    enc = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()
    return enc.update(bytes(nbytes))


def prf_block(key: bytes, invocation: int) -> bytes:
    """First 16-byte block of the invocation's keystream."""
    return prf_stream(key, invocation, 16)


def _scope_id(parties: tuple[str, ...]) -> tuple[str, ...]:
    return tuple(sorted(parties))


class PrfKeyRing:
    """Key material shared among a party set: one key per pair, per triple,
    and one group key, each with a monotonically increasing invocation counter.

    Two ring instances built from the same seed hold identical keys; calling
    ``sample`` on both with equal counters yields byte-identical output.
    Counter-mutating calls must be serialized per key by the caller.
    """

    def __init__(self, parties: tuple[str, ...], seed: bytes):
        self.parties = parties
        self.pairwise_keys: dict[tuple[str, ...], bytes] = {}
        self.triple_keys: dict[tuple[str, ...], bytes] = {}
        for pair in combinations(sorted(parties), 2):
            self.pairwise_keys[pair] = self._derive(seed, "pair", pair)
        for triple in combinations(sorted(parties), 3):
            self.triple_keys[triple] = self._derive(seed, "triple", triple)
        self.group_key = self._derive(seed, "group", tuple(sorted(parties)))
        self.counters: dict[tuple[str, ...], int] = {
            scope: 0
            for scope in (
                list(self.pairwise_keys) + list(self.triple_keys) + [tuple(sorted(parties))]
            )
        }

    @staticmethod
    def _derive(seed: bytes, kind: str, scope: tuple[str, ...]) -> bytes:
        h = hashlib.sha256()
        h.update(seed)
        h.update(kind.encode())
        for p in scope:
            h.update(struct.pack("<I", len(p)))
            h.update(p.encode())
        return h.digest()[:16]

    def key_for(self, scope: tuple[str, ...] | list[str]) -> bytes:
        scope = _scope_id(tuple(scope))
        if len(scope) == 2:
            return self.pairwise_keys[scope]
        if len(scope) == 3 and scope in self.triple_keys:
            return self.triple_keys[scope]
        if scope == tuple(sorted(self.parties)):
            return self.group_key
        raise KeyError(f"no shared key for scope {scope}")

    def sample(self, scope, nbytes: int) -> bytes:
        """Draw ``nbytes`` from the scope's PRF and advance its counter."""
        scope = _scope_id(tuple(scope))
        ctr = self.counters[scope]
        self.counters[scope] = ctr + 1
        return prf_stream(self.key_for(scope), ctr, nbytes)

    def sample_at(self, scope, invocation: int, nbytes: int) -> bytes:
        """Counter-free variant: derive the stream for an explicit invocation.

        Pure; used where concurrent sessions need order-independent
        derivations (the invocation id is fixed by protocol context).
        """
        return prf_stream(self.key_for(tuple(scope)), invocation, nbytes)


def setup_shared_keys(parties, seed: bytes | None = None) -> PrfKeyRing:
    """Establish all pairwise, triple, and group PRF keys for ``parties``.

    With no seed the ring is drawn from the OS RNG; a fixed seed gives a
    reproducible ring (both endpoints of a simulated channel construct the
    same ring rather than running a key exchange).
    """
    parties = tuple(parties)
    if len(parties) < 2:
        raise ValueError("need at least two parties")
    if len(set(parties)) != len(parties):
        raise ValueError("duplicate party ids")
    if seed is None:
        seed = os.urandom(32)
    return PrfKeyRing(parties, seed)


def sample_masks(ring: PrfKeyRing, pair, tau: int, invocation: int | None = None) -> list[int]:
    """``tau`` values in Z_{2^128} whose wrapping sum is zero.

    The first tau-1 masks come from the pair's PRF stream; the last is the
    negated partial sum. Both key holders derive the identical list.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if invocation is None:
        stream = ring.sample(pair, (tau - 1) * BLOCK_BYTES)
    else:
        stream = ring.sample_at(pair, invocation, (tau - 1) * BLOCK_BYTES)
    masks = [
        int.from_bytes(stream[i * BLOCK_BYTES : (i + 1) * BLOCK_BYTES], "little")
        for i in range(tau - 1)
    ]
    masks.append((-sum(masks)) % (1 << BLOCK_BITS))
    return masks


def derive_permutation(ring: PrfKeyRing, scope, n: int, invocation: int | None = None) -> list[int]:
    """Fisher-Yates permutation of [0, n) driven by the scope's PRF stream."""
    if n < 1:
        raise ValueError("n must be >= 1")
    nbytes = 8 * max(n - 1, 1)
    if invocation is None:
        stream = ring.sample(scope, nbytes)
    else:
        stream = ring.sample_at(scope, invocation, nbytes)
    words = np.frombuffer(stream, dtype="<u8")
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(words[n - 1 - i]) % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def derive_permutation_fast(
    ring: PrfKeyRing, scope, n: int, invocation: int | None = None
) -> np.ndarray:
    """Permutation of [0, n) by argsorting a PRF word per index.

    Same determinism and uniformity contract as ``derive_permutation`` (ties
    occur with probability ~n^2/2^64), but vectorized; used on the hot
    verification path where n is the PIR database size.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if invocation is None:
        stream = ring.sample(scope, 8 * n)
    else:
        stream = ring.sample_at(scope, invocation, 8 * n)
    words = np.frombuffer(stream, dtype="<u8")
    return np.argsort(words, kind="stable")


@dataclass(frozen=True)
class Address:
    """Trimmed hash output used to route a message to its receiver."""

    bits: int
    width: int

    def to_bytes16(self) -> bytes:
        return self.bits.to_bytes(16, "big")


def address_width(p: int, ebar: float) -> int:
    """Trimmed address width for a population of p with mean ebar encounters.

    39 + ceil(log2(p*ebar)), capped at the full 128 bits.
    """
    return min(128, 39 + math.ceil(math.log2(p * ebar)))


def _setting_bytes(sim_setting: int) -> bytes:
    return struct.pack(">I", sim_setting)


def make_address(token: bytes, sim_setting: int, width: int = 128) -> Address:
    """Destination address: SHA-256(setting || token) truncated to ``width``.

    Argument order differs from ``make_blind`` so the address is not a
    function of the blind. Input encoding is fixed as a 4-byte big-endian
    setting index followed by the 16-byte token.
    """
    if not 1 <= width <= 256:
        raise ValueError("width out of range")
    digest = hashlib.sha256(_setting_bytes(sim_setting) + token).digest()
    return Address(int.from_bytes(digest, "big") >> (256 - width), width)


def make_blind(token: bytes, sim_setting: int) -> int:
    """Blinding mask: SHA-256(token || setting) reduced into Z_{2^128}."""
    digest = hashlib.sha256(token + _setting_bytes(sim_setting)).digest()
    return int.from_bytes(digest, "big") & BLOCK_MASK


# --- public-key encryption -------------------------------------------------
#
# Hybrid scheme at 128-bit security: X25519 ephemeral key agreement, the
# shared point hashed into an AES-128-GCM key, fixed zero nonce (one message
# per derived key). Wire sizes: public key 32 B, ciphertext for a 16-byte
# plaintext 64 B (32 B ephemeral point + 16 B body + 16 B tag).

PKE_PUBLIC_KEY_BYTES = 32
PKE_CIPHERTEXT_BYTES = 64


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes


def pke_keygen(rng=None) -> KeyPair:
    raw = rng.bytes(32) if rng is not None else os.urandom(32)
    sk = X25519PrivateKey.from_private_bytes(raw)
    return KeyPair(public_key=sk.public_key().public_bytes_raw(), secret_key=raw)


def _pke_session_key(shared: bytes, epk: bytes, pk: bytes) -> bytes:
    return hashlib.sha256(b"episum-pke-v1" + shared + epk + pk).digest()[:16]


def pke_encrypt(public_key: bytes, m: int, rng=None) -> bytes:
    """Encrypt a value in Z_{2^128}; fresh randomness per call."""
    raw = rng.bytes(32) if rng is not None else os.urandom(32)
    esk = X25519PrivateKey.from_private_bytes(raw)
    epk = esk.public_key().public_bytes_raw()
    shared = esk.exchange(X25519PublicKey.from_public_bytes(public_key))
    key = _pke_session_key(shared, epk, public_key)
    body = AESGCM(key).encrypt(bytes(12), m.to_bytes(BLOCK_BYTES, "little"), None)
    return epk + body


def pke_decrypt(secret_key: bytes, ct: bytes) -> int:
    if len(ct) != PKE_CIPHERTEXT_BYTES:
        raise DecryptionError("bad ciphertext length")
    sk = X25519PrivateKey.from_private_bytes(secret_key)
    pk = sk.public_key().public_bytes_raw()
    epk, body = ct[:32], ct[32:]
    try:
        shared = sk.exchange(X25519PublicKey.from_public_bytes(epk))
        key = _pke_session_key(shared, epk, pk)
        pt = AESGCM(key).decrypt(bytes(12), body, None)
    except (InvalidTag, ValueError) as exc:
        raise DecryptionError("ciphertext rejected") from exc
    return int.from_bytes(pt, "little")


# --- signatures ------------------------------------------------------------
#
# Plain Ed25519 for the exit node's endorsement of per-encounter public keys
# (stand-in for hardware-backed attestation, which is out of scope).

SIGNATURE_BYTES = 64


def sign_keygen(rng=None) -> KeyPair:
    raw = rng.bytes(32) if rng is not None else os.urandom(32)
    sk = Ed25519PrivateKey.from_private_bytes(raw)
    return KeyPair(public_key=sk.public_key().public_bytes_raw(), secret_key=raw)


def sign(secret_key: bytes, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(secret_key).sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except InvalidSignature:
        return False


# --- PRF test vectors ------------------------------------------------------

def write_prf_vectors(path, entries: list[tuple[bytes, int]]) -> None:
    """Write the versioned PRF test-vector file.

    Text format, one record per line after the header: hex key, decimal
    invocation counter, hex expected 16-byte PRF block.
    """
    with open(path, "w") as f:
        f.write(f"episum-prf-vectors v{PRF_VECTORS_VERSION}\n")
        for key, ctr in entries:
            f.write(f"{key.hex()} {ctr} {prf_block(key, ctr).hex()}\n")


def read_prf_vectors(path) -> list[tuple[bytes, int, bytes]]:
    with open(path) as f:
        header = f.readline().strip()
        if header != f"episum-prf-vectors v{PRF_VECTORS_VERSION}":
            raise ValueError(f"unsupported vector file: {header!r}")
        out = []
        for line in f:
            key_hex, ctr, expect_hex = line.split()
            out.append((bytes.fromhex(key_hex), int(ctr), bytes.fromhex(expect_hex)))
        return out
