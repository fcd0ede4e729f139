"""3-server anonymous communication channel.

Participants additively share their message records between the helper S0
and server S1 (the S0 leg is PRF-correlated, so only one leg crosses the
wire). The servers then cascade two permutations with a re-sharing in
between: S0/S1 agree on the first permutation, re-share, and hand the
vector to S0/S2, who apply the second permutation before S2 reconstructs.
Each of S1 and S2 ends up holding the fully shuffled plaintext vector while
knowing only one of the two permutations; S0 knows both permutations but
never sees a reconstructed vector.

The variant for the trusted-component pipeline stops after the first
permutation: S0 and S1 both forward their legs to S2, who alone
reconstructs. Record transfer counts per session are therefore 3M for the
full cascade and 2M for the single-permutation variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .crypto import PrfKeyRing, derive_permutation
from .ledger import Bus


class ProtocolFailure(Exception):
    """Share-vector lengths diverged between servers."""


@dataclass
class MessageVector:
    """Fixed-width records awaiting the shuffle; width in bits."""

    entries: list[int]
    width: int

    def __post_init__(self):
        mask = (1 << self.width) - 1
        if any(e & ~mask for e in self.entries):
            raise ValueError("record does not fit the declared width")


@dataclass
class ShareVector:
    leg: list[int]
    holder: str


@dataclass
class ChannelSession:
    """One shuffle session: ingest from many participants, then shuffle once."""

    ring: PrfKeyRing
    width: int
    bus: Bus | None = None
    session: str = "shuffle"
    invocation_base: int | None = None
    leg_s0: list[int] = field(default_factory=list)
    leg_s1: list[int] = field(default_factory=list)
    _ingests: int = 0
    # which permutation seeds each server touched; structural privacy checks
    # read this in place of a real network transcript
    transcript: dict[str, list[str]] = field(default_factory=lambda: {"S0": [], "S1": [], "S2": []})

    def _inv(self, k: int) -> int | None:
        return None if self.invocation_base is None else self.invocation_base + k

    def ingest(self, participant: str, ring: PrfKeyRing, messages: MessageVector, invocation: int | None = None):
        """Additive-share ingestion: the S0 leg is sampled from the PRF shared
        with the participant (nothing on the wire); the S1 leg is sent
        explicitly and is the only charged upload."""
        if messages.width != self.width:
            raise ValueError("record width mismatch")
        if not messages.entries:
            raise ValueError("empty message list")
        n = len(messages.entries)
        nbytes = (self.width + 7) // 8
        stream = (
            ring.sample((participant, "S0"), n * nbytes)
            if invocation is None
            else ring.sample_at((participant, "S0"), invocation, n * nbytes)
        )
        mod = 1 << self.width
        leg0 = [
            int.from_bytes(stream[i * nbytes : (i + 1) * nbytes], "little") % mod
            for i in range(n)
        ]
        leg1 = [(m - l0) % mod for m, l0 in zip(messages.entries, leg0)]
        self.leg_s0.extend(leg0)
        self.leg_s1.extend(leg1)
        self._ingests += 1
        if self.bus is not None:
            self.bus.send(
                self.session, participant, "S1", "ingest-leg",
                payload_bits=n * self.width, records=n,
            )

    def _charge(self, sender: str, receiver: str, kind: str, n: int):
        if self.bus is not None:
            self.bus.send(
                self.session, sender, receiver, kind,
                payload_bits=n * self.width, records=n,
            )

    def shuffle_pir(self) -> list[int]:
        """Full two-permutation cascade; S1 and S2 both hold the output."""
        if len(self.leg_s0) != len(self.leg_s1):
            raise ProtocolFailure("leg length mismatch")
        n = len(self.leg_s0)
        mod = 1 << self.width
        nbytes = (self.width + 7) // 8

        # S0 and S1: first permutation, then re-share with a joint pad
        pi01 = derive_permutation(self.ring, ("S0", "S1"), n, self._inv(0))
        self.transcript["S0"].append("pi01")
        self.transcript["S1"].append("pi01")
        r01s = self.ring.sample_at(("S0", "S1"), self._inv(1), n * nbytes) if self.invocation_base is not None else self.ring.sample(("S0", "S1"), n * nbytes)
        r01 = [int.from_bytes(r01s[i * nbytes : (i + 1) * nbytes], "little") % mod for i in range(n)]
        a = [(self.leg_s0[j] + r01[i]) % mod for i, j in enumerate(pi01)]   # at S0
        b = [(self.leg_s1[j] - r01[i]) % mod for i, j in enumerate(pi01)]   # at S1
        self._charge("S1", "S2", "reshared-leg", n)                          # b -> S2

        # S0 and S2: second permutation; S2 reconstructs
        pi02 = derive_permutation(self.ring, ("S0", "S2"), n, self._inv(2))
        self.transcript["S0"].append("pi02")
        self.transcript["S2"].append("pi02")
        a2 = [a[j] for j in pi02]
        b2 = [b[j] for j in pi02]
        self._charge("S0", "S2", "permuted-leg", n)                          # a2 -> S2
        out_s2 = [(x + y) % mod for x, y in zip(a2, b2)]

        # S2 re-shares towards S1 so both database servers hold the output
        c1s = self.ring.sample_at(("S1", "S2"), self._inv(3), n * nbytes) if self.invocation_base is not None else self.ring.sample(("S1", "S2"), n * nbytes)
        c1 = [int.from_bytes(c1s[i * nbytes : (i + 1) * nbytes], "little") % mod for i in range(n)]
        c2 = [(m - x) % mod for m, x in zip(out_s2, c1)]
        self._charge("S2", "S1", "output-leg", n)                            # c2 -> S1
        out_s1 = [(x + y) % mod for x, y in zip(c1, c2)]
        assert out_s1 == out_s2
        return out_s2

    def shuffle_tee(self) -> list[int]:
        """Single-permutation variant: only S2 reconstructs."""
        if len(self.leg_s0) != len(self.leg_s1):
            raise ProtocolFailure("leg length mismatch")
        n = len(self.leg_s0)
        mod = 1 << self.width
        nbytes = (self.width + 7) // 8

        pi01 = derive_permutation(self.ring, ("S0", "S1"), n, self._inv(0))
        self.transcript["S0"].append("pi01")
        self.transcript["S1"].append("pi01")
        r01s = self.ring.sample_at(("S0", "S1"), self._inv(1), n * nbytes) if self.invocation_base is not None else self.ring.sample(("S0", "S1"), n * nbytes)
        r01 = [int.from_bytes(r01s[i * nbytes : (i + 1) * nbytes], "little") % mod for i in range(n)]
        a = [(self.leg_s0[j] + r01[i]) % mod for i, j in enumerate(pi01)]
        b = [(self.leg_s1[j] - r01[i]) % mod for i, j in enumerate(pi01)]
        self._charge("S1", "S2", "reshared-leg", n)
        self._charge("S0", "S2", "reshared-leg", n)
        return [(x + y) % mod for x, y in zip(a, b)]
