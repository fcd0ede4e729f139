"""Per-channel traffic accounting and the in-process message bus.

Every protocol hop charges the ledger with the exact payload bits it would
put on a real wire; transport framing (headers, byte padding) is counted
separately so closed-form checks can compare against payload alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class ChannelCount:
    payload_bits: int = 0
    framing_bits: int = 0
    records: int = 0
    messages: int = 0


class CostLedger:
    """Bit counters keyed by (sender, receiver) channel."""

    def __init__(self):
        self.channels: dict[tuple[str, str], ChannelCount] = {}

    def charge(self, sender: str, receiver: str, payload_bits: int, framing_bits: int = 0, records: int = 0):
        c = self.channels.setdefault((sender, receiver), ChannelCount())
        c.payload_bits += payload_bits
        c.framing_bits += framing_bits
        c.records += records
        c.messages += 1

    def payload(self, sender: str, receiver: str) -> int:
        c = self.channels.get((sender, receiver))
        return c.payload_bits if c else 0

    def records(self, sender: str, receiver: str) -> int:
        c = self.channels.get((sender, receiver))
        return c.records if c else 0

    def sent_by(self, entity: str) -> int:
        return sum(c.payload_bits for (s, _), c in self.channels.items() if s == entity)

    def received_by(self, entity: str) -> int:
        return sum(c.payload_bits for (_, r), c in self.channels.items() if r == entity)

    def total_payload(self) -> int:
        return sum(c.payload_bits for c in self.channels.values())

    def merge(self, other: "CostLedger"):
        for key, c in other.channels.items():
            mine = self.channels.setdefault(key, ChannelCount())
            mine.payload_bits += c.payload_bits
            mine.framing_bits += c.framing_bits
            mine.records += c.records
            mine.messages += c.messages

    def rows(self):
        for (s, r) in sorted(self.channels):
            c = self.channels[(s, r)]
            yield s, r, c.payload_bits, c.framing_bits, c.records, c.messages

    def to_csv(self) -> str:
        lines = ["sender,receiver,payload_bits,framing_bits,records,messages"]
        for s, r, p, f, rec, m in self.rows():
            lines.append(f"{s},{r},{p},{f},{rec},{m}")
        return "\n".join(lines) + "\n"


@dataclass
class Frame:
    """One simulated transport frame."""

    session: str
    sender: str
    receiver: str
    kind: str
    payload: object = None


class Bus:
    """In-process transport: delivers python objects, charges the ledger,
    and optionally records frames for structural tests."""

    def __init__(self, ledger: CostLedger | None = None, trace: bool = False):
        self.ledger = ledger if ledger is not None else CostLedger()
        self.frames: list[Frame] | None = [] if trace else None

    def send(
        self,
        session: str,
        sender: str,
        receiver: str,
        kind: str,
        payload=None,
        payload_bits: int = 0,
        framing_bits: int = 0,
        records: int = 0,
    ):
        self.ledger.charge(sender, receiver, payload_bits, framing_bits, records)
        if self.frames is not None:
            self.frames.append(Frame(session, sender, receiver, kind, payload))
        return payload
