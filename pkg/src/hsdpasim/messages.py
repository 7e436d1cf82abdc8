"""Units that travel between RNC, Node B and UE."""
from __future__ import annotations

from dataclasses import dataclass, field

RT = 0
NRT = 1
FLOW_NAMES = {RT: "RT", NRT: "NRT"}


class Pdu:
    """One MAC-d PDU. ``stamp`` orders dispatches over the Iub; it is refreshed on every retransmission."""

    __slots__ = ("flow", "user", "rlc_seq", "payload_bits", "data_bits", "created_at", "parent",
                 "part", "is_last", "retx_count", "stamp", "delivered")

    def __init__(self, flow: int, user: int, rlc_seq: int, payload_bits: int, data_bits: int,
                 created_at: int, parent, part: int, is_last: bool):
        self.flow = flow
        self.user = user
        self.rlc_seq = rlc_seq
        self.payload_bits = payload_bits
        self.data_bits = data_bits
        self.created_at = created_at
        self.parent = parent
        self.part = part
        self.is_last = is_last
        self.retx_count = 0
        self.stamp = -1
        self.delivered = False

    def __repr__(self) -> str:
        return f"Pdu({FLOW_NAMES[self.flow]} u{self.user} #{self.rlc_seq} retx={self.retx_count})"


def segment_packet(packet_bits: int, pdu_size_bits: int, *, flow: int = NRT, user: int = 0,
                   first_seq: int = 0, created_at: int = 0, parent=None) -> list[Pdu]:
    """Split a packet into ``ceil(packet_bits / pdu_size_bits)`` PDUs; the last one is padded."""
    if packet_bits <= 0:
        raise ValueError("packet must carry at least one bit")
    if pdu_size_bits <= 0:
        raise ValueError("PDU size must be positive")
    n = -(-packet_bits // pdu_size_bits)
    out = []
    for i in range(n):
        data = pdu_size_bits if i < n - 1 else packet_bits - pdu_size_bits * (n - 1)
        out.append(Pdu(flow, user, first_seq + i, pdu_size_bits, data, created_at, parent, i, i == n - 1))
    return out


@dataclass(frozen=True)
class CreditGrant:
    """Per-TTI credits the Node B grants the RNC for one user; applied from ``effective_at``."""

    user: int
    c_rt: float
    c_nrt: float
    issued_at: int
    effective_at: int

    def __post_init__(self):
        if self.c_rt < 0 or self.c_nrt < 0:
            raise ValueError("credits are non-negative")


@dataclass
class StatusReport:
    """RLC AM STATUS from UE to RNC.

    ``highest_stamp`` is the newest dispatch the UE has seen; a NACK only
    counts for a PDU whose latest copy was dispatched before it.
    """

    acked: list[int] = field(default_factory=list)
    nacked: list[int] = field(default_factory=list)
    highest_stamp: int | None = None


class TransportBlock:
    __slots__ = ("user", "tsn", "mcs", "pdus", "tx_count", "first_tx_at")

    def __init__(self, user: int, tsn: int, mcs: int, pdus: list[Pdu], first_tx_at: int):
        self.user = user
        self.tsn = tsn
        self.mcs = mcs
        self.pdus = pdus
        self.tx_count = 0
        self.first_tx_at = first_tx_at
