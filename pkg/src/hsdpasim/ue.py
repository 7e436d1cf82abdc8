"""UE receive path: MAC-hs reordering, RLC AM/UM receivers, and test-user metric capture."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .messages import Pdu, StatusReport


class MacReorderBuffer:
    """Releases transport blocks in TSN order.

    A block the Node B gave up on is pushed as ``None`` so later blocks are
    not held forever.
    """

    def __init__(self):
        self.next_tsn = 0
        self.held: dict[int, list[Pdu] | None] = {}

    def push(self, tsn: int, pdus: list[Pdu] | None) -> list[list[Pdu]]:
        if tsn < self.next_tsn or tsn in self.held:
            return []
        self.held[tsn] = pdus
        out = []
        while self.next_tsn in self.held:
            blk = self.held.pop(self.next_tsn)
            self.next_tsn += 1
            if blk is not None:
                out.append(blk)
        return out

    def pdus_held(self) -> list[Pdu]:
        return [p for blk in self.held.values() if blk for p in blk]


class RlcAmReceiver:
    """Selective-repeat receiver: buffers out-of-order PDUs and delivers whole packets in order."""

    def __init__(self):
        self.rcv_next = 0
        self.received: dict[int, Pdu] = {}
        self.abandoned: dict[int, Pdu] = {}
        self.highest_seq = -1
        self.highest_stamp = -1
        self._new_acks: list[int] = []
        self._broken = False
        self.delivered_pdus = 0
        self.duplicate_pdus = 0
        self.broken_packets = 0

    @property
    def dirty(self) -> bool:
        return bool(self._new_acks)

    def on_pdu(self, pdu: Pdu) -> tuple[list, bool]:
        """Accept one PDU. Returns ``(completed_parent_packets, gap_detected)``."""
        seq = pdu.rlc_seq
        self._new_acks.append(seq)
        if pdu.stamp > self.highest_stamp:
            self.highest_stamp = pdu.stamp
        if seq < self.rcv_next or seq in self.received:
            self.duplicate_pdus += 1
            return [], False
        pdu.delivered = True
        self.delivered_pdus += 1
        self.received[seq] = pdu
        gap = seq > self.highest_seq + 1
        if seq > self.highest_seq:
            self.highest_seq = seq
        return self._drain(), gap

    def on_discard(self, pdu: Pdu) -> list:
        """The transmitter gave up on ``pdu``: skip it and drop its parent packet."""
        if pdu.rlc_seq >= self.rcv_next and pdu.rlc_seq not in self.received:
            self.abandoned[pdu.rlc_seq] = pdu
            if pdu.rlc_seq > self.highest_seq:
                self.highest_seq = pdu.rlc_seq
        return self._drain()

    def _drain(self) -> list:
        done = []
        received, abandoned = self.received, self.abandoned
        while True:
            s = self.rcv_next
            pdu = received.pop(s, None)
            if pdu is None:
                pdu = abandoned.pop(s, None)
                if pdu is None:
                    break
                self._broken = True
            self.rcv_next = s + 1
            if pdu.is_last:
                if self._broken:
                    self.broken_packets += 1
                else:
                    done.append(pdu.parent)
                self._broken = False
        return done

    def missing(self) -> list[int]:
        rec, ab = self.received, self.abandoned
        return [s for s in range(self.rcv_next, self.highest_seq) if s not in rec and s not in ab]

    def make_status(self) -> StatusReport:
        acks, self._new_acks = self._new_acks, []
        return StatusReport(acks, self.missing(), self.highest_stamp)


class RlcUmReceiver:
    """Unacknowledged mode: in-order assembly, incomplete packets are discarded."""

    def __init__(self):
        self._parent = None
        self._next_part = 0
        self.delivered_pdus = 0
        self.discarded_packets = 0

    def on_pdu(self, pdu: Pdu):
        self.delivered_pdus += 1
        pdu.delivered = True
        if pdu.part == 0:
            if self._parent is not None:
                self.discarded_packets += 1
            self._parent, self._next_part = pdu.parent, 0
        elif pdu.parent is not self._parent or pdu.part != self._next_part:
            if self._parent is not None:
                self.discarded_packets += 1
            self._parent = None
            return None
        self._next_part += 1
        if pdu.is_last:
            parent, self._parent = self._parent, None
            return parent
        return None


@dataclass
class VoipDelaySample:
    packet_id: int
    created_at: int
    delivered_at: int

    @property
    def delay_ms(self) -> float:
        return (self.delivered_at - self.created_at) / 1000.0


@dataclass
class TestUserMetrics:
    """Counters for the observed multi-flow user."""

    __test__ = False  # keep pytest from collecting it

    n_bins: int
    bin_us: int
    nrt_bytes: int = 0
    voip: list[VoipDelaySample] = field(default_factory=list)
    voip_generated: int = 0
    machs_nrt_drops: int = 0
    machs_rt_drops: int = 0
    harq_rt_losses: int = 0
    um_discards: int = 0

    def __post_init__(self):
        self.bin_bytes = [0] * self.n_bins
        self.bin_delay_sum = [0.0] * self.n_bins
        self.bin_delay_count = [0] * self.n_bins

    def _bin(self, now: int) -> int:
        return min(self.n_bins - 1, now // self.bin_us)

    def record_nrt(self, now: int, nbytes: int) -> None:
        self.nrt_bytes += nbytes
        self.bin_bytes[self._bin(now)] += nbytes

    def record_voip(self, packet_id: int, created_at: int, now: int) -> None:
        s = VoipDelaySample(packet_id, created_at, now)
        self.voip.append(s)
        b = self._bin(now)
        self.bin_delay_sum[b] += s.delay_ms
        self.bin_delay_count[b] += 1

    def throughput_bps(self, duration_s: float) -> float:
        return self.nrt_bytes * 8 / duration_s

    def series(self) -> list[tuple[float, float, float]]:
        """Rows of ``(t_s, window_throughput_bps, cum_voip_delay_mean_ms)``, one per bin end."""
        rows = []
        w = self.bin_us / 1e6
        tot, cnt = 0.0, 0
        for i in range(self.n_bins):
            tot += self.bin_delay_sum[i]
            cnt += self.bin_delay_count[i]
            rows.append(((i + 1) * w, self.bin_bytes[i] * 8 / w, tot / cnt if cnt else float("nan")))
        return rows

    def voip_delay_stats(self) -> tuple[float, float]:
        if not self.voip:
            return float("nan"), float("nan")
        d = np.array([s.delay_ms for s in self.voip])
        return float(d.mean()), float(np.percentile(d, 95))
