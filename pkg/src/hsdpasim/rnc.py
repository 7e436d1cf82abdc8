"""RNC side: packet segmentation, RLC AM (selective repeat) and UM transmit entities, Iub forwarding."""
from __future__ import annotations

import math
from collections import deque

from .messages import NRT, RT, CreditGrant, Pdu, StatusReport, segment_packet

# float slack so that ten 0.1-credit increments make a whole credit
CREDIT_EPS = 1e-9


class RlcAmEntity:
    """Selective-repeat ARQ transmitter for one user's NRT flow.

    ``pending`` holds PDUs awaiting first transmission (the user buffer size
    reported to the Node B). ``tx_buffer`` holds dispatched, unacknowledged
    PDUs. A NACKed PDU is retransmitted up to ``max_retx`` times, then
    discarded.
    """

    def __init__(self, user: int, pdu_size_bits: int = 320, tx_window: int = 2048, max_retx: int = 6):
        self.user = user
        self.pdu_size_bits = pdu_size_bits
        self.tx_window = tx_window
        self.max_retx = max_retx
        self.pending: deque[Pdu] = deque()
        self.tx_buffer: dict[int, Pdu] = {}
        self.retx_queue: deque[Pdu] = deque()
        self._queued_retx: set[int] = set()
        self.next_seq = 0
        self.vt_a = 0
        self.vt_s = 0
        self._stamp = 0
        self.created = 0
        self.retransmissions = 0
        self.discarded = 0
        self.stale_nacks = 0

    @property
    def ubs(self) -> int:
        return len(self.pending)

    def add_packet(self, bits: int, now: int, parent) -> list[Pdu]:
        pdus = segment_packet(bits, self.pdu_size_bits, flow=NRT, user=self.user,
                              first_seq=self.next_seq, created_at=now, parent=parent)
        self.next_seq += len(pdus)
        self.created += len(pdus)
        self.pending.extend(pdus)
        return pdus

    def window_open(self) -> bool:
        return self.vt_s < self.vt_a + self.tx_window

    def has_sendable(self) -> bool:
        return bool(self.retx_queue) or (bool(self.pending) and self.window_open())

    def _advance_vt_a(self) -> None:
        buf = self.tx_buffer
        while self.vt_a < self.vt_s and self.vt_a not in buf:
            self.vt_a += 1

    def dispatch(self, limit: int | None = None) -> list[Pdu]:
        """Take PDUs for the Iub: retransmissions first, then new PDUs inside the window."""
        out = []
        while limit is None or len(out) < limit:
            if self.retx_queue:
                pdu = self.retx_queue.popleft()
                self._queued_retx.discard(pdu.rlc_seq)
                if pdu.rlc_seq not in self.tx_buffer:
                    continue
                self.retransmissions += 1
            elif self.pending and self.vt_s < self.vt_a + self.tx_window:
                pdu = self.pending.popleft()
                self.tx_buffer[pdu.rlc_seq] = pdu
                self.vt_s = pdu.rlc_seq + 1
            else:
                break
            pdu.stamp = self._stamp
            self._stamp += 1
            out.append(pdu)
        return out

    def on_status(self, status: StatusReport) -> tuple[list[Pdu], list[Pdu]]:
        """Apply a STATUS. Returns ``(queued_for_retransmission, discarded)``."""
        buf = self.tx_buffer
        for seq in status.acked:
            buf.pop(seq, None)
        retx, dropped = [], []
        for seq in status.nacked:
            pdu = buf.get(seq)
            if pdu is None or seq in self._queued_retx:
                continue
            if status.highest_stamp is not None and pdu.stamp > status.highest_stamp:
                # latest copy still on its way
                self.stale_nacks += 1
                continue
            if pdu.retx_count >= self.max_retx:
                del buf[seq]
                self.discarded += 1
                dropped.append(pdu)
            else:
                pdu.retx_count += 1
                self.retx_queue.append(pdu)
                self._queued_retx.add(seq)
                retx.append(pdu)
        self._advance_vt_a()
        return retx, dropped

    def outstanding_undelivered(self) -> int:
        return sum(1 for p in self.pending if not p.delivered) + sum(
            1 for p in self.tx_buffer.values() if not p.delivered)


class RncUser:
    """Per-user RNC state: AM entity for NRT, UM queue for RT, and the ETSP credit accumulators."""

    def __init__(self, user: int, pdu_size_bits: int = 320, tx_window: int = 2048, max_retx: int = 6,
                 flow_controlled: bool = False, initial_grant: CreditGrant | None = None,
                 iub_limit: int | None = None):
        self.user = user
        self.pdu_size_bits = pdu_size_bits
        self.am = RlcAmEntity(user, pdu_size_bits, tx_window, max_retx)
        self.um_queue: deque[Pdu] = deque()
        self.um_next_seq = 0
        self.um_created = 0
        self.flow_controlled = flow_controlled
        self.iub_limit = iub_limit or None
        self.grant = initial_grant
        self._incoming: deque[CreditGrant] = deque()
        self.acc_rt = 0.0
        self.acc_nrt = 0.0
        self.granted_nrt_total = 0.0
        self.dispatched_nrt_total = 0

    def add_nrt_packet(self, bits: int, now: int, parent) -> list[Pdu]:
        return self.am.add_packet(bits, now, parent)

    def add_rt_packet(self, bits: int, created_at: int, parent) -> list[Pdu]:
        pdus = segment_packet(bits, self.pdu_size_bits, flow=RT, user=self.user,
                              first_seq=self.um_next_seq, created_at=created_at, parent=parent)
        self.um_next_seq += len(pdus)
        self.um_created += len(pdus)
        self.um_queue.extend(pdus)
        return pdus

    def receive_grant(self, grant: CreditGrant) -> None:
        self._incoming.append(grant)

    def has_backlog(self) -> bool:
        return bool(self.um_queue) or self.am.has_sendable()

    def iub_forward(self, now: int) -> list[Pdu]:
        """PDUs to push over the Iub this TTI."""
        if not self.flow_controlled:
            limit = self.iub_limit
            out = []
            while self.um_queue and (limit is None or len(out) < limit):
                out.append(self.um_queue.popleft())
            nrt = self.am.dispatch(None if limit is None else limit - len(out))
            self.dispatched_nrt_total += len(nrt)
            out.extend(nrt)
            return out

        incoming = self._incoming
        while incoming and incoming[0].effective_at <= now:
            self.grant = incoming.popleft()
        g = self.grant
        out = []
        if g is None:
            return out

        self.acc_rt += g.c_rt
        n_rt = min(int(math.floor(self.acc_rt + CREDIT_EPS)), len(self.um_queue))
        for _ in range(n_rt):
            out.append(self.um_queue.popleft())
        self.acc_rt -= n_rt
        if not self.um_queue:
            self.acc_rt = min(self.acc_rt, 1.0)

        self.acc_nrt += g.c_nrt
        self.granted_nrt_total += g.c_nrt
        n_nrt = int(math.floor(self.acc_nrt + CREDIT_EPS))
        if self.iub_limit is not None:
            n_nrt = min(n_nrt, self.iub_limit - len(out))
        nrt = self.am.dispatch(n_nrt) if n_nrt > 0 else []
        self.acc_nrt -= len(nrt)
        if not self.am.has_sendable():
            self.acc_nrt = min(self.acc_nrt, 1.0)
        self.dispatched_nrt_total += len(nrt)
        out.extend(nrt)
        return out
