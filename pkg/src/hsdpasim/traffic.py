"""Traffic sources: the VoIP ON/OFF talker and a TCP Reno bulk sender/receiver."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernel import EventHandle, Simulator


class VoipState(enum.Enum):
    ON = "ON"
    OFF = "OFF"


@dataclass
class VoipPacket:
    packet_id: int
    created_at: int
    bits: int


class VoipSource:
    """Exponential ON/OFF talker emitting one packet every ``interval_us`` while ON.

    The first packet of a talk spurt is emitted at the ON-transition instant.
    """

    def __init__(self, rng: np.random.Generator, mean_on_s=3.0, mean_off_s=3.0,
                 interval_us=20_000, packet_bits=320):
        self.rng = rng
        self.mean_on_us = mean_on_s * 1e6
        self.mean_off_us = mean_off_s * 1e6
        self.interval_us = int(interval_us)
        self.packet_bits = packet_bits
        self.state = VoipState.OFF
        self.on_since = 0
        self.state_until = 0
        self.next_time = 0
        self.emitted = 0
        self.on_time_us = 0

    def _draw(self, mean_us: float) -> int:
        return max(1, int(round(self.rng.exponential(mean_us))))

    def start(self, now: int) -> int:
        """Pick the initial state from the stationary split; return the first tick time."""
        p_on = self.mean_on_us / (self.mean_on_us + self.mean_off_us)
        if self.rng.random() < p_on:
            self._turn_on(now)
        else:
            self.state = VoipState.OFF
            self.state_until = now + self._draw(self.mean_off_us)
            self.next_time = self.state_until
        return self.next_time

    def _turn_on(self, now: int) -> None:
        self.state = VoipState.ON
        self.on_since = now
        self.state_until = now + self._draw(self.mean_on_us)
        self.next_time = now

    def tick(self, now: int) -> VoipPacket | None:
        """Advance to ``now`` (a previously returned ``next_time``); maybe emit a packet."""
        if self.state is VoipState.OFF:
            if now >= self.state_until:
                self._turn_on(now)
            else:
                return None
        if now >= self.state_until:
            self.on_time_us += self.state_until - self.on_since
            self.state = VoipState.OFF
            self.state_until = now + self._draw(self.mean_off_us)
            self.next_time = self.state_until
            return None
        pkt = VoipPacket(self.emitted, now, self.packet_bits)
        self.emitted += 1
        nxt = now + self.interval_us
        self.next_time = nxt if nxt < self.state_until else self.state_until
        return pkt


class Phase(enum.Enum):
    SLOW_START = "SLOW_START"
    CONG_AVOID = "CONG_AVOID"
    FAST_RECOVERY = "FAST_RECOVERY"


@dataclass
class TcpConnState:
    """Reno sender state. ``cwnd`` and ``ssthresh`` are in segments, sequence numbers in bytes."""

    mss: int = 536
    rwnd: int = 64 * 536
    cwnd: float = 1.0
    ssthresh: float = 64.0
    snd_una: int = 0
    snd_nxt: int = 0
    snd_max: int = 0
    dup_acks: int = 0
    rto_ms: float = 1000.0
    srtt_ms: float | None = None
    rttvar_ms: float = 0.0
    phase: Phase = Phase.SLOW_START
    min_rto_ms: float = 1000.0
    max_rto_ms: float = 60000.0

    @property
    def flight_bytes(self) -> int:
        return self.snd_nxt - self.snd_una

    @property
    def flight_segments(self) -> float:
        return self.flight_bytes / self.mss


def tcp_window_allows(conn: TcpConnState) -> int:
    return max(0, int(min(conn.cwnd * conn.mss, conn.rwnd)) - conn.flight_bytes)


def _rtt_sample(conn: TcpConnState, sample_ms: float) -> None:
    if conn.srtt_ms is None:
        conn.srtt_ms = sample_ms
        conn.rttvar_ms = sample_ms / 2
    else:
        conn.rttvar_ms = 0.75 * conn.rttvar_ms + 0.25 * abs(conn.srtt_ms - sample_ms)
        conn.srtt_ms = 0.875 * conn.srtt_ms + 0.125 * sample_ms
    conn.rto_ms = min(conn.max_rto_ms, max(conn.min_rto_ms, conn.srtt_ms + 4 * conn.rttvar_ms))


def tcp_on_dup_ack(conn: TcpConnState) -> bool:
    """Count a duplicate ACK. Returns True when a fast retransmit of ``snd_una`` is due."""
    conn.dup_acks += 1
    if conn.phase is Phase.FAST_RECOVERY:
        conn.cwnd += 1
        return False
    if conn.dup_acks == 3:
        conn.ssthresh = max(conn.flight_segments / 2, 2.0)
        conn.cwnd = conn.ssthresh + 3
        conn.phase = Phase.FAST_RECOVERY
        return True
    return False


def tcp_on_ack(conn: TcpConnState, ack_seq: int, rtt_sample_ms: float | None = None) -> str:
    """Process a cumulative ACK. Returns ``"new"``, ``"dup"``, ``"fast_retransmit"`` or ``"ignored"``."""
    if ack_seq < conn.snd_una or ack_seq > conn.snd_max:
        return "ignored"
    if ack_seq == conn.snd_una:
        if conn.snd_max == conn.snd_una:
            return "ignored"
        return "fast_retransmit" if tcp_on_dup_ack(conn) else "dup"
    conn.snd_una = ack_seq
    if conn.snd_nxt < ack_seq:
        conn.snd_nxt = ack_seq
    conn.dup_acks = 0
    if rtt_sample_ms is not None:
        _rtt_sample(conn, rtt_sample_ms)
    limit = conn.rwnd / conn.mss
    if conn.phase is Phase.FAST_RECOVERY:
        conn.cwnd = conn.ssthresh
        conn.phase = Phase.CONG_AVOID
    elif conn.phase is Phase.SLOW_START:
        conn.cwnd = min(limit, conn.cwnd + 1)
        if conn.cwnd >= conn.ssthresh:
            conn.phase = Phase.CONG_AVOID
    else:
        conn.cwnd = min(limit, conn.cwnd + 1.0 / conn.cwnd)
    return "new"


def tcp_on_timeout(conn: TcpConnState) -> None:
    """RTO expiry: collapse to one segment, back off, and go back to ``snd_una``."""
    conn.ssthresh = max(conn.flight_segments / 2, 2.0)
    conn.cwnd = 1.0
    conn.phase = Phase.SLOW_START
    conn.dup_acks = 0
    conn.rto_ms = min(conn.max_rto_ms, conn.rto_ms * 2)
    conn.snd_nxt = conn.snd_una


@dataclass
class Segment:
    conn_id: int
    seq: int
    length: int
    sent_at: int
    bits: int


class TcpSender:
    """Unbounded bulk sender driving a :class:`TcpConnState` from simulator events."""

    def __init__(self, sim: Simulator, conn_id: int, conn: TcpConnState, header_bytes: int,
                 transmit: Callable[[Segment], None]):
        self.sim = sim
        self.conn_id = conn_id
        self.conn = conn
        self.header_bytes = header_bytes
        self.transmit = transmit
        self._sent_at: dict[int, int] = {}
        self._rto_deadline: int | None = None
        self._rto_event: EventHandle | None = None
        self.timeouts = 0
        self.fast_retx = 0
        self.segments_sent = 0

    def start(self) -> None:
        self.pump()

    def _send_segment(self, seq: int) -> None:
        c = self.conn
        now = self.sim.now
        if seq < c.snd_max:
            # Karn: no RTT samples from retransmitted data
            self._sent_at.pop(seq, None)
        else:
            self._sent_at[seq] = now
        self.segments_sent += 1
        self.transmit(Segment(self.conn_id, seq, c.mss, now, (c.mss + self.header_bytes) * 8))
        if self._rto_deadline is None:
            self._arm_rto()

    def pump(self) -> None:
        c = self.conn
        while tcp_window_allows(c) >= c.mss:
            seq = c.snd_nxt
            self._send_segment(seq)
            c.snd_nxt += c.mss
            if c.snd_nxt > c.snd_max:
                c.snd_max = c.snd_nxt

    def on_ack(self, ack_seq: int) -> None:
        c = self.conn
        sample = None
        if ack_seq > c.snd_una:
            sent = self._sent_at.get(ack_seq - c.mss)
            if sent is not None:
                sample = (self.sim.now - sent) / 1000.0
            for s in [s for s in self._sent_at if s < ack_seq]:
                del self._sent_at[s]
        outcome = tcp_on_ack(c, ack_seq, sample)
        if outcome == "new":
            if c.snd_una == c.snd_max:
                self._disarm_rto()
            else:
                self._arm_rto()
        elif outcome == "fast_retransmit":
            self.fast_retx += 1
            self._send_segment(c.snd_una)
        self.pump()

    def _arm_rto(self) -> None:
        self._rto_deadline = self.sim.now + int(self.conn.rto_ms * 1000)
        if self._rto_event is None:
            self._rto_event = self.sim.schedule(self._rto_deadline, self._rto_fire)

    def _disarm_rto(self) -> None:
        self._rto_deadline = None

    def _rto_fire(self) -> None:
        self._rto_event = None
        if self._rto_deadline is None:
            return
        if self.sim.now < self._rto_deadline:
            self._rto_event = self.sim.schedule(self._rto_deadline, self._rto_fire)
            return
        self.timeouts += 1
        self._rto_deadline = None
        tcp_on_timeout(self.conn)
        self._sent_at.clear()
        self.pump()


class TcpReceiver:
    """Cumulative-ACK receiver with an out-of-order store; one ACK per arriving segment."""

    def __init__(self):
        self.rcv_nxt = 0
        self._ooo: dict[int, int] = {}
        self.delivered_bytes = 0
        self.duplicate_segments = 0

    def on_segment(self, seq: int, length: int) -> tuple[int, int]:
        """Returns ``(ack_seq, newly_delivered_bytes)``."""
        before = self.rcv_nxt
        if seq == self.rcv_nxt:
            self.rcv_nxt += length
            while self.rcv_nxt in self._ooo:
                self.rcv_nxt += self._ooo.pop(self.rcv_nxt)
        elif seq > self.rcv_nxt:
            if seq in self._ooo:
                self.duplicate_segments += 1
            self._ooo[seq] = length
        else:
            self.duplicate_segments += 1
        new = self.rcv_nxt - before
        self.delivered_bytes += new
        return self.rcv_nxt, new
