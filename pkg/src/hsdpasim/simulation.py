"""One HSDPA cell: the test multi-flow user (index 0) plus single-flow FTP background users."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .kernel import Simulator, rng_stream
from .messages import NRT, RT, CreditGrant, Pdu, TransportBlock
from .nodeb import ETSP, FIFO, CreditAllocator, HarqSenderBank, MacHsQueue, RoundRobin
from .radio import NO_MCS, RadioLink
from .rnc import RncUser
from .traffic import Segment, TcpConnState, TcpReceiver, TcpSender, VoipPacket, VoipSource
from .ue import MacReorderBuffer, RlcAmReceiver, RlcUmReceiver, TestUserMetrics

TEST_USER = 0


class InvariantError(AssertionError):
    pass


@dataclass
class RunSummary:
    policy: str
    n_users: int
    seed: int
    nrt_throughput_bps: float
    nrt_throughput_cov: float
    voip_delay_mean_ms: float
    voip_delay_p95_ms: float
    voip_loss_ratio: float
    machs_nrt_drops: int
    machs_rt_drops: int
    rlc_retx_count: int
    rlc_giveups: int
    tcp_timeouts: int
    tcp_fast_retx: int


SUMMARY_FIELDS = list(RunSummary.__dataclass_fields__)


@dataclass
class LedgerLine:
    generated: int
    delivered: int
    dropped: int
    discarded: int
    in_flight: int

    @property
    def balanced(self) -> bool:
        return self.generated == self.delivered + self.dropped + self.discarded + self.in_flight


@dataclass
class RunResult:
    config: RunConfig
    summary: RunSummary
    series: list[tuple[float, float, float]]
    ledger: dict[str, LedgerLine]
    fired_events: int
    cqi_trace: list[tuple[int, int, int, int]] = field(default_factory=list)
    transcript: list | None = None


class _User:
    __slots__ = ("idx", "rnc", "queue", "harq", "next_tsn", "reorder", "am_rx", "um_rx", "tcp_rx",
                 "sender", "status_armed", "iub_rt_transit")

    def __init__(self, idx: int, cfg: RunConfig, policy: str, flow_controlled: bool,
                 initial_grant: CreditGrant | None):
        self.idx = idx
        self.rnc = RncUser(idx, cfg.pdu_size_bits, cfg.rlc_tx_window, cfg.rlc_max_retx,
                           flow_controlled, initial_grant, cfg.iub_user_pdus_per_tti)
        self.queue = MacHsQueue(policy, cfg.tsp_R, cfg.buffer_N, cfg.etsp_L, cfg.etsp_H)
        self.harq = HarqSenderBank(cfg.harq_processes, cfg.max_harq_tx)
        self.next_tsn = 0
        self.reorder = MacReorderBuffer()
        self.am_rx = RlcAmReceiver()
        self.um_rx = RlcUmReceiver()
        self.tcp_rx = TcpReceiver()
        self.sender: TcpSender | None = None
        self.status_armed = False
        self.iub_rt_transit = 0


class Cell:
    """Builds and runs one cell for a :class:`RunConfig`.

    Per TTI, in order: the RNC pushes PDUs onto the Iub, the Node B serves
    one user by Round Robin, and (ETSP only) the Node B issues the next
    credit grant for the test user.
    """

    def __init__(self, cfg: RunConfig, *, record_transcript: bool = False, trace_cqi: bool = False,
                 check_invariants: bool = False):
        self.cfg = cfg
        self.sim = Simulator(record_transcript)
        self.trace_cqi = trace_cqi
        self.check_invariants = check_invariants
        self.cqi_trace: list[tuple[int, int, int, int]] = []
        seed = cfg.master_seed
        n = cfg.n_users
        self.tti = cfg.tti_us
        self.n_tti = -(-cfg.sim_duration_us // cfg.tti_us)

        placement = rng_stream(seed, "user-placement")
        distances = [cfg.test_ue_distance_km]
        distances += placement.uniform(cfg.bg_distance_min_km, cfg.bg_distance_max_km, n - 1).tolist()
        self.distances = distances
        self.radio = RadioLink(cfg, distances, rng_stream(seed, "shadowing"),
                               rng_stream(seed, "harq-error"), self.n_tti)
        self.pdus_per_block = self.radio.mcs.pdus_per_block

        self.flow_controlled = cfg.policy == ETSP
        initial_grant = None
        self.allocator = None
        if self.flow_controlled:
            self.allocator = CreditAllocator(
                TEST_USER, lambda_rt=cfg.lambda_rt_bps, pdu_size=cfg.pdu_size_bits, tti_s=cfg.tti_s,
                L=cfg.etsp_L, H=cfg.etsp_H, k=cfg.fc_k, alpha=cfg.fc_alpha,
                lambda_seed=cfg.lambda_nrt_seed_bps, iub_delay_us=cfg.iub_delay_us)
            initial_grant = self.allocator.grant_for(0, 0, 0)
            initial_grant = CreditGrant(TEST_USER, initial_grant.c_rt, initial_grant.c_nrt, 0, 0)
        self.users = [
            _User(0, cfg, cfg.policy, self.flow_controlled, initial_grant)
        ] + [_User(i, cfg, FIFO, False, None) for i in range(1, n)]
        self.rr = RoundRobin(n)
        self._ubs_line: list[tuple[int, int]] = []
        self._ubs_pos = 0
        self._ubs_seen = 0

        self.metrics = TestUserMetrics(
            n_bins=max(1, math.ceil(cfg.sim_duration_s / cfg.throughput_window_s)),
            bin_us=int(round(cfg.throughput_window_s * 1e6)))
        self.voip = VoipSource(rng_stream(seed, "voip"), cfg.voip_mean_on_s, cfg.voip_mean_off_s,
                               int(round(cfg.voip_interval_ms * 1000)), cfg.voip_packet_bits)
        self.voip_core_transit = 0
        self.uplink_us = cfg.core_delay_us + cfg.iub_delay_us

        for u in self.users:
            conn = TcpConnState(mss=cfg.tcp_mss_bytes, rwnd=cfg.tcp_rwnd_bytes,
                                ssthresh=float(cfg.tcp_rwnd_segments), rto_ms=cfg.tcp_initial_rto_ms,
                                min_rto_ms=cfg.tcp_min_rto_ms, max_rto_ms=cfg.tcp_max_rto_ms)
            u.sender = TcpSender(self.sim, u.idx, conn, cfg.tcp_header_bytes, self._make_transmit(u))
        self._active: set[int] = set()

    # ---- wiring -------------------------------------------------------------------------------

    def _make_transmit(self, u: _User):
        sim, delay = self.sim, self.cfg.core_delay_us

        def transmit(seg: Segment) -> None:
            sim.schedule_in(delay, self._rnc_on_segment, u, seg)
        return transmit

    def _rnc_on_segment(self, u: _User, seg: Segment) -> None:
        u.rnc.add_nrt_packet(seg.bits, self.sim.now, seg)
        self._active.add(u.idx)

    def _voip_event(self) -> None:
        pkt = self.voip.tick(self.sim.now)
        if pkt is not None:
            self.metrics.voip_generated += 1
            self.voip_core_transit += 1
            self.sim.schedule_in(self.cfg.core_delay_us, self._rnc_on_voip, pkt)
        self.sim.schedule(self.voip.next_time, self._voip_event)

    def _rnc_on_voip(self, pkt: VoipPacket) -> None:
        self.voip_core_transit -= 1
        self.users[TEST_USER].rnc.add_rt_packet(pkt.bits, pkt.created_at, pkt)
        self._active.add(TEST_USER)

    def _nodeb_on_iub(self, u: _User, pdus: list[Pdu]) -> None:
        q = u.queue
        test = u.idx == TEST_USER
        for p in pdus:
            if p.flow == RT:
                u.iub_rt_transit -= 1
            q.enqueue(p)
        if self.check_invariants:
            self._check_queue(q)
        if test:
            self.metrics.machs_nrt_drops = q.drops[NRT]
            self.metrics.machs_rt_drops = q.drops[RT]

    def _check_queue(self, q: MacHsQueue) -> None:
        if q.total > q.N:
            raise InvariantError(f"queue holds {q.total} > N={q.N}")
        if q.policy != FIFO:
            if q.rt_count > q.R:
                raise InvariantError(f"queue holds {q.rt_count} RT > R={q.R}")

    # ---- per-TTI work -------------------------------------------------------------------------

    def _tti(self, i: int) -> None:
        now = self.sim.now
        sim = self.sim
        iub = self.cfg.iub_delay_us
        users = self.users

        # RNC -> Iub
        if self.flow_controlled:
            self._active.add(TEST_USER)
        for idx in sorted(self._active):
            u = users[idx]
            pdus = u.rnc.iub_forward(now)
            if pdus:
                if idx == TEST_USER:
                    u.iub_rt_transit += sum(1 for p in pdus if p.flow == RT)
                sim.schedule(now + iub, self._nodeb_on_iub, u, pdus)
        self._active = {idx for idx in self._active if users[idx].rnc.has_backlog()}
        if self.flow_controlled:
            self._ubs_line.append((now + iub, users[TEST_USER].rnc.am.ubs))

        # Node B scheduling
        radio = self.radio
        alloc = [0]

        def eligible(idx: int) -> bool:
            u = users[idx]
            if u.harq.n_pending_retx:
                return True
            if not u.queue.total or not u.harq.has_free():
                return False
            return radio.reported_cqi(idx, i) != NO_MCS

        def on_skip(idx: int) -> None:
            if idx == TEST_USER and self.flow_controlled:
                u = users[idx]
                if not u.queue.total and not u.harq.n_pending_retx and u.harq.has_free():
                    mcs = radio.reported_cqi(idx, i)
                    if mcs != NO_MCS:
                        alloc[0] = radio.mcs.tbs_bits(mcs)

        chosen = self.rr.select(eligible, on_skip)
        if chosen is not None:
            served_bits = self._serve(users[chosen], i, now)
            if chosen == TEST_USER:
                alloc[0] = served_bits

        if self.flow_controlled:
            self._issue_grant(alloc[0], now)

        if i + 1 < self.n_tti:
            sim.schedule(now + self.tti, self._tti, i + 1)

    def _issue_grant(self, allocated_bits: int, now: int) -> None:
        line = self._ubs_line
        while self._ubs_pos < len(line) and line[self._ubs_pos][0] <= now:
            self._ubs_seen = line[self._ubs_pos][1]
            self._ubs_pos += 1
        u = self.users[TEST_USER]
        grant = self.allocator.issue_grant(u.queue.total, self._ubs_seen, allocated_bits, now)
        u.rnc.receive_grant(grant)

    def _serve(self, u: _User, i: int, now: int) -> int:
        """Transmit one block for ``u``. Returns the new-data NRT bits carried (0 for HARQ retx)."""
        harq = u.harq
        proc = harq.next_retx() if harq.n_pending_retx else None
        nrt_bits = 0
        if proc is not None:
            block = harq.retransmit(proc)
        else:
            mcs = self.radio.reported_cqi(u.idx, i)
            pdus = u.queue.dequeue_for_tti(self.pdus_per_block[mcs])
            proc = harq.free_process()
            block = TransportBlock(u.idx, u.next_tsn, mcs, pdus, now)
            u.next_tsn += 1
            harq.load(proc, block)
            tbs = self.radio.mcs.tbs_bits(mcs)
            rt_bits = sum(p.payload_bits for p in pdus if p.flow == RT)
            nrt_bits = tbs - rt_bits
            if self.cfg.nrt_rate_estimate == "dequeued":
                nrt_bits = sum(p.payload_bits for p in pdus if p.flow == NRT)
            if self.trace_cqi:
                self.cqi_trace.append((i, u.idx, mcs, self.radio.measured_cqi[i - self.radio.cqi_delay, u.idx]))
        ok = self.radio.transmit_block(block.mcs, self.radio.sinr(u.idx, i), block.tx_count)
        if ok:
            self.sim.schedule(now + self.tti, self._ue_on_block, u, block.tsn, block.pdus)
        self.sim.schedule(now + self.cfg.harq_feedback_delay_us, self._nodeb_on_feedback, u, proc.pid, ok)
        return nrt_bits

    def _nodeb_on_feedback(self, u: _User, pid: int, ack: bool) -> None:
        outcome, block = u.harq.on_feedback(pid, ack)
        if outcome == "dropped":
            if u.idx == TEST_USER:
                self.metrics.harq_rt_losses += sum(1 for p in block.pdus if p.flow == RT)
            self._ue_deliver(u, u.reorder.push(block.tsn, None))

    # ---- UE -----------------------------------------------------------------------------------

    def _ue_on_block(self, u: _User, tsn: int, pdus: list[Pdu]) -> None:
        self._ue_deliver(u, u.reorder.push(tsn, pdus))

    def _ue_deliver(self, u: _User, blocks: list[list[Pdu]]) -> None:
        now = self.sim.now
        gap = False
        for blk in blocks:
            for p in blk:
                if p.flow == NRT:
                    done, g = u.am_rx.on_pdu(p)
                    gap = gap or g
                    for seg in done:
                        self._tcp_deliver(u, seg)
                else:
                    pkt = u.um_rx.on_pdu(p)
                    if pkt is not None:
                        self.metrics.record_voip(pkt.packet_id, pkt.created_at, now)
        if gap:
            self._send_status(u)
        if u.am_rx.dirty and not u.status_armed:
            u.status_armed = True
            self.sim.schedule_in(self.cfg.rlc_status_period_us, self._status_timer, u)

    def _tcp_deliver(self, u: _User, seg: Segment) -> None:
        ack, new = u.tcp_rx.on_segment(seg.seq, seg.length)
        if new and u.idx == TEST_USER:
            self.metrics.record_nrt(self.sim.now, new)
        self.sim.schedule_in(self.uplink_us, u.sender.on_ack, ack)

    def _status_timer(self, u: _User) -> None:
        u.status_armed = False
        if u.am_rx.dirty:
            self._send_status(u)

    def _send_status(self, u: _User) -> None:
        self.sim.schedule_in(self.cfg.iub_delay_us, self._rnc_on_status, u, u.am_rx.make_status())

    def _rnc_on_status(self, u: _User, status) -> None:
        retx, dropped = u.rnc.am.on_status(status)
        if retx:
            self._active.add(u.idx)
        for p in dropped:
            self.sim.schedule_in(self.cfg.iub_delay_us, self._ue_on_rlc_discard, u, p)

    def _ue_on_rlc_discard(self, u: _User, pdu: Pdu) -> None:
        for seg in u.am_rx.on_discard(pdu):
            self._tcp_deliver(u, seg)

    # ---- run ----------------------------------------------------------------------------------

    def run(self) -> RunResult:
        sim = self.sim
        for u in self.users:
            sim.schedule(0, u.sender.start)
        sim.schedule(self.voip.start(0), self._voip_event)
        sim.schedule(0, self._tti, 0)
        sim.run_until(self.cfg.sim_duration_us)
        return self._result()

    def ledger(self) -> dict[str, LedgerLine]:
        t = self.users[TEST_USER]
        out = {}
        for u in self.users:
            am = u.rnc.am
            out[f"nrt_pdus_user{u.idx}"] = LedgerLine(
                am.created, u.am_rx.delivered_pdus, 0, am.discarded, am.outstanding_undelivered())
        m = self.metrics
        # a decoded block stays in its HARQ process until the ACK lands, so it can also be
        # held for reordering or already delivered; count each undelivered PDU once
        air = {id(p) for b in t.harq.blocks_in_flight() for p in b.pdus if p.flow == RT and not p.delivered}
        air.update(id(p) for p in t.reorder.pdus_held() if p.flow == RT)
        rt_in_flight = len(t.rnc.um_queue) + t.iub_rt_transit + t.queue.rt_count + len(air)
        out["rt_pdus"] = LedgerLine(t.rnc.um_created, t.um_rx.delivered_pdus, t.queue.drops[RT],
                                    m.harq_rt_losses, rt_in_flight)
        out["voip_packets"] = LedgerLine(
            m.voip_generated, len(m.voip), t.queue.drops[RT], m.harq_rt_losses + t.um_rx.discarded_packets,
            self.voip_core_transit + rt_in_flight)
        return out

    def _result(self) -> RunResult:
        cfg = self.cfg
        m = self.metrics
        t = self.users[TEST_USER]
        series = m.series()
        thr = np.array([r[1] for r in series])
        cov = float(thr.std() / thr.mean()) if thr.mean() > 0 else float("nan")
        d_mean, d_p95 = m.voip_delay_stats()
        lost = t.queue.drops[RT] + m.harq_rt_losses + t.um_rx.discarded_packets
        summary = RunSummary(
            policy=cfg.policy, n_users=cfg.n_users, seed=cfg.master_seed,
            nrt_throughput_bps=m.throughput_bps(cfg.sim_duration_s), nrt_throughput_cov=cov,
            voip_delay_mean_ms=d_mean, voip_delay_p95_ms=d_p95,
            voip_loss_ratio=lost / m.voip_generated if m.voip_generated else 0.0,
            machs_nrt_drops=t.queue.drops[NRT], machs_rt_drops=t.queue.drops[RT],
            rlc_retx_count=t.rnc.am.retransmissions, rlc_giveups=t.rnc.am.discarded,
            tcp_timeouts=t.sender.timeouts, tcp_fast_retx=t.sender.fast_retx)
        return RunResult(cfg, summary, series, self.ledger(), self.sim.fired, self.cqi_trace,
                         self.sim.transcript)


def run(cfg: RunConfig, **kwargs) -> RunResult:
    return Cell(cfg, **kwargs).run()
