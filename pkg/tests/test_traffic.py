import pytest
from hypothesis import given, settings, strategies as st

from hsdpasim.kernel import Simulator, rng_stream
from hsdpasim.traffic import (Phase, TcpConnState, TcpReceiver, TcpSender, VoipSource, VoipState,
                              tcp_on_ack, tcp_on_dup_ack, tcp_on_timeout, tcp_window_allows)

MSS = 536


# ---- VoIP -------------------------------------------------------------------------------------

def test_voip_talk_spurt_emits_every_interval():
    src = VoipSource(rng_stream(1, "voip"), mean_on_s=1e6, mean_off_s=1e-3)
    t = src.start(0)
    assert src.state is VoipState.ON and t == 0
    times = []
    for _ in range(5):
        pkt = src.tick(t)
        times.append(pkt.created_at)
        assert pkt.bits == 320
        t = src.next_time
    assert times == [0, 20000, 40000, 60000, 80000]


def test_voip_silent_when_off():
    src = VoipSource(rng_stream(2, "voip"), mean_on_s=1e-3, mean_off_s=1e6)
    t = src.start(0)
    assert src.state is VoipState.OFF and t > 0
    assert src.tick(0) is None
    assert src.emitted == 0


def test_voip_activity_factor_is_half():
    src = VoipSource(rng_stream(11, "voip"), 3.0, 3.0)
    horizon = 10_000 * 1_000_000
    t = src.start(0)
    while t < horizon:
        src.tick(t)
        t = src.next_time
    on = src.on_time_us
    if src.state is VoipState.ON:
        on += horizon - src.on_since
    assert abs(on / horizon - 0.5) <= 0.02


# ---- TCP Reno state machine -------------------------------------------------------------------

def conn(**kw) -> TcpConnState:
    base = dict(mss=MSS, rwnd=1 << 30)
    base.update(kw)
    return TcpConnState(**base)


def test_window_examples():
    assert tcp_window_allows(conn(cwnd=2)) == 1072
    full = conn(cwnd=4, snd_nxt=4 * MSS, snd_max=4 * MSS)
    assert tcp_window_allows(full) == 0
    assert tcp_window_allows(conn(cwnd=10, rwnd=536)) == 536


def test_slow_start_doubles_per_ack():
    c = conn(cwnd=1, snd_nxt=MSS, snd_max=MSS)
    assert tcp_on_ack(c, MSS) == "new"
    assert c.cwnd == 2


def test_congestion_avoidance_adds_about_one_per_rtt():
    c = conn(cwnd=10, ssthresh=5, phase=Phase.CONG_AVOID, snd_nxt=10 * MSS, snd_max=10 * MSS)
    for i in range(1, 11):
        tcp_on_ack(c, i * MSS)
    assert c.cwnd == pytest.approx(11, abs=0.1)


def test_triple_dup_ack_enters_fast_recovery():
    c = conn(cwnd=16, snd_nxt=16 * MSS, snd_max=16 * MSS)
    assert tcp_on_dup_ack(c) is False
    assert tcp_on_dup_ack(c) is False
    assert tcp_on_dup_ack(c) is True
    assert c.ssthresh == 8 and c.cwnd == 11 and c.phase is Phase.FAST_RECOVERY
    tcp_on_dup_ack(c)
    assert c.cwnd == 12


def test_full_ack_deflates_window():
    c = conn(cwnd=13, ssthresh=8, phase=Phase.FAST_RECOVERY, snd_nxt=16 * MSS, snd_max=16 * MSS)
    assert tcp_on_ack(c, 16 * MSS) == "new"
    assert c.cwnd == 8 and c.phase is Phase.CONG_AVOID


def test_timeout_collapses_window_and_backs_off():
    c = conn(cwnd=20, snd_nxt=20 * MSS, snd_max=20 * MSS, rto_ms=1000)
    tcp_on_timeout(c)
    assert c.cwnd == 1 and c.ssthresh == 10 and c.rto_ms == 2000
    assert c.snd_nxt == c.snd_una
    for _ in range(10):
        tcp_on_timeout(c)
    assert c.rto_ms == 60000


def test_stale_and_future_acks_ignored():
    c = conn(cwnd=4, snd_una=2 * MSS, snd_nxt=4 * MSS, snd_max=4 * MSS)
    assert tcp_on_ack(c, MSS) == "ignored"
    assert tcp_on_ack(c, 9 * MSS) == "ignored"


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(["new", "dup", "timeout"]), max_size=80))
def test_cwnd_stays_within_bounds(events):
    c = conn(rwnd=64 * MSS, ssthresh=64)
    c.snd_nxt = c.snd_max = 64 * MSS
    for ev in events:
        if ev == "new" and c.snd_una < c.snd_max:
            tcp_on_ack(c, c.snd_una + MSS)
        elif ev == "dup":
            tcp_on_ack(c, c.snd_una)
        elif ev == "timeout":
            tcp_on_timeout(c)
            c.snd_nxt = c.snd_max
        assert 1 <= c.cwnd <= 64 + 3 + 80
        assert c.ssthresh >= 2
        if c.phase is not Phase.FAST_RECOVERY:
            assert c.cwnd <= 64


# ---- TCP over a fixed-delay loop ----------------------------------------------------------------

def loop(delay_us: int, drop=lambda seg: False, rwnd_segments=64):
    sim = Simulator()
    rx = TcpReceiver()
    state = TcpConnState(mss=MSS, rwnd=rwnd_segments * MSS, ssthresh=rwnd_segments)
    holder = {}

    def deliver(seg):
        ack, _ = rx.on_segment(seg.seq, seg.length)
        sim.schedule_in(delay_us // 2, holder["tx"].on_ack, ack)

    def transmit(seg):
        if not drop(seg):
            sim.schedule_in(delay_us // 2, deliver, seg)

    holder["tx"] = TcpSender(sim, 0, state, 40, transmit)
    return sim, holder["tx"], rx


def test_window_limited_goodput():
    rtt = 200_000
    sim, tx, rx = loop(rtt)
    sim.schedule(0, tx.start)
    sim.run_until(5_000_000)
    b0 = rx.delivered_bytes
    sim.run_until(25_000_000)
    rate = (rx.delivered_bytes - b0) * 8 / 20.0
    assert rate == pytest.approx(64 * MSS * 8 / (rtt / 1e6), rel=0.02)
    assert tx.timeouts == 0


def test_single_loss_recovered_by_fast_retransmit():
    dropped = set()

    def drop(seg):
        if seg.seq == 30 * MSS and seg.seq not in dropped:
            dropped.add(seg.seq)
            return True
        return False

    sim, tx, rx = loop(100_000, drop)
    sim.schedule(0, tx.start)
    sim.run_until(10_000_000)
    assert tx.fast_retx == 1 and tx.timeouts == 0
    assert rx.rcv_nxt > 100 * MSS


def test_blackhole_triggers_backed_off_timeouts():
    cut = {"on": False}
    sim, tx, rx = loop(100_000, lambda seg: cut["on"])
    sim.schedule(0, tx.start)
    sim.run_until(2_000_000)
    cut["on"] = True
    sim.run_until(200_000_000)
    assert tx.timeouts >= 5
    assert tx.conn.rto_ms == 60000
    assert tx.conn.cwnd == 1


def test_receiver_reassembles_out_of_order():
    rx = TcpReceiver()
    assert rx.on_segment(MSS, MSS) == (0, 0)
    assert rx.on_segment(0, MSS) == (2 * MSS, 2 * MSS)
    assert rx.on_segment(0, MSS) == (2 * MSS, 0)
    assert rx.duplicate_segments == 1
