import math

import pytest

from hsdpasim import Cell, RunConfig, run

SHORT = RunConfig(sim_duration_s=6.0)


@pytest.mark.parametrize("policy", ["FIFO", "TSP", "ETSP"])
@pytest.mark.parametrize("n_users", [1, 6])
def test_ledger_balances_and_invariants_hold(policy, n_users):
    res = run(SHORT.replace(policy=policy, n_users=n_users, master_seed=n_users), check_invariants=True)
    for name, line in res.ledger.items():
        assert line.balanced, (name, line)
    s = res.summary
    assert 0 < s.nrt_throughput_bps <= 4800 / 0.002
    assert 0.0 <= s.voip_loss_ratio <= 1.0
    for f in ("machs_nrt_drops", "machs_rt_drops", "rlc_retx_count", "rlc_giveups", "tcp_timeouts",
              "tcp_fast_retx"):
        assert getattr(s, f) >= 0


def test_same_seed_replays_identically():
    cfg = SHORT.replace(policy="ETSP", n_users=4, master_seed=9, sim_duration_s=3.0)
    a = run(cfg, record_transcript=True)
    b = run(cfg, record_transcript=True)
    assert a.transcript == b.transcript
    assert a.summary == b.summary and a.series == b.series


def test_different_seeds_differ():
    a = run(SHORT.replace(n_users=4, master_seed=1, sim_duration_s=3.0)).summary
    b = run(SHORT.replace(n_users=4, master_seed=2, sim_duration_s=3.0)).summary
    assert a.nrt_throughput_bps != b.nrt_throughput_bps


def test_voip_delay_respects_transport_floor():
    cell = Cell(SHORT.replace(policy="TSP", n_users=3, master_seed=4, sim_duration_s=20.0))
    cell.run()
    floor_ms = (SHORT.core_delay_us + SHORT.iub_delay_us + SHORT.tti_us) / 1000
    assert cell.metrics.voip
    assert min(s.delay_ms for s in cell.metrics.voip) >= floor_ms


def test_tcp_receives_an_in_order_prefix():
    cell = Cell(SHORT.replace(policy="FIFO", n_users=1, master_seed=3))
    cell.run()
    for u in cell.users:
        rx = u.tcp_rx
        assert rx.delivered_bytes == rx.rcv_nxt
        assert all(seq > rx.rcv_nxt for seq in rx._ooo)
    assert cell.metrics.nrt_bytes == cell.users[0].tcp_rx.delivered_bytes


def test_scheduled_mcs_is_the_three_tti_old_measurement():
    cell = Cell(SHORT.replace(n_users=5, master_seed=2), trace_cqi=True)
    cell.run()
    assert cell.cqi_trace
    for i, u, used, measured in cell.cqi_trace:
        assert i >= 3
        assert used == measured == cell.radio.measured_cqi[i - 3, u]


def test_etsp_never_forwards_more_than_granted():
    cell = Cell(SHORT.replace(policy="ETSP", n_users=5, master_seed=8))
    cell.run()
    r = cell.users[0].rnc
    assert r.dispatched_nrt_total - r.am.retransmissions <= r.granted_nrt_total + 1


def test_etsp_keeps_queue_low():
    cell = Cell(SHORT.replace(policy="ETSP", n_users=10, master_seed=5), check_invariants=True)
    res = cell.run()
    assert res.summary.machs_nrt_drops < 200
    assert cell.users[0].queue.total <= SHORT.buffer_N


def test_dequeued_rate_estimate_runs():
    res = run(SHORT.replace(policy="ETSP", nrt_rate_estimate="dequeued", sim_duration_s=3.0))
    assert all(line.balanced for line in res.ledger.values())


def test_series_covers_session():
    res = run(SHORT.replace(sim_duration_s=4.0))
    assert [r[0] for r in res.series] == [1.0, 2.0, 3.0, 4.0]
    total = sum(r[1] for r in res.series) * 1.0
    assert total == pytest.approx(res.summary.nrt_throughput_bps * 4.0)
    assert not math.isnan(res.summary.nrt_throughput_cov)


@pytest.mark.parametrize("seed", range(1, 13))
def test_ledger_balances_at_arbitrary_stop_times(seed):
    # stopping mid-TTI leaves decoded blocks waiting for their HARQ ACK
    cfg = SHORT.replace(policy=("FIFO", "TSP", "ETSP")[seed % 3], n_users=1 + seed % 4, master_seed=seed,
                        sim_duration_s=2.0 + seed * 0.0137)
    res = run(cfg)
    assert all(line.balanced for line in res.ledger.values()), res.ledger
