import random

import pytest

from hsdpasim.config import RunConfig
from hsdpasim.messages import NRT, RT, CreditGrant, StatusReport, segment_packet
from hsdpasim.rnc import RlcAmEntity, RncUser

from oracles import MAX_RETX, make_script, reference_stream, run_real


# ---- segmentation -----------------------------------------------------------------------------

def test_tcp_segment_needs_fifteen_pdus():
    pdus = segment_packet(4608, 320)
    assert len(pdus) == 15
    assert [p.data_bits for p in pdus[:-1]] == [320] * 14
    assert pdus[-1].data_bits == 128 and pdus[-1].payload_bits == 320
    assert pdus[-1].is_last and not any(p.is_last for p in pdus[:-1])


def test_voip_packet_fits_one_pdu():
    (p,) = segment_packet(320, 320, flow=RT)
    assert p.data_bits == 320 and p.is_last and p.flow == RT


def test_empty_packet_rejected():
    with pytest.raises(ValueError):
        segment_packet(0, 320)


# ---- AM transmitter STATUS handling -------------------------------------------------------------

def loaded_entity(n_pdus: int) -> RlcAmEntity:
    am = RlcAmEntity(0, 320, tx_window=2048, max_retx=MAX_RETX)
    am.add_packet(320 * n_pdus, 0, "pkt")
    assert len(am.dispatch()) == n_pdus
    return am


def test_nack_requeues_pdu():
    am = loaded_entity(10)
    retx, dropped = am.on_status(StatusReport([], [5], highest_stamp=9))
    assert [p.rlc_seq for p in retx] == [5] and not dropped
    assert am.tx_buffer[5].retx_count == 1
    assert [p.rlc_seq for p in am.dispatch()] == [5]
    assert am.retransmissions == 1


def test_seventh_failure_discards_pdu():
    am = loaded_entity(10)
    am.tx_buffer[7].retx_count = 6
    retx, dropped = am.on_status(StatusReport([], [7], highest_stamp=9))
    assert not retx and [p.rlc_seq for p in dropped] == [7]
    assert 7 not in am.tx_buffer and am.discarded == 1
    retx, dropped = am.on_status(StatusReport([], [7], highest_stamp=9))
    assert not dropped and am.discarded == 1


def test_acks_advance_window():
    am = loaded_entity(6)
    am.on_status(StatusReport([0], [], 5))
    assert am.vt_a == 1
    am.on_status(StatusReport([1, 2, 3], [], 5))
    assert am.vt_a == 4 and sorted(am.tx_buffer) == [4, 5]


def test_nack_for_copy_still_in_flight_is_ignored():
    am = loaded_entity(4)
    am.on_status(StatusReport([], [1], highest_stamp=3))
    am.dispatch()  # retransmission of 1 gets stamp 4
    retx, _ = am.on_status(StatusReport([], [1], highest_stamp=3))
    assert not retx and am.stale_nacks == 1


def test_window_blocks_new_pdus_but_not_retransmissions():
    am = RlcAmEntity(0, 320, tx_window=4)
    am.add_packet(320 * 8, 0, None)
    assert len(am.dispatch()) == 4 and not am.window_open()
    am.on_status(StatusReport([1, 2, 3], [0], highest_stamp=3))
    assert [p.rlc_seq for p in am.dispatch()] == [0]


# ---- Iub forwarding ---------------------------------------------------------------------------

def grant(c_rt, c_nrt, at=0):
    return CreditGrant(0, c_rt, c_nrt, at, at)


def test_etsp_dispatches_granted_credits_only():
    u = RncUser(0, flow_controlled=True, initial_grant=grant(0.0, 3.0))
    for i in range(10):
        u.add_nrt_packet(320, 0, i)
    out = u.iub_forward(0)
    assert len(out) == 3 and all(p.flow == NRT for p in out)
    assert u.am.ubs == 7


def test_etsp_rt_credit_accumulates_to_one_pdu_every_tenth_tti():
    u = RncUser(0, flow_controlled=True, initial_grant=grant(0.1, 0.0))
    for i in range(5):
        u.add_rt_packet(320, 0, i)
    sent = [len(u.iub_forward(t)) for t in range(50)]
    assert [i for i, n in enumerate(sent) if n] == [9, 19, 29, 39, 49]


def test_grant_applies_from_effective_time():
    u = RncUser(0, flow_controlled=True, initial_grant=grant(0.0, 0.0))
    for i in range(10):
        u.add_nrt_packet(320, 0, i)
    u.receive_grant(CreditGrant(0, 0.0, 2.0, 0, 20_000))
    assert u.iub_forward(18_000) == []
    assert len(u.iub_forward(20_000)) == 2


def test_unflowcontrolled_user_sends_whole_backlog():
    u = RncUser(0, flow_controlled=False)
    for i in range(10):
        u.add_nrt_packet(320, 0, i)
    assert len(u.iub_forward(0)) == 10 and u.am.ubs == 0


def test_iub_limit_caps_one_tti():
    u = RncUser(0, flow_controlled=False, iub_limit=15)
    u.add_rt_packet(320, 0, "v")
    u.add_nrt_packet(4608 * 2, 0, "s")
    first = u.iub_forward(0)
    assert len(first) == 15 and first[0].flow == RT
    assert len(u.iub_forward(2000)) == 15


def test_rlc_window_never_closes_under_tcp_load():
    cfg = RunConfig()
    pdus_per_segment = -(-(cfg.tcp_mss_bytes + cfg.tcp_header_bytes) * 8 // cfg.pdu_size_bits)
    assert cfg.tcp_rwnd_segments * pdus_per_segment < cfg.rlc_tx_window


# ---- selective-repeat oracle equivalence --------------------------------------------------------

def test_selective_repeat_matches_reference_on_random_scripts():
    rng = random.Random(2024)
    for trial in range(1000):
        payloads, losses = make_script(rng, rng.randint(1, 12), rng.uniform(0.0, 0.3))
        want, lost = reference_stream(payloads, losses)
        assert not lost
        got, discards = run_real(payloads, losses, rng)
        assert got == want, f"script {trial}"
        assert not discards


def test_exhausted_pdus_discarded_exactly_once():
    rng = random.Random(7)
    for trial in range(200):
        payloads, losses = make_script(rng, rng.randint(2, 12), rng.uniform(0.0, 0.3), forced=rng.randint(1, 3))
        want, lost = reference_stream(payloads, losses)
        got, discards = run_real(payloads, losses, rng)
        assert got == want, f"script {trial}"
        assert set(discards) == lost and all(v == 1 for v in discards.values())
