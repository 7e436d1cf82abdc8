import pytest

from hsdpasim.config import ConfigError, RunConfig, dumps, load, loads, save


def test_defaults_match_cell_parameters():
    c = RunConfig()
    assert (c.tti_us, c.pdu_size_bits, c.iub_delay_us, c.core_delay_us) == (2000, 320, 20000, 70000)
    assert (c.tsp_R, c.etsp_L, c.etsp_H, c.buffer_N) == (10, 30, 100, 150)
    assert (c.fc_alpha, c.fc_k) == (0.7, 0.5)
    assert (c.harq_processes, c.harq_feedback_delay_us, c.cqi_delay_tti, c.n_codes) == (4, 5000, 3, 5)
    assert c.tcp_mss_bytes == 536 and c.test_ue_distance_km == 0.2


def test_round_trip(tmp_path):
    c = RunConfig(n_users=7, policy="TSP", fc_k=0.25, mcs_thresholds_db=(-1.0, 2.0, 5.0, 8.0, 11.0))
    assert loads(dumps(c)) == c
    p = tmp_path / "run.cfg"
    save(c, p)
    assert load(p) == c


def test_comments_and_partial_files():
    c = loads("# sweep override\npolicy = FIFO  # baseline\n\nn_users = 20\n")
    assert c.policy == "FIFO" and c.n_users == 20
    assert c.buffer_N == 150


@pytest.mark.parametrize("text", ["bogus = 1", "n_users 3", "n_users = three"])
def test_bad_files_rejected(text):
    with pytest.raises(ConfigError):
        loads(text)


@pytest.mark.parametrize("kw", [dict(n_users=0), dict(policy="RED"), dict(etsp_L=200),
                                dict(fc_k=1.5), dict(nrt_rate_estimate="x"), dict(mcs_tbs_bits=(1,))])
def test_invalid_values_rejected(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw)
