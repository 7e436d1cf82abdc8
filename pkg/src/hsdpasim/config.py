"""Run configuration with the HSDPA cell defaults, and the flat ``key = value`` config file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

POLICIES = ("FIFO", "TSP", "ETSP")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 1
    sim_duration_s: float = 120.0
    n_users: int = 1
    policy: str = "ETSP"

    # air interface
    tti_us: int = 2000
    path_loss_const_db: float = 148.0
    path_loss_slope_db: float = 40.0
    node_b_power_w: float = 15.0
    hsdsch_power_fraction: float = 0.5
    noise_floor_dbm: float = -100.0
    shadow_sigma_db: float = 8.0
    shadow_decorrelation_ms: float = 50.0
    n_codes: int = 5
    mcs_names: tuple[str, ...] = ("QPSK 1/4", "QPSK 1/2", "QPSK 3/4", "16QAM 1/4", "16QAM 1/2")
    mcs_thresholds_db: tuple[float, ...] = (-2.0, 1.0, 4.0, 7.0, 10.0)
    mcs_tbs_bits: tuple[int, ...] = (1200, 2400, 3600, 2400, 4800)
    cqi_delay_tti: int = 3
    bler_at_threshold: float = 0.1
    harq_processes: int = 4
    harq_feedback_delay_us: int = 5000
    max_harq_tx: int = 4
    harq_combining_gain_db: float = 3.0
    test_ue_distance_km: float = 0.2
    bg_distance_min_km: float = 0.1
    bg_distance_max_km: float = 1.0
    scheduler: str = "RR"

    # transport network
    pdu_size_bits: int = 320
    iub_delay_us: int = 20000
    core_delay_us: int = 70000
    hsdsch_frame_us: int = 10000
    # per-user Iub transport limit in PDUs per TTI; 0 means unlimited
    iub_user_pdus_per_tti: int = 15

    # buffer management and flow control
    tsp_R: int = 10
    buffer_N: int = 150
    etsp_L: int = 30
    etsp_H: int = 100
    fc_alpha: float = 0.7
    fc_k: float = 0.5
    lambda_rt_bps: float = 16000.0
    lambda_nrt_seed_bps: float = 160000.0
    # "allocated": scheduler-offered NRT bits per TTI; "dequeued": NRT bits actually sent
    nrt_rate_estimate: str = "allocated"

    # RLC
    rlc_tx_window: int = 2048
    rlc_max_retx: int = 6
    rlc_status_period_us: int = 10000

    # TCP Reno
    tcp_mss_bytes: int = 536
    tcp_header_bytes: int = 40
    tcp_rwnd_segments: int = 64
    tcp_initial_rto_ms: float = 1000.0
    tcp_min_rto_ms: float = 1000.0
    tcp_max_rto_ms: float = 60000.0

    # VoIP ON/OFF source
    voip_mean_on_s: float = 3.0
    voip_mean_off_s: float = 3.0
    voip_interval_ms: float = 20.0
    voip_packet_bits: int = 320

    # metrics
    throughput_window_s: float = 1.0

    def __post_init__(self):
        if self.n_users < 1:
            raise ConfigError("n_users must be >= 1")
        if self.sim_duration_s <= 0:
            raise ConfigError("sim_duration_s must be > 0")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.nrt_rate_estimate not in ("allocated", "dequeued"):
            raise ConfigError("nrt_rate_estimate must be 'allocated' or 'dequeued'")
        if self.scheduler != "RR":
            raise ConfigError("only Round Robin scheduling is modelled")
        if not 0 < self.tsp_R <= self.etsp_L <= self.etsp_H <= self.buffer_N:
            raise ConfigError("thresholds must satisfy 0 < R <= L <= H <= N")
        if not 0.0 <= self.fc_k <= 1.0:
            raise ConfigError("fc_k must lie in [0, 1]")
        if not 0.0 <= self.fc_alpha <= 1.0:
            raise ConfigError("fc_alpha must lie in [0, 1]")
        n = len(self.mcs_names)
        if len(self.mcs_thresholds_db) != n or len(self.mcs_tbs_bits) != n:
            raise ConfigError("MCS names, thresholds and TBS lists must have equal length")
        if self.tti_us <= 0 or self.pdu_size_bits <= 0:
            raise ConfigError("tti_us and pdu_size_bits must be positive")

    @property
    def sim_duration_us(self) -> int:
        return int(round(self.sim_duration_s * 1_000_000))

    @property
    def tti_s(self) -> float:
        return self.tti_us / 1_000_000

    @property
    def tcp_rwnd_bytes(self) -> int:
        return self.tcp_rwnd_segments * self.tcp_mss_bytes

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(key: str, text: str):
    kind = _FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "str":
            return text
        if kind == "tuple[str, ...]":
            return tuple(s.strip() for s in text.split(","))
        if kind == "tuple[float, ...]":
            return tuple(float(s) for s in text.split(","))
        if kind == "tuple[int, ...]":
            return tuple(int(s) for s in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    raise ConfigError(f"unsupported field type {kind} for {key}")


def dumps(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def loads(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines on top of ``base``. Blank lines and ``#`` comments are skipped."""
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        changes[key] = _parse(key, value)
    return dataclasses.replace(base or RunConfig(), **changes)


def load(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    return loads(Path(path).read_text(encoding="utf-8"), base)


def save(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dumps(cfg), encoding="utf-8")
