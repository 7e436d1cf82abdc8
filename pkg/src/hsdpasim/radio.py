"""Radio link abstraction: path loss, AR(1) log-normal shadowing, delayed CQI, AMC and block errors."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .config import RunConfig

NO_MCS = -1


def path_loss_db(distance_km: float, const_db: float = 148.0, slope_db: float = 40.0) -> float:
    if distance_km <= 0:
        raise ValueError(f"distance must be positive, got {distance_km}")
    return const_db + slope_db * math.log10(distance_km)


def hsdsch_power_dbm(total_power_w: float, fraction: float) -> float:
    return 10.0 * math.log10(total_power_w * fraction * 1000.0)


def link_budget_sinr_db(tx_dbm: float, path_loss: float, shadow_db: float, noise_dbm: float) -> float:
    # positive shadow_db is a fade
    return tx_dbm - path_loss - shadow_db - noise_dbm


@dataclass(frozen=True)
class McsEntry:
    name: str
    threshold_db: float
    tbs_bits: int


class McsTable:
    """AMC schemes ordered as configured.

    Selection only uses the *ladder*: entries not dominated by a cheaper one.
    An entry is dominated when another entry with a threshold no higher
    offers at least the same transport block size (16QAM 1/4 at five codes
    carries no more than QPSK 1/2, so it never wins).
    """

    def __init__(self, entries: list[McsEntry], pdu_size_bits: int = 320):
        if not entries:
            raise ValueError("empty MCS table")
        self.entries = list(entries)
        self.pdu_size_bits = pdu_size_bits
        ladder = []
        for i, e in enumerate(self.entries):
            dominated = any(
                j != i
                and o.threshold_db <= e.threshold_db
                and o.tbs_bits >= e.tbs_bits
                and (o.threshold_db < e.threshold_db or o.tbs_bits > e.tbs_bits or j < i)
                for j, o in enumerate(self.entries)
            )
            if not dominated:
                ladder.append(i)
        ladder.sort(key=lambda i: self.entries[i].threshold_db)
        self.ladder = ladder
        thresholds = [self.entries[i].threshold_db for i in ladder]
        tbs = [self.entries[i].tbs_bits for i in ladder]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("ladder thresholds must be strictly increasing")
        if any(b < a for a, b in zip(tbs, tbs[1:])):
            raise ValueError("ladder TBS must be non-decreasing")
        if min(tbs) < pdu_size_bits:
            raise ValueError("every transport block must hold at least one PDU")
        self._thresholds = np.array(thresholds)
        self._ladder = np.array(ladder)
        self.pdus_per_block = [e.tbs_bits // pdu_size_bits for e in self.entries]

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "McsTable":
        entries = [
            McsEntry(n, float(t), int(b))
            for n, t, b in zip(cfg.mcs_names, cfg.mcs_thresholds_db, cfg.mcs_tbs_bits)
        ]
        return cls(entries, cfg.pdu_size_bits)

    def __len__(self) -> int:
        return len(self.entries)

    def threshold(self, mcs: int) -> float:
        return self.entries[mcs].threshold_db

    def tbs_bits(self, mcs: int) -> int:
        return self.entries[mcs].tbs_bits

    def cqi_from_sinr(self, sinr_db: float) -> int:
        """Highest ladder MCS whose threshold is <= ``sinr_db`` (inclusive), else ``NO_MCS``."""
        k = int(np.searchsorted(self._thresholds, sinr_db, side="right")) - 1
        return NO_MCS if k < 0 else int(self._ladder[k])

    def cqi_from_sinr_array(self, sinr_db: np.ndarray) -> np.ndarray:
        k = np.searchsorted(self._thresholds, sinr_db, side="right") - 1
        out = np.full(np.shape(sinr_db), NO_MCS, dtype=np.int64)
        ok = k >= 0
        out[ok] = self._ladder[k[ok]]
        return out


def block_error_probability(margin_db: float, bler_at_threshold: float = 0.1) -> float:
    """Halves per dB of margin above the selection threshold; capped at 1."""
    return min(1.0, bler_at_threshold * 2.0 ** (-margin_db))


def effective_sinr_db(actual_sinr_db: float, harq_tx_count: int, gain_db: float = 3.0) -> float:
    if harq_tx_count < 1:
        raise ValueError("harq_tx_count starts at 1")
    return actual_sinr_db + gain_db * (harq_tx_count - 1)


def shadowing_rho(tti_us: int, decorrelation_ms: float) -> float:
    return math.exp(-(tti_us / 1000.0) / decorrelation_ms)


def ar1_shadowing(rng: np.random.Generator, n_steps: int, n_users: int, sigma_db: float, rho: float) -> np.ndarray:
    """Stationary AR(1) shadowing in dB, shape ``(n_steps, n_users)``, marginal ``N(0, sigma^2)``."""
    noise = rng.standard_normal((n_steps, n_users))
    x0 = noise[0] * sigma_db
    innov = noise[1:] * (sigma_db * math.sqrt(1.0 - rho * rho))
    out = np.empty((n_steps, n_users))
    out[0] = x0
    if n_steps > 1:
        out[1:], _ = lfilter([1.0], [1.0, -rho], innov, axis=0, zi=(rho * x0)[None, :])
    return out


class RadioLink:
    """Per-user SINR and CQI traces for a whole run, indexed by TTI number.

    SINR is sampled once per TTI. The CQI report usable at TTI ``i`` is the one
    measured at TTI ``i - cqi_delay_tti``; before the first report arrives the
    user is not schedulable.
    """

    def __init__(self, cfg: RunConfig, distances_km: list[float], shadow_rng: np.random.Generator,
                 error_rng: np.random.Generator, n_tti: int):
        self.cfg = cfg
        self.mcs = McsTable.from_config(cfg)
        self.distances_km = list(distances_km)
        self.cqi_delay = cfg.cqi_delay_tti
        self.rho = shadowing_rho(cfg.tti_us, cfg.shadow_decorrelation_ms)
        n_users = len(distances_km)
        self.shadow_db = ar1_shadowing(shadow_rng, n_tti + 1, n_users, cfg.shadow_sigma_db, self.rho)
        tx = hsdsch_power_dbm(cfg.node_b_power_w, cfg.hsdsch_power_fraction)
        pl = np.array([path_loss_db(d, cfg.path_loss_const_db, cfg.path_loss_slope_db) for d in distances_km])
        self.sinr_db = tx - pl[None, :] - self.shadow_db - cfg.noise_floor_dbm
        self.measured_cqi = self.mcs.cqi_from_sinr_array(self.sinr_db)
        self._sinr_rows = self.sinr_db.tolist()
        self._cqi_rows = self.measured_cqi.tolist()
        self._error_rng = error_rng
        self._uniforms = error_rng.random(4096).tolist()
        self._u_idx = 0
        self.bler_at_threshold = cfg.bler_at_threshold
        self.gain_db = cfg.harq_combining_gain_db

    def sinr(self, user: int, tti: int) -> float:
        return self._sinr_rows[tti][user]

    def reported_cqi(self, user: int, tti: int) -> int:
        src = tti - self.cqi_delay
        if src < 0:
            return NO_MCS
        return self._cqi_rows[src][user]

    def _uniform(self) -> float:
        if self._u_idx >= len(self._uniforms):
            self._uniforms = self._error_rng.random(4096).tolist()
            self._u_idx = 0
        u = self._uniforms[self._u_idx]
        self._u_idx += 1
        return u

    def transmit_block(self, mcs: int, actual_sinr_db: float, harq_tx_count: int) -> bool:
        """Draw a decode outcome; True means DECODED."""
        margin = effective_sinr_db(actual_sinr_db, harq_tx_count, self.gain_db) - self.mcs.threshold(mcs)
        p = block_error_probability(margin, self.bler_at_threshold)
        return self._uniform() >= p
