"""LoRa physical-layer model: airtime, log-distance link budget and per-SF
reception decisions.

The model keeps RSSI and SNR independent of the spreading factor; SF only
moves the demodulation threshold (and the airtime). Shadowing defaults to
off so link sweeps are deterministic; an excess-loss map keyed by distance
bands stands in for terrain obstructions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SF_MIN, SF_MAX = 7, 12
TX_POWER_MAX_DBM = 20.0

#: SX1276 demodulator SNR limits (dB) per spreading factor at 125 kHz.
SNR_LIMITS_DB: dict[int, float] = {
    7: -7.5,
    8: -10.0,
    9: -12.5,
    10: -15.0,
    11: -17.5,
    12: -20.0,
}

#: Measured duration of one complete send period (ms) per SF; the analytic
#: airtime runs ~25-35% shorter because the measurement includes radio
#: wake-up and FIFO handling around the actual transmission.
SEND_PERIOD_MS: dict[int, float] = {
    7: 70.0,
    8: 120.0,
    9: 230.0,
    10: 420.0,
    11: 910.0,
    12: 1650.0,
}

#: Free-space path loss at 1 m for 433 MHz: 20*log10(d_km) + 20*log10(f_MHz) + 32.45.
REF_LOSS_433MHZ_1M_DB = 20 * math.log10(433.0) - 27.55


def _check_sf(sf: int) -> None:
    if not SF_MIN <= sf <= SF_MAX:
        raise ValueError(f"spreading factor must be {SF_MIN}..{SF_MAX}, got {sf}")


@dataclass(frozen=True)
class RadioConfig:
    """Transmit parameters of one LoRa link end."""

    sf: int = 12
    bw_hz: int = 125_000
    cr_denominator: int = 5      # 4/5 coding -> 5
    preamble_symbols: int = 8
    tx_power_dbm: float = 20.0
    freq_hz: float = 433_000_000.0
    explicit_header: bool = True
    crc_on: bool = True
    ldro: bool | None = None     # None: auto, on at SF11/12 with 125 kHz

    def __post_init__(self) -> None:
        _check_sf(self.sf)
        if not 5 <= self.cr_denominator <= 8:
            raise ValueError("cr_denominator must be 5..8")
        if self.tx_power_dbm > TX_POWER_MAX_DBM:
            raise ValueError(f"tx_power_dbm must be <= {TX_POWER_MAX_DBM}")

    @property
    def ldro_enabled(self) -> bool:
        if self.ldro is not None:
            return self.ldro
        return self.sf >= 11 and self.bw_hz <= 125_000

    @property
    def datr(self) -> str:
        return f"SF{self.sf}BW{self.bw_hz // 1000}"

    @property
    def codr(self) -> str:
        return f"4/{self.cr_denominator}"


@dataclass(frozen=True)
class ObstructionBand:
    """Excess loss applied to positions in a radial distance band."""

    min_m: float
    max_m: float
    loss_db: float


@dataclass(frozen=True)
class LinkEnv:
    """Propagation environment for the log-distance path loss model."""

    ref_loss_db: float = REF_LOSS_433MHZ_1M_DB
    path_loss_exp: float = 2.7          # suburban, open with low buildings
    shadowing_sigma_db: float = 0.0
    noise_figure_db: float = 6.0
    ant_gain_tx_dbi: float = 2.0
    ant_gain_rx_dbi: float = 2.0
    obstructions: tuple[ObstructionBand, ...] = ()

    def __post_init__(self) -> None:
        if self.path_loss_exp < 2.0:
            raise ValueError("path_loss_exp must be >= 2")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing_sigma_db must be >= 0")

    def obstruction_db(self, distance_m: float) -> float:
        return sum(b.loss_db for b in self.obstructions
                   if b.min_m <= distance_m < b.max_m)


@dataclass(frozen=True)
class RxMeta:
    """Reception metadata at the gateway."""

    rssi_dbm: float
    snr_db: float
    distance_m: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.rssi_dbm):
            raise ValueError("rssi_dbm must be finite")
        if self.distance_m <= 0:
            raise ValueError("distance_m must be positive")


def time_on_air(cfg: RadioConfig, payload_len_bytes: int) -> float:
    """Analytic LoRa airtime in ms for an application payload of given size."""
    _check_sf(cfg.sf)
    if payload_len_bytes < 1:
        raise ValueError("payload_len_bytes must be >= 1")
    t_sym = (2 ** cfg.sf) / cfg.bw_hz * 1000.0
    t_preamble = (cfg.preamble_symbols + 4.25) * t_sym
    de = 1 if cfg.ldro_enabled else 0
    ih = 0 if cfg.explicit_header else 1
    crc = 1 if cfg.crc_on else 0
    numer = 8 * payload_len_bytes - 4 * cfg.sf + 28 + 16 * crc - 20 * ih
    n_payload = 8 + max(math.ceil(numer / (4 * (cfg.sf - 2 * de))) * cfg.cr_denominator, 0)
    return t_preamble + n_payload * t_sym


def send_period(sf: int, table: dict[int, float] | None = None) -> float:
    """Duration of one measured send period in ms (configurable table)."""
    _check_sf(sf)
    return (table or SEND_PERIOD_MS)[sf]


def path_loss(env: LinkEnv, distance_m: float, shadowing_draw_db: float = 0.0) -> float:
    """Log-distance path loss in dB, plus shadowing and obstruction excess."""
    if distance_m < 1.0:
        raise ValueError("distance_m must be >= 1")
    return (env.ref_loss_db
            + 10.0 * env.path_loss_exp * math.log10(distance_m)
            + shadowing_draw_db
            + env.obstruction_db(distance_m))


def noise_floor_dbm(bw_hz: int, noise_figure_db: float) -> float:
    return -174.0 + 10.0 * math.log10(bw_hz) + noise_figure_db


def sensitivity_dbm(sf: int, bw_hz: int = 125_000, noise_figure_db: float = 6.0,
                    snr_limits: dict[int, float] | None = None) -> float:
    _check_sf(sf)
    limits = snr_limits or SNR_LIMITS_DB
    return noise_floor_dbm(bw_hz, noise_figure_db) + limits[sf]


def link_budget(cfg: RadioConfig, env: LinkEnv, distance_m: float,
                seed: int | np.random.Generator | None = None) -> RxMeta:
    """RSSI and SNR at the gateway for a transmission from distance_m away."""
    draw = 0.0
    if env.shadowing_sigma_db > 0 and seed is not None:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        draw = float(rng.normal(0.0, env.shadowing_sigma_db))
    loss = path_loss(env, distance_m, draw)
    rssi = cfg.tx_power_dbm + env.ant_gain_tx_dbi + env.ant_gain_rx_dbi - loss
    snr = rssi - noise_floor_dbm(cfg.bw_hz, env.noise_figure_db)
    return RxMeta(rssi_dbm=rssi, snr_db=snr, distance_m=distance_m)


def receive_decision(rx: RxMeta, sf: int, bw_hz: int = 125_000,
                     noise_figure_db: float = 6.0,
                     snr_limits: dict[int, float] | None = None) -> bool:
    """Delivered iff RSSI clears the SF sensitivity and SNR the demod limit."""
    limits = snr_limits or SNR_LIMITS_DB
    sens = sensitivity_dbm(sf, bw_hz, noise_figure_db, snr_limits=limits)
    return rx.rssi_dbm >= sens and rx.snr_db >= limits[sf]
