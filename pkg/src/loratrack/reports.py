"""Machine-readable reports: airtime/current table, step-count accuracy
table, energy budget and link sweeps."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .energy import (SEND_CURRENT_MA, EnergyReport, daily_energy,
                     default_phase_table, duty_cycle_energy, solar_balance)
from .lora_phy import (SF_MAX, SF_MIN, LinkEnv, RadioConfig, link_budget,
                       receive_decision, send_period, time_on_air)
from .stepcount import DEFAULT_CONFIG, StepCounterConfig, count_batch
from .synthgen import DEFAULT_GAIT, GaitProfile, fill_fifo, generate_gait

PAYLOAD_BYTES = 16

#: Field-trial average step-count error (percent) per (target steps, fs Hz),
#: carried in the accuracy table for side-by-side comparison.
REFERENCE_ERROR_PCT = {
    (100, 6): 3.0, (200, 6): 8.0, (300, 6): 6.0, (400, 6): 5.0,
    (100, 3): 11.0, (200, 3): 14.0, (300, 3): 17.0, (400, 3): 10.0,
}


def toa_table(payload_bytes: int = PAYLOAD_BYTES,
              base: RadioConfig | None = None) -> list[dict]:
    """Airtime, measured send period and per-transmission charge per SF."""
    base = base or RadioConfig()
    rows = []
    for sf in range(SF_MIN, SF_MAX + 1):
        cfg = replace(base, sf=sf)
        period = send_period(sf)
        rows.append({
            "sf": sf,
            "time_on_air_ms": time_on_air(cfg, payload_bytes),
            "send_period_ms": period,
            "current_ma": SEND_CURRENT_MA,
            "charge_mas": SEND_CURRENT_MA * period / 1000.0,
        })
    return rows


def steps_trial(target_steps: int, fs_hz: float, seed: int,
                profile: GaitProfile = DEFAULT_GAIT,
                config: StepCounterConfig = DEFAULT_CONFIG) -> tuple[int, int]:
    """(counted, true) for one seeded walk of target_steps steps."""
    duration_ms = target_steps / profile.step_frequency_hz * 1000.0
    trace, true_steps = generate_gait(profile, duration_ms, fs_hz, seed)
    counted = sum(count_batch(b, config) for b in fill_fifo(trace))
    return counted, true_steps


def steps_accuracy_table(targets: tuple[int, ...] = (100, 200, 300, 400),
                         rates_hz: tuple[float, ...] = (6.0, 3.0),
                         trials: int = 20,
                         profile: GaitProfile = DEFAULT_GAIT,
                         config: StepCounterConfig = DEFAULT_CONFIG) -> list[dict]:
    """Mean relative counting error per (target, rate) cell over seeded trials."""
    rows = []
    for fs in rates_hz:
        for target in targets:
            errors = []
            for seed in range(trials):
                counted, true_steps = steps_trial(target, fs, seed, profile, config)
                errors.append(abs(counted - true_steps) / true_steps)
            rows.append({
                "target_steps": target,
                "fs_hz": fs,
                "trials": trials,
                "mean_error_pct": 100.0 * float(np.mean(errors)),
                "reference_error_pct": REFERENCE_ERROR_PCT.get((target, int(fs))),
            })
    return rows


def energy_report(sf: int = 12, fs_hz: float = 6.0, tx_per_day: int = 24,
                  duty_period_ms: float = 3_600_000.0,
                  panel_ma: float = 40.0, charge_hours: float = 0.5) -> dict:
    """Full energy budget: duty-cycle ledger, daily total, solar balance."""
    phases = default_phase_table(sf, fs_hz)
    report: EnergyReport = duty_cycle_energy(phases, sf, fs_hz, duty_period_ms)
    daily = daily_energy(report, tx_per_day)
    sustainable, margin = solar_balance(daily, panel_ma, charge_hours)
    report.sustainable = sustainable
    report.solar_margin_mah = margin
    return {
        "sf": sf,
        "fs_hz": fs_hz,
        "tx_per_day": tx_per_day,
        "phase_charges_mas": report.phase_charges_mas,
        "q_c_mas": report.q_c_mas,
        "q_s_mas": report.q_s_mas,
        "q_t_mas": report.q_t_mas,
        "n_cycles": report.n_cycles,
        "q_duty_mas": report.q_duty_mas,
        "daily_mah": daily,
        "solar_panel_ma": panel_ma,
        "solar_charge_hours": charge_hours,
        "solar_margin_mah": margin,
        "sustainable": sustainable,
        "note": "only the send current is a measured value; "
                "other phase currents are calibration defaults",
    }


def linkscan_table(distances_m: tuple[float, ...],
                   sfs: tuple[int, ...] = tuple(range(SF_MIN, SF_MAX + 1)),
                   tx_powers_dbm: tuple[float, ...] = (20.0,),
                   env: LinkEnv | None = None,
                   base: RadioConfig | None = None) -> list[dict]:
    """RSSI/SNR/delivery grid over distance, SF and transmit power."""
    env = env or LinkEnv()
    base = base or RadioConfig()
    rows = []
    for distance in distances_m:
        for sf in sfs:
            for power in tx_powers_dbm:
                cfg = replace(base, sf=sf, tx_power_dbm=power)
                rx = link_budget(cfg, env, distance)
                delivered = receive_decision(rx, sf, cfg.bw_hz, env.noise_figure_db)
                rows.append({
                    "distance_m": distance,
                    "sf": sf,
                    "tx_power_dbm": power,
                    "rssi_dbm": rx.rssi_dbm,
                    "snr_db": rx.snr_db,
                    "delivered": delivered,
                })
    return rows
