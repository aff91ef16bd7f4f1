"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines inline.
Expected values marked as derived come from the independent oracles in
tests/oracles.py, never from the code under test.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from loratrack import frames, reports, udp_protocol
from loratrack.cli import main as cli_main
from loratrack.lora_phy import (LinkEnv, ObstructionBand, RadioConfig,
                                link_budget, receive_decision)
from loratrack.sim import default_scenario_dict, run_scenario, scenario_from_dict
from loratrack.synthgen import position_at

from .oracles import airtime_oracle_ms, haversine_oracle_m, pack_coord_e5
from .test_server_store import make_server, uplink_datagram


@contextmanager
def criterion(number, label):
    try:
        yield
    except Exception:
        print(f"\nACCEPTANCE {number} FAIL - {label}")
        raise
    print(f"\nACCEPTANCE {number} PASS - {label}")


def test_criterion_1_table1_fidelity():
    with criterion(1, "Table 1 send periods, current, analytic airtime"):
        start = time.perf_counter()
        rows = reports.toa_table(payload_bytes=16)
        elapsed = time.perf_counter() - start
        by_sf = {row["sf"]: row for row in rows}
        assert {sf: by_sf[sf]["send_period_ms"] for sf in range(7, 13)} == {
            7: 70.0, 8: 120.0, 9: 230.0, 10: 420.0, 11: 910.0, 12: 1650.0}
        assert all(row["current_ma"] == 134.0 for row in rows)
        expected_toa = {7: 51.456, 8: 92.672, 9: 164.864, 10: 329.728,
                        11: 659.456, 12: 1318.912}
        for sf, expected in expected_toa.items():
            assert by_sf[sf]["time_on_air_ms"] == pytest.approx(expected, abs=1e-3)
            assert by_sf[sf]["time_on_air_ms"] == pytest.approx(
                airtime_oracle_ms(sf, 16), abs=1e-3)
        # monotone in SF in both columns
        periods = [by_sf[sf]["send_period_ms"] for sf in range(7, 13)]
        toas = [by_sf[sf]["time_on_air_ms"] for sf in range(7, 13)]
        assert all(a < b for a, b in zip(periods, periods[1:]))
        assert all(a < b for a, b in zip(toas, toas[1:]))
        assert elapsed < 1.0


def test_criterion_2_step_accuracy_bands():
    with criterion(2, "step error <=10% at 6 Hz and 3 Hz strictly worse"):
        start = time.perf_counter()
        rows = reports.steps_accuracy_table(targets=(100, 200, 300, 400),
                                            rates_hz=(6.0, 3.0), trials=20)
        elapsed = time.perf_counter() - start
        errors = {(row["target_steps"], row["fs_hz"]): row["mean_error_pct"]
                  for row in rows}
        for target in (100, 200, 300, 400):
            assert errors[(target, 6.0)] <= 10.0
            assert errors[(target, 3.0)] > errors[(target, 6.0)]
        # field-trial reference bands carried alongside for comparison
        assert all(row["reference_error_pct"] is not None for row in rows)
        print("  target  6Hz err%  (ref)   3Hz err%  (ref)")
        for target in (100, 200, 300, 400):
            print(f"  {target:>6}  {errors[(target, 6.0)]:8.2f}  "
                  f"({reports.REFERENCE_ERROR_PCT[(target, 6)]:4.1f})   "
                  f"{errors[(target, 3.0)]:8.2f}  "
                  f"({reports.REFERENCE_ERROR_PCT[(target, 3)]:4.1f})")
        assert elapsed < 30.0


def test_criterion_3_energy_budget():
    with criterion(3, "daily 18 mAh +-15%, solar sustainable, exact identity"):
        report = reports.energy_report(sf=12, fs_hz=6.0, tx_per_day=24,
                                       panel_ma=40.0, charge_hours=0.5)
        assert 18.0 * 0.85 <= report["daily_mah"] <= 18.0 * 1.15
        assert report["sustainable"] is True
        # the duty-cycle identity holds to exact arithmetic on every report
        for sf in range(7, 13):
            for fs in (3.0, 6.0):
                rep = reports.energy_report(sf=sf, fs_hz=fs, tx_per_day=24)
                assert rep["q_duty_mas"] == (rep["n_cycles"]
                                             * (rep["q_c_mas"] + rep["q_s_mas"])
                                             + rep["q_t_mas"])
        print(f"  daily={report['daily_mah']:.2f} mAh, "
              f"solar margin={report['solar_margin_mah']:.2f} mAh")


def test_criterion_4_link_properties():
    with criterion(4, "monotone RSSI, 3 km delivery, range ordering, "
                      "+1 dB shift, obstruction anomaly"):
        env = LinkEnv()   # shadowing off by default
        cfg = RadioConfig(sf=12, tx_power_dbm=20.0)
        rssis = [link_budget(cfg, env, d).rssi_dbm for d in range(100, 5001, 100)]
        assert all(a > b for a, b in zip(rssis, rssis[1:]))

        rx3km = link_budget(cfg, env, 3000.0)
        assert receive_decision(rx3km, 12, cfg.bw_hz, env.noise_figure_db)

        def max_range_m(sf):
            best = 0.0
            for d in np.geomspace(100, 500_000, 600):
                rx = link_budget(RadioConfig(sf=sf, tx_power_dbm=20.0), env, float(d))
                if receive_decision(rx, sf, 125_000, env.noise_figure_db):
                    best = float(d)
            return best

        assert max_range_m(12) > max_range_m(7)

        lo = link_budget(RadioConfig(sf=12, tx_power_dbm=19.0), env, 2000.0)
        hi = link_budget(RadioConfig(sf=12, tx_power_dbm=20.0), env, 2000.0)
        assert hi.rssi_dbm - lo.rssi_dbm == pytest.approx(1.0, abs=1e-9)
        assert hi.snr_db - lo.snr_db == pytest.approx(1.0, abs=1e-9)

        blocked = LinkEnv(obstructions=(ObstructionBand(1900, 2100, 15.0),))
        assert (link_budget(cfg, blocked, 3000.0).rssi_dbm
                > link_budget(cfg, blocked, 2000.0).rssi_dbm)
        print(f"  rssi(3km)={rx3km.rssi_dbm:.2f} dBm, "
              f"range SF12={max_range_m(12)/1000:.1f} km > SF7={max_range_m(7)/1000:.1f} km")


def test_criterion_5_end_to_end_conservation():
    with criterion(5, "24 h scenario: 24 uplinks, 24 points, 144 buckets, "
                      "10 m track bound, step conservation"):
        start = time.perf_counter()
        scenario = scenario_from_dict(default_scenario_dict())
        result = run_scenario(scenario)
        elapsed = time.perf_counter() - start

        assert result.summary["server_accepted"] == 24
        assert result.summary["track_points"] == 24
        assert result.summary["step_buckets"] == 144

        spec = scenario.devices[0]
        worst = 0.0
        for point in result.store.tracks["01020304"]:
            lat, lon = position_at(spec.path, point.t_ms)
            worst = max(worst, haversine_oracle_m(lat, lon,
                                                  point.lat_deg, point.lon_deg))
        assert worst <= 10.0

        device = result.devices["01020304"]
        stored = sum(b.steps for b in result.store.steps["01020304"])
        assert stored == device.steps_quantized_total
        assert abs(stored - device.steps_reported_total) <= 4 * 144
        assert elapsed < 10.0
        print(f"  worst track error {worst:.2f} m; stored steps {stored} vs "
              f"counted {device.steps_reported_total} ({elapsed:.1f} s)")


def test_criterion_6_wire_and_codec_golden():
    with criterion(6, "wire round-trips, golden header/payload bytes, "
                      "replay rejection"):
        rng = np.random.default_rng(2024)
        eui = bytes.fromhex("aabbccddeeff0011")
        for _ in range(1000):
            frame = rng.integers(0, 256, size=29, dtype=np.uint8).tobytes()
            rxpk = udp_protocol.Rxpk.from_reception(
                frame, tmst=int(rng.integers(0, 2**32)), freq_hz=433e6,
                sf=int(rng.integers(7, 13)), bw_hz=125_000, cr_denominator=5,
                rssi_dbm=float(rng.uniform(-140, -30)),
                snr_db=float(rng.uniform(-25, 30)))
            token = rng.integers(0, 256, size=2, dtype=np.uint8).tobytes()
            decoded = udp_protocol.decode_datagram(
                udp_protocol.encode_push_data(token, eui, [rxpk]))
            assert udp_protocol.Rxpk.from_dict(decoded.body["rxpk"][0]) == rxpk
            txpk = udp_protocol.Txpk.build(frame, tmst=int(rng.integers(0, 2**32)),
                                           freq_hz=433e6, sf=12, bw_hz=125_000,
                                           cr_denominator=5)
            back = udp_protocol.decode_datagram(
                udp_protocol.encode_pull_resp(token, txpk))
            assert udp_protocol.Txpk.from_dict(back.body["txpk"]) == txpk

        header = udp_protocol.encode_push_data(
            bytes([0x1A, 0x2B]), eui,
            [udp_protocol.Rxpk.from_reception(b"\x00" * 29, 0, 433e6, 12,
                                              125_000, 5, -95.0, 21.9)])[:12]
        assert header == bytes.fromhex("021a2b00aabbccddeeff0011")

        payload = frames.encode_payload(
            frames.UplinkPayload.build(39.90420, 116.40740, [0] * 6, 100))
        assert payload[0:4] == bytes.fromhex("94e33c00") == pack_coord_e5(39.90420)
        assert payload[4:8] == bytes.fromhex("a49fb100") == pack_coord_e5(116.40740)

        server, _ = make_server()
        datagram = uplink_datagram(fcnt=9)
        for _ in range(3):
            server.handle_datagram(datagram)
        assert server.counters.accepted == 1
        assert server.counters.replay_rejected == 2   # once per duplicate


def test_criterion_7_cli_run_determinism(tmp_path):
    with criterion(7, "run --seed 7 twice: byte-identical log and store"):
        for name in ("one", "two"):
            code = cli_main(["run", "--seed", "7",
                             "--out-dir", str(tmp_path / name)])
            assert code == 0
        store_a = (tmp_path / "one" / "store.jsonl").read_bytes()
        store_b = (tmp_path / "two" / "store.jsonl").read_bytes()
        log_a = (tmp_path / "one" / "events.log").read_bytes()
        log_b = (tmp_path / "two" / "events.log").read_bytes()
        assert store_a == store_b
        assert log_a == log_b
        print(f"  store {len(store_a)} bytes, log {len(log_a)} bytes, identical")
