import csv
import io
import json

import pytest

from loratrack.cli import main
from loratrack.config import load_settings


def run_cli(args, capsys):
    code = main(args)
    return code, capsys.readouterr().out


class TestToa:
    def test_csv_table(self, capsys):
        code, out = run_cli(["toa"], capsys)
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out)))
        assert [int(r["sf"]) for r in rows] == [7, 8, 9, 10, 11, 12]
        by_sf = {int(r["sf"]): r for r in rows}
        assert by_sf[12]["send_period_ms"] == "1650.0"
        assert by_sf[12]["time_on_air_ms"] == "1318.912"
        assert all(r["current_ma"] == "134.0" for r in rows)

    def test_out_file(self, tmp_path, capsys):
        out_path = tmp_path / "toa.csv"
        code, _ = run_cli(["toa", "--out", str(out_path)], capsys)
        assert code == 0
        assert out_path.read_text().startswith("sf,")


class TestSteps:
    def test_small_trial_table(self, capsys):
        code, out = run_cli(["steps", "--trials", "2"], capsys)
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out)))
        assert len(rows) == 8   # 4 targets x 2 rates
        assert {r["fs_hz"] for r in rows} == {"6.0", "3.0"}
        assert all(r["reference_error_pct"] for r in rows)


class TestEnergy:
    def test_json_report(self, capsys):
        code, out = run_cli(["energy"], capsys)
        assert code == 0
        report = json.loads(out)
        assert report["sustainable"] is True
        assert report["n_cycles"] == 675
        assert report["daily_mah"] == pytest.approx(18.1, abs=0.1)


class TestLinkscan:
    def test_grid_size(self, capsys):
        code, out = run_cli(["linkscan", "--distances", "1000,2000",
                             "--sfs", "7,12", "--powers", "14,20"], capsys)
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out)))
        assert len(rows) == 8

    def test_power_shift_is_exact(self, capsys):
        code, out = run_cli(["linkscan", "--distances", "2500",
                             "--sfs", "12", "--powers", "17,20"], capsys)
        rows = list(csv.DictReader(io.StringIO(out)))
        rssi = {r["tx_power_dbm"]: float(r["rssi_dbm"]) for r in rows}
        assert rssi["20.0"] - rssi["17.0"] == pytest.approx(3.0, abs=1e-9)


class TestRunAndExport:
    def test_run_writes_outputs_and_succeeds(self, tmp_path, capsys):
        scenario = {
            **json.loads(json.dumps(_default_raw())),
            "duration_ms": 3_100_000,
        }
        scenario["devices"][0]["duty_period_ms"] = 600_000
        scenario_path = tmp_path / "scenario.json"
        scenario_path.write_text(json.dumps(scenario))
        out_dir = tmp_path / "out"
        code, out = run_cli(["run", "--scenario", str(scenario_path),
                             "--seed", "7", "--out-dir", str(out_dir),
                             "--dump-scenario", str(tmp_path / "dumped.json")],
                            capsys)
        assert code == 0
        summary = json.loads(out)
        assert summary["uplinks_attempted"] == 5
        assert (out_dir / "store.jsonl").exists()
        assert (out_dir / "events.log").exists()
        assert json.loads((tmp_path / "dumped.json").read_text())["seed"] == 7

        code, out = run_cli(["export", "--store", str(out_dir / "store.jsonl"),
                             "--device", "01020304"], capsys)
        assert code == 0
        geojson = json.loads(out)
        assert geojson["type"] == "FeatureCollection"
        assert geojson["features"][0]["properties"]["point_count"] == 5

    def test_invalid_scenario_exits_2(self, tmp_path, capsys):
        bad = _default_raw()
        bad["duration_ms"] = -1
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        code = main(["run", "--scenario", str(path), "--seed", "1",
                     "--out-dir", str(tmp_path / "o")])
        assert code == 2


def _default_raw():
    from loratrack.sim import default_scenario_dict
    return default_scenario_dict()


class TestSettings:
    def test_defaults(self):
        settings = load_settings()
        assert settings.udp_port == 1700
        assert settings.adr_margin_db == 10.0

    def test_file_and_env_overrides(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "data_file": "x.jsonl", "udp_port": 1701,
            "devices": {"01020304": "000102030405060708090a0b0c0d0e0f"},
        }))
        env = {"LORATRACK_UDP_PORT": "1799", "LORATRACK_ADR_MARGIN_DB": "12.5"}
        settings = load_settings(config, env=env)
        assert settings.data_file == "x.jsonl"
        assert settings.udp_port == 1799          # env wins
        assert settings.adr_margin_db == 12.5
        assert settings.device_keys()["01020304"] == bytes(range(16))
