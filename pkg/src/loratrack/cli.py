"""Command-line front end; argument parsing and formatting only, all logic
lives in the library modules.

Subcommands: run, toa, steps, energy, linkscan, serve, export.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import reports
from .api import create_app, track_feature_collection
from .config import load_settings
from .server import NetworkServer, UdpServerTransport
from .sim import (ScenarioError, default_scenario_dict, run_scenario,
                  scenario_from_dict)
from .store import Store


def _open_out(path: str | None):
    return open(path, "w", encoding="utf-8", newline="") if path else sys.stdout


def _write_csv(rows: list[dict], out_path: str | None) -> None:
    fh = _open_out(out_path)
    try:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


def _write_json(obj, out_path: str | None) -> None:
    fh = _open_out(out_path)
    try:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_run(args: argparse.Namespace) -> int:
    if args.scenario:
        raw = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    else:
        raw = default_scenario_dict()
    raw["seed"] = args.seed
    if args.duration_ms is not None:
        raw["duration_ms"] = args.duration_ms
    if args.dump_scenario:
        Path(args.dump_scenario).write_text(
            json.dumps(raw, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    try:
        scenario = scenario_from_dict(raw)
    except ScenarioError as exc:
        for line in str(exc).split("; "):
            print(f"scenario error: {line}", file=sys.stderr)
        return 2
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store_path = out_dir / "store.jsonl"
    store_path.unlink(missing_ok=True)
    result = run_scenario(scenario, store_path=store_path,
                          log_path=out_dir / "events.log",
                          transport=args.transport)
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    lost = result.summary["uplinks_lost"]
    return 0 if lost == 0 else 1


def cmd_toa(args: argparse.Namespace) -> int:
    rows = reports.toa_table(payload_bytes=args.payload_bytes)
    for row in rows:
        row["time_on_air_ms"] = f"{row['time_on_air_ms']:.3f}"
        row["charge_mas"] = f"{row['charge_mas']:.3f}"
    _write_csv(rows, args.out)
    return 0


def cmd_steps(args: argparse.Namespace) -> int:
    targets = tuple(int(t) for t in args.targets.split(","))
    rates = tuple(float(r) for r in args.rates.split(","))
    rows = reports.steps_accuracy_table(targets=targets, rates_hz=rates,
                                        trials=args.trials)
    for row in rows:
        row["mean_error_pct"] = f"{row['mean_error_pct']:.2f}"
    _write_csv(rows, args.out)
    return 0


def cmd_energy(args: argparse.Namespace) -> int:
    report = reports.energy_report(sf=args.sf, fs_hz=args.fs,
                                   tx_per_day=args.tx_per_day,
                                   panel_ma=args.panel_ma,
                                   charge_hours=args.charge_hours)
    _write_json(report, args.out)
    return 0


def cmd_linkscan(args: argparse.Namespace) -> int:
    distances = tuple(float(d) for d in args.distances.split(","))
    sfs = tuple(int(s) for s in args.sfs.split(","))
    powers = tuple(float(p) for p in args.powers.split(","))
    rows = reports.linkscan_table(distances, sfs, powers)
    for row in rows:
        row["rssi_dbm"] = f"{row['rssi_dbm']:.2f}"
        row["snr_db"] = f"{row['snr_db']:.2f}"
        row["delivered"] = str(row["delivered"]).lower()
    _write_csv(rows, args.out)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    settings = load_settings(args.config)
    store = Store(settings.data_file)
    server = NetworkServer(store, settings.device_keys(),
                           adr_margin_db=settings.adr_margin_db,
                           adr_enabled=settings.adr_enabled)
    transport = UdpServerTransport(server, settings.udp_host,
                                   settings.udp_port).start()
    print(f"UDP forwarder listener on {transport.address[0]}:{transport.address[1]}")
    try:
        uvicorn.run(create_app(server), host=settings.http_host,
                    port=settings.http_port, log_level="info")
    finally:
        transport.stop()
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    store = Store(args.store)
    points = store.tracks.get(args.device, [])
    if args.from_ms is not None:
        points = [p for p in points if p.t_ms >= args.from_ms]
    if args.to_ms is not None:
        points = [p for p in points if p.t_ms <= args.to_ms]
    _write_json(track_feature_collection(args.device, points), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loratrack",
        description="LoRa location/activity monitoring: simulator, reports and service")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario end to end")
    p.add_argument("--scenario", help="scenario JSON (omit for the built-in default)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--duration-ms", type=float,
                   help="override the scenario duration")
    p.add_argument("--out-dir", default="loratrack-run",
                   help="directory for store.jsonl and events.log")
    p.add_argument("--transport", choices=["inprocess", "socket"],
                   default="inprocess")
    p.add_argument("--dump-scenario", metavar="PATH",
                   help="also write the fully-populated scenario JSON")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("toa", help="airtime/current table per SF")
    p.add_argument("--payload-bytes", type=int, default=16)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_toa)

    p = sub.add_parser("steps", help="step accuracy vs sampling rate")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--targets", default="100,200,300,400",
                   help="comma-separated true step counts")
    p.add_argument("--rates", default="6,3", help="sampling rates in Hz")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_steps)

    p = sub.add_parser("energy", help="duty-cycle energy budget")
    p.add_argument("--sf", type=int, default=12)
    p.add_argument("--fs", type=float, default=6.0)
    p.add_argument("--tx-per-day", type=int, default=24)
    p.add_argument("--panel-ma", type=float, default=40.0)
    p.add_argument("--charge-hours", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_energy)

    p = sub.add_parser("linkscan", help="RSSI/SNR sweep over distance/SF/power")
    p.add_argument("--distances", default="100,500,1000,2000,3000,4000,5000",
                   help="comma-separated meters")
    p.add_argument("--sfs", default="7,8,9,10,11,12")
    p.add_argument("--powers", default="20")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_linkscan)

    p = sub.add_parser("serve", help="start the UDP ingest + HTTP API service")
    p.add_argument("--config", help="JSON settings file (env vars override)")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("export", help="GeoJSON track from a store file")
    p.add_argument("--store", required=True)
    p.add_argument("--device", required=True, help="device address, 8 hex chars")
    p.add_argument("--from", dest="from_ms", type=float)
    p.add_argument("--to", dest="to_ms", type=float)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
