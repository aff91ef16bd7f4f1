"""Discrete-event scenario runner.

A single monotonic event queue advances device state machines, radio link
draws, gateway forwarding and server ingest on one simulated clock. The
same scenario can run fully in-process or through real loopback UDP sockets;
the server store contents come out identical either way. Identical scenario
and seed give a byte-identical event log and store file.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import frames
from .device import (AdrApplied, DeviceConfig, DeviceMac, Downlink,
                     DownlinkIgnored, FifoFull, FifoRead, ScheduleTimer,
                     Timer, Transmit)
from .gateway import KEEPALIVE_INTERVAL_MS, Forwarder, InProcessLink, UdpClientLink
from .geo import haversine_m
from .lora_phy import LinkEnv, ObstructionBand, RadioConfig, link_budget, receive_decision
from .server import NetworkServer, UdpServerTransport
from .store import Store
from .synthgen import (GaitProfile, GpsFix, MovementPath, fill_fifo,
                       generate_gait, position_at, sample_gps)

DEFAULT_DEV_ADDR = "01020304"
DEFAULT_FRAME_KEY = "000102030405060708090a0b0c0d0e0f"
DEFAULT_GATEWAY_EUI = "aabbccddeeff0011"


@dataclass
class DeviceSpec:
    config: DeviceConfig
    gait: GaitProfile
    path: MovementPath
    gps_sigma_m: float = 4.0


@dataclass
class Scenario:
    seed: int
    duration_ms: float
    gateway_lat: float
    gateway_lon: float
    gateway_eui: bytes
    link_env: LinkEnv
    devices: list[DeviceSpec]
    adr_enabled: bool = True
    adr_margin_db: float = 10.0
    keepalive_ms: float = KEEPALIVE_INTERVAL_MS


class ScenarioError(ValueError):
    """Raised with all validation problems listed before any execution."""


def default_scenario_dict() -> dict:
    """One device ambling a slow 24 h loop that reaches ~3.1 km out."""
    return {
        "seed": 7,
        "duration_ms": 86_460_000,
        "gateway": {"lat_deg": 40.0, "lon_deg": 116.32,
                    "eui": DEFAULT_GATEWAY_EUI},
        "link_env": {"path_loss_exp": 2.7, "shadowing_sigma_db": 0.0,
                     "noise_figure_db": 6.0, "ant_gain_tx_dbi": 2.0,
                     "ant_gain_rx_dbi": 2.0, "obstructions": []},
        "adr": {"enabled": True, "margin_db": 10.0},
        "devices": [{
            "dev_addr": DEFAULT_DEV_ADDR,
            "frame_key": DEFAULT_FRAME_KEY,
            "fs_hz": 6,
            "duty_period_ms": 3_600_000,
            "radio": {"sf": 12, "bw_hz": 125_000, "cr_denominator": 5,
                      "tx_power_dbm": 20.0, "freq_hz": 433_000_000.0,
                      "preamble_symbols": 8},
            "gait": {"step_frequency_hz": 2.0, "amplitude_g": 0.5,
                     "noise_sigma_g": 0.05, "bias_g": 1.0},
            "gps_sigma_m": 2.0,
            "battery_capacity_mah": 1000.0,
            "path": [[40.0, 116.32587, 0],
                     [40.0, 116.35522, 28_800_000],
                     [40.00719, 116.35522, 57_600_000],
                     [40.00719, 116.32587, 90_000_000]],
        }],
    }


def scenario_from_dict(raw: dict) -> Scenario:
    """Build and validate a scenario; all problems are reported together."""
    errors: list[str] = []
    seed = raw.get("seed")
    if not isinstance(seed, int):
        errors.append("seed must be an integer")
        seed = 0
    duration = raw.get("duration_ms", 0)
    if not duration or duration <= 0:
        errors.append("duration_ms must be positive")

    gw = raw.get("gateway", {})
    try:
        gateway_eui = bytes.fromhex(gw.get("eui", DEFAULT_GATEWAY_EUI))
        if len(gateway_eui) != 8:
            errors.append("gateway.eui must be 8 bytes of hex")
    except ValueError:
        errors.append("gateway.eui is not valid hex")
        gateway_eui = b"\x00" * 8

    env_raw = dict(raw.get("link_env", {}))
    obstructions = tuple(ObstructionBand(b["min_m"], b["max_m"], b["loss_db"])
                         for b in env_raw.pop("obstructions", []))
    try:
        link_env = LinkEnv(obstructions=obstructions, **env_raw)
    except (TypeError, ValueError) as exc:
        errors.append(f"link_env: {exc}")
        link_env = LinkEnv()

    adr = raw.get("adr", {})
    devices: list[DeviceSpec] = []
    seen_addrs: set[str] = set()
    for i, d in enumerate(raw.get("devices", [])):
        label = f"devices[{i}]"
        try:
            addr_hex = d["dev_addr"]
            if addr_hex in seen_addrs:
                errors.append(f"{label}: duplicate dev_addr {addr_hex}")
            seen_addrs.add(addr_hex)
            config = DeviceConfig(
                dev_addr=frames.hex_to_addr(addr_hex),
                frame_key=bytes.fromhex(d["frame_key"]),
                radio=RadioConfig(**d.get("radio", {})),
                duty_period_ms=float(d.get("duty_period_ms", 3_600_000)),
                fs_hz=float(d.get("fs_hz", 6)),
                battery_capacity_mah=float(d.get("battery_capacity_mah", 1000.0)),
            )
            gait = GaitProfile(**d.get("gait", {}))
            path = MovementPath(tuple((w[0], w[1], w[2]) for w in d["path"]))
            spec = DeviceSpec(config=config, gait=gait, path=path,
                              gps_sigma_m=float(d.get("gps_sigma_m", 4.0)))
            if duration and duration < config.duty_period_ms:
                errors.append(f"{label}: duration shorter than one duty period")
            if duration and (path.t_start_ms > 0 or path.t_end_ms < duration):
                errors.append(f"{label}: path must cover [0, duration_ms]")
            devices.append(spec)
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"{label}: {exc}")
    if not devices and not errors:
        errors.append("scenario has no devices")
    if errors:
        raise ScenarioError("; ".join(errors))
    return Scenario(
        seed=seed, duration_ms=float(duration),
        gateway_lat=float(gw.get("lat_deg", 0.0)),
        gateway_lon=float(gw.get("lon_deg", 0.0)),
        gateway_eui=gateway_eui, link_env=link_env, devices=devices,
        adr_enabled=bool(adr.get("enabled", True)),
        adr_margin_db=float(adr.get("margin_db", 10.0)),
        keepalive_ms=float(gw.get("keepalive_ms", KEEPALIVE_INTERVAL_MS)),
    )


def load_scenario(path: str | Path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


@dataclass
class EventLog:
    records: list[tuple[float, str, str, str]] = field(default_factory=list)

    def add(self, t_ms: float, component: str, event: str, detail: str = "") -> None:
        self.records.append((t_ms, component, event, detail))

    def to_text(self) -> str:
        return "".join(f"{t:.3f}\t{component}\t{event}\t{detail}\n"
                       for t, component, event, detail in self.records)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


@dataclass
class RunResult:
    scenario: Scenario
    events: EventLog
    store: Store
    server: NetworkServer
    forwarder: Forwarder
    devices: dict[str, DeviceMac]
    summary: dict


class _SimClock:
    """Heap of (t, priority, seq, fn); seq keeps equal-time pops stable."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, int, Callable[[], None]]] = []
        self._seq = 0
        self.now_ms = 0.0

    def schedule(self, t_ms: float, fn: Callable[[], None], priority: int = 5) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t_ms, priority, self._seq, fn))

    def run_until(self, end_ms: float) -> None:
        while self._heap and self._heap[0][0] <= end_ms:
            t, _prio, _seq, fn = heapq.heappop(self._heap)
            self.now_ms = t
            fn()


# event priorities at equal timestamps: FIFO reads land before the duty
# boundary that closes their period; radio deliveries come after MAC timers
_PRIO_FIFO = 0
_PRIO_DEVICE_TIMER = 1
_PRIO_RADIO = 2
_PRIO_GATEWAY = 3
_PRIO_POLL = 4


class SimRunner:
    def __init__(self, scenario: Scenario, store_path: str | Path | None = None,
                 link_address: tuple[str, int] | None = None,
                 remote_server: NetworkServer | None = None):
        self.scenario = scenario
        self.clock = _SimClock()
        self.log = EventLog()
        keys = {frames.addr_to_hex(d.config.dev_addr): d.config.frame_key
                for d in scenario.devices}
        if link_address is None:
            self.store = Store(store_path)
            self.server = NetworkServer(self.store, keys,
                                        adr_margin_db=scenario.adr_margin_db,
                                        adr_enabled=scenario.adr_enabled)
            link = InProcessLink(self.server.handle_datagram)
        else:
            # datagrams go over the wire; counters/store live on that server
            self.server = remote_server
            self.store = remote_server.store if remote_server else Store(None)
            link = UdpClientLink(*link_address)
        seeds = np.random.SeedSequence(scenario.seed).spawn(2 + 2 * len(scenario.devices))
        self.forwarder = Forwarder(
            link, scenario.gateway_eui, rng=np.random.default_rng(seeds[0]),
            schedule=lambda t, fn: self.clock.schedule(t, fn, _PRIO_GATEWAY),
            on_downlink=self._schedule_downlink)
        self._shadow_rng = np.random.default_rng(seeds[1])
        self.devices: dict[str, DeviceMac] = {}
        self._specs: dict[str, DeviceSpec] = {}
        self._gps_rngs: dict[str, np.random.Generator] = {}
        self._gait_seeds: dict[str, np.random.SeedSequence] = {}
        for i, spec in enumerate(scenario.devices):
            addr = frames.addr_to_hex(spec.config.dev_addr)
            self._specs[addr] = spec
            self._gait_seeds[addr] = seeds[2 + 2 * i]
            self._gps_rngs[addr] = np.random.default_rng(seeds[3 + 2 * i])
            self.devices[addr] = DeviceMac(spec.config,
                                           gps_source=self._gps_source(addr))

    # -- wiring -------------------------------------------------------------

    def _gps_source(self, addr: str) -> Callable[[float], GpsFix]:
        def source(t_ms: float) -> GpsFix:
            spec = self._specs[addr]
            lat, lon = position_at(spec.path, t_ms)
            fix = sample_gps(lat, lon, t_ms=t_ms, error_sigma_m=spec.gps_sigma_m,
                             seed=self._gps_rngs[addr])
            self.log.add(t_ms, f"device/{addr}", "gps_fix",
                         f"lat={fix.lat_deg!r} lon={fix.lon_deg!r} err_m={fix.error_m:.3f}")
            return fix
        return source

    def _schedule_downlink(self, tmst_ms: float, frame: bytes) -> None:
        self.log.add(self.clock.now_ms, "gateway", "downlink_scheduled",
                     f"tmst_ms={tmst_ms:.3f}")
        self.clock.schedule(tmst_ms, lambda: self._deliver_downlink(tmst_ms, frame),
                            _PRIO_RADIO)

    def _deliver_downlink(self, t_ms: float, frame: bytes) -> None:
        try:
            addr = frames.addr_to_hex(frames.peek_dev_addr(frame))
        except frames.FrameFormatError:
            return
        dev = self.devices.get(addr)
        if dev is None:
            return
        actions = dev.tick(Downlink(frame), t_ms)
        for action in actions:
            if isinstance(action, AdrApplied):
                self.log.add(t_ms, f"device/{addr}", "adr_applied", f"sf={action.sf}")
            elif isinstance(action, DownlinkIgnored):
                self.log.add(t_ms, f"device/{addr}", "downlink_ignored", action.reason)

    def _handle_actions(self, addr: str, actions: list, now_ms: float) -> None:
        for action in actions:
            if isinstance(action, ScheduleTimer):
                self.clock.schedule(action.at_ms,
                                    lambda at=action.at_ms: self._device_timer(addr, at),
                                    _PRIO_DEVICE_TIMER)
            elif isinstance(action, Transmit):
                self._handle_transmit(addr, action, now_ms)
            elif isinstance(action, FifoRead):
                self.log.add(now_ms, f"device/{addr}", "fifo_read",
                             f"t={action.t_ms:.3f} steps={action.steps}")

    def _device_timer(self, addr: str, at_ms: float) -> None:
        dev = self.devices[addr]
        before = dev.state
        actions = dev.tick(Timer(), at_ms)
        if dev.state is not before:
            self.log.add(at_ms, f"device/{addr}", "state",
                         f"{before.value}->{dev.state.value}")
        self._handle_actions(addr, actions, at_ms)

    def _handle_transmit(self, addr: str, action: Transmit, now_ms: float) -> None:
        spec = self._specs[addr]
        lat, lon = position_at(spec.path, now_ms)
        distance = max(1.0, haversine_m(self.scenario.gateway_lat,
                                        self.scenario.gateway_lon, lat, lon))
        rx = link_budget(action.radio, self.scenario.link_env, distance,
                         seed=self._shadow_rng)
        delivered = receive_decision(rx, action.radio.sf, action.radio.bw_hz,
                                     self.scenario.link_env.noise_figure_db)
        self.log.add(now_ms, f"device/{addr}", "uplink_tx",
                     f"fcnt={self.devices[addr].fcnt} sf={action.radio.sf} "
                     f"dist_m={distance:.1f} rssi={rx.rssi_dbm:.1f} "
                     f"snr={rx.snr_db:.1f} delivered={delivered}")
        if delivered:
            end = action.airtime_end_ms
            self.clock.schedule(
                end, lambda: self.forwarder.forward_uplink(action.frame, rx,
                                                           action.radio, end),
                _PRIO_RADIO)

    def _fifo_event(self, addr: str, batch, t_ms: float) -> None:
        dev = self.devices[addr]
        actions = dev.tick(FifoFull(batch), t_ms)
        self._handle_actions(addr, actions, t_ms)

    # -- run ------------------------------------------------------------------

    def run(self) -> RunResult:
        sc = self.scenario
        for addr, spec in self._specs.items():
            trace, true_steps = generate_gait(
                spec.gait, sc.duration_ms, spec.config.fs_hz,
                seed=self._gait_seeds[addr])
            self.log.add(0.0, f"device/{addr}", "gait",
                         f"samples={len(trace)} true_steps={true_steps}")
            self.devices[addr].tick(Timer(), 0.0)
            self.log.add(0.0, f"device/{addr}", "boot", "state=sleep")
            for i, batch in enumerate(fill_fifo(trace)):
                t_int = (i * 32 + 31) * 1000.0 / spec.config.fs_hz
                self.clock.schedule(
                    t_int, lambda b=batch, a=addr, t=t_int: self._fifo_event(a, b, t),
                    _PRIO_FIFO)
            duty = spec.config.duty_period_ms
            k = 1
            while k * duty <= sc.duration_ms:
                self.clock.schedule(k * duty,
                                    lambda a=addr, t=k * duty: self._device_timer(a, t),
                                    _PRIO_DEVICE_TIMER)
                k += 1
        t = sc.keepalive_ms
        while t <= sc.duration_ms:
            self.clock.schedule(t, lambda at=t: self.forwarder.poll_downlink(at),
                                _PRIO_POLL)
            t += sc.keepalive_ms

        self.clock.run_until(sc.duration_ms)

        self.store.flush_pending()
        summary = self._summary()
        self.log.add(sc.duration_ms, "sim", "done",
                     json.dumps(summary, sort_keys=True))
        if isinstance(self.forwarder.link, UdpClientLink):
            self.forwarder.link.close()
        return RunResult(scenario=sc, events=self.log, store=self.store,
                         server=self.server, forwarder=self.forwarder,
                         devices=self.devices, summary=summary)

    def _summary(self) -> dict:
        g = self.forwarder.counters
        out = {
            "uplinks_attempted": sum(d.fcnt for d in self.devices.values()),
            "uplinks_forwarded": g.uplinks_forwarded,
            "uplinks_lost": g.uplinks_lost,
            "downlinks_scheduled": g.downlinks_scheduled,
            "adr_applied": sum(d.downlinks_applied for d in self.devices.values()),
            "fifo_overruns": sum(d.fifo_overruns for d in self.devices.values()),
            "track_points": sum(len(v) for v in self.store.tracks.values()),
            "step_buckets": sum(len(v) for v in self.store.steps.values()),
        }
        if self.server is not None:
            out["server_accepted"] = self.server.counters.accepted
            out["replay_rejected"] = self.server.counters.replay_rejected
            out["mic_failures"] = self.server.counters.mic_failures
        return out


def run_scenario(scenario: Scenario, store_path: str | Path | None = None,
                 log_path: str | Path | None = None,
                 transport: str = "inprocess") -> RunResult:
    """Run a scenario end to end; transport is "inprocess" or "socket".

    Socket mode starts a loopback UDP server internally, runs the same event
    schedule through real datagrams, and tears the socket down afterwards.
    """
    if transport == "socket":
        keys = {frames.addr_to_hex(d.config.dev_addr): d.config.frame_key
                for d in scenario.devices}
        # the socket-side server owns the store; the runner talks to it only
        # through datagrams
        udp_store = Store(store_path)
        udp_server = NetworkServer(udp_store, keys,
                                   adr_margin_db=scenario.adr_margin_db,
                                   adr_enabled=scenario.adr_enabled)
        transport_srv = UdpServerTransport(udp_server, "127.0.0.1", 0).start()
        try:
            runner = SimRunner(scenario, link_address=transport_srv.address,
                               remote_server=udp_server)
            result = runner.run()
        finally:
            transport_srv.stop()
        udp_store.flush_pending()
        if log_path is not None:
            result.events.write(log_path)
        return result
    runner = SimRunner(scenario, store_path=store_path)
    result = runner.run()
    if log_path is not None:
        result.events.write(log_path)
    return result
