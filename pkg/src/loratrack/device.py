"""Class A device state machine.

The device sleeps between accelerometer FIFO reads, counts steps per batch,
and once per duty period acquires a GPS fix, packs the six 10-minute step
windows with the position into a 16-byte payload, transmits, and listens in
two short receive windows for downlinks (data-rate commands).

Driven entirely by explicit events (timer, fifo_full, downlink); each tick
returns the actions the host must carry out, so a simulation or a test can
replay any schedule deterministically.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace
from typing import Callable, Union

from . import frames
from .energy import default_phase_table, duty_cycle_energy
from .lora_phy import SF_MAX, SF_MIN, RadioConfig, send_period
from .stepcount import DEFAULT_CONFIG, StepCounterConfig, StepWindow, accumulate, count_batch
from .synthgen import FifoBatch, GpsFix

log = logging.getLogger(__name__)


class DeviceState(enum.Enum):
    INIT = "init"
    STEP_COUNT = "step_count"
    SLEEP = "sleep"
    GPS_ACQUIRE = "gps_acquire"
    SEND = "send"
    RX_DELAY = "rx_delay"
    RECEIVE = "receive"


class StateError(RuntimeError):
    """Event not legal in the current state."""


@dataclass(frozen=True)
class DeviceConfig:
    dev_addr: int
    frame_key: bytes
    radio: RadioConfig = RadioConfig()
    duty_period_ms: float = 3_600_000.0
    fs_hz: float = 6.0
    gps_time_ms: float = 30_000.0
    rx1_delay_ms: float = 1000.0
    rx2_delay_ms: float = 2000.0
    rx_window_ms: float = 200.0
    battery_capacity_mah: float = 1000.0
    step_config: StepCounterConfig = DEFAULT_CONFIG

    def __post_init__(self) -> None:
        if len(self.frame_key) != 16:
            raise ValueError("frame_key must be 16 bytes")
        if self.duty_period_ms % 6 != 0:
            raise ValueError("duty_period_ms must split into 6 equal windows")

    @property
    def window_len_ms(self) -> float:
        return self.duty_period_ms / 6


# events ---------------------------------------------------------------------

@dataclass(frozen=True)
class Timer:
    pass


@dataclass(frozen=True)
class FifoFull:
    batch: FifoBatch


@dataclass(frozen=True)
class Downlink:
    frame: bytes


DeviceEvent = Union[Timer, FifoFull, Downlink]


# actions --------------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleTimer:
    at_ms: float


@dataclass(frozen=True)
class Transmit:
    frame: bytes
    radio: RadioConfig
    airtime_end_ms: float


@dataclass(frozen=True)
class FifoRead:
    t_ms: float
    steps: int


@dataclass(frozen=True)
class FifoOverrun:
    pass


@dataclass(frozen=True)
class DownlinkIgnored:
    reason: str


@dataclass(frozen=True)
class AdrApplied:
    sf: int


DeviceAction = Union[ScheduleTimer, Transmit, FifoRead, FifoOverrun,
                     DownlinkIgnored, AdrApplied]

_TX_BRANCH = (DeviceState.GPS_ACQUIRE, DeviceState.SEND, DeviceState.RX_DELAY,
              DeviceState.RECEIVE)


class DeviceMac:
    """One device instance; single-threaded, all state explicit."""

    def __init__(self, config: DeviceConfig,
                 gps_source: Callable[[float], GpsFix]):
        self.config = config
        self.gps_source = gps_source
        self.radio = config.radio
        self.state = DeviceState.INIT
        self.fcnt = 0
        self.duty_start_ms = 0.0
        self.consumed_mas = 0.0
        self.fifo_overruns = 0
        self.downlinks_ignored = 0
        self.downlinks_applied = 0
        self.steps_reported_total = 0
        self.steps_quantized_total = 0
        self._increments: list[tuple[float, int]] = []
        self._pending_windows: list[StepWindow] = []
        self._rx_windows: tuple[tuple[float, float], tuple[float, float]] | None = None

    # -- helpers ---------------------------------------------------------

    @property
    def battery_pct(self) -> int:
        capacity_mas = self.config.battery_capacity_mah * 3600.0
        level = 100.0 * (1.0 - self.consumed_mas / capacity_mas)
        return max(0, min(100, int(round(level))))

    def _in_rx_window(self, t_ms: float) -> bool:
        if self._rx_windows is None:
            return False
        return any(lo <= t_ms <= hi for lo, hi in self._rx_windows)

    def apply_adr(self, target_sf: int) -> RadioConfig:
        """Adopt a commanded spreading factor; out-of-range values are ignored."""
        if not SF_MIN <= target_sf <= SF_MAX:
            log.warning("device %08x: ignoring ADR command with SF%d out of range",
                        self.config.dev_addr, target_sf)
            return self.radio
        if target_sf != self.radio.sf:
            self.radio = replace(self.radio, sf=target_sf)
        return self.radio

    # -- event dispatch ----------------------------------------------------

    def tick(self, event: DeviceEvent, now_ms: float) -> list[DeviceAction]:
        if isinstance(event, FifoFull):
            return self._on_fifo(event.batch, now_ms)
        if isinstance(event, Downlink):
            return self._on_downlink(event.frame, now_ms)
        if isinstance(event, Timer):
            return self._on_timer(now_ms)
        raise StateError(f"unknown event {event!r}")

    def _on_fifo(self, batch: FifoBatch, now_ms: float) -> list[DeviceAction]:
        if self.state in _TX_BRANCH:
            self.fifo_overruns += 1   # FIFO overwrites while the MCU is busy
            return [FifoOverrun()]
        if self.state is not DeviceState.SLEEP:
            raise StateError(f"fifo_full not legal in {self.state}")
        if batch.start_ms < self.duty_start_ms:
            self.fifo_overruns += 1   # stale batch straddling the boundary
            return [FifoOverrun()]
        self.state = DeviceState.STEP_COUNT
        steps = count_batch(batch, self.config.step_config)
        self._increments.append((batch.start_ms, steps))
        self.state = DeviceState.SLEEP
        return [FifoRead(t_ms=batch.start_ms, steps=steps)]

    def _on_timer(self, now_ms: float) -> list[DeviceAction]:
        if self.state is DeviceState.INIT:
            # boot: initialize the counter path, then sleep until the FIFO fills
            self.state = DeviceState.STEP_COUNT
            self.state = DeviceState.SLEEP
            self.duty_start_ms = now_ms
            return []
        if self.state is DeviceState.SLEEP:
            return self._start_tx_branch(now_ms)
        if self.state is DeviceState.GPS_ACQUIRE:
            return self._transmit(now_ms)
        if self.state is DeviceState.SEND:
            rx1_open = now_ms + self.config.rx1_delay_ms
            rx2_open = now_ms + self.config.rx2_delay_ms
            w = self.config.rx_window_ms
            self._rx_windows = ((rx1_open, rx1_open + w), (rx2_open, rx2_open + w))
            self.state = DeviceState.RX_DELAY
            return [ScheduleTimer(rx1_open)]
        if self.state is DeviceState.RX_DELAY:
            self.state = DeviceState.RECEIVE
            return [ScheduleTimer(self._rx_windows[1][1])]
        if self.state is DeviceState.RECEIVE:
            self.state = DeviceState.SLEEP
            self._rx_windows = None
            return []
        raise StateError(f"timer not legal in {self.state}")

    def _start_tx_branch(self, now_ms: float) -> list[DeviceAction]:
        """Duty boundary: snapshot the six windows, then go acquire a fix."""
        self._pending_windows = accumulate(
            self._increments, duty_start_ms=self.duty_start_ms,
            window_len_ms=self.config.window_len_ms)
        self._increments = []
        self.duty_start_ms = now_ms
        self.consumed_mas += duty_cycle_energy(
            default_phase_table(self.radio.sf, self.config.fs_hz),
            self.radio.sf, self.config.fs_hz, self.config.duty_period_ms,
        ).q_duty_mas
        self.state = DeviceState.GPS_ACQUIRE
        return [ScheduleTimer(now_ms + self.config.gps_time_ms)]

    def _transmit(self, now_ms: float) -> list[DeviceAction]:
        fix = self.gps_source(now_ms)
        window_steps = [w.steps for w in self._pending_windows]
        payload = frames.UplinkPayload.build(
            fix.lat_deg, fix.lon_deg, window_steps,
            battery_pct=self.battery_pct, gps_valid=fix.valid)
        self.steps_reported_total += sum(window_steps)
        self.steps_quantized_total += sum(payload.steps_estimate)
        self.fcnt += 1
        frame = frames.build_frame(frames.encode_payload(payload), self.fcnt,
                                   self.config.dev_addr, self.config.frame_key)
        airtime_end = now_ms + send_period(self.radio.sf)
        self.state = DeviceState.SEND
        return [Transmit(frame=frame, radio=self.radio, airtime_end_ms=airtime_end),
                ScheduleTimer(airtime_end)]

    def _on_downlink(self, frame_bytes: bytes, now_ms: float) -> list[DeviceAction]:
        if not self._in_rx_window(now_ms):
            self.downlinks_ignored += 1
            return [DownlinkIgnored("no open receive window")]
        try:
            frame = frames.parse_frame(frame_bytes, self.config.frame_key)
        except (frames.MicError, frames.FrameFormatError) as exc:
            self.downlinks_ignored += 1
            return [DownlinkIgnored(f"bad frame: {exc}")]
        if frame.mhdr != frames.MHDR_DOWNLINK or frame.dev_addr != self.config.dev_addr:
            self.downlinks_ignored += 1
            return [DownlinkIgnored("not addressed to this device")]
        target_sf = frames.parse_adr_command(frame.frm_payload)
        if target_sf is None:
            self.downlinks_ignored += 1
            return [DownlinkIgnored("unknown command")]
        before = self.radio.sf
        self.apply_adr(target_sf)
        if self.radio.sf != before:
            self.downlinks_applied += 1
            return [AdrApplied(sf=self.radio.sf)]
        self.downlinks_ignored += 1
        return [DownlinkIgnored("command is a no-op or out of range")]
