"""Network server: the cloud side of the system.

Decodes forwarder datagrams, verifies and deduplicates frames, stores track
points and step buckets, evaluates geofences, and decides data-rate commands
that ride back to devices through PULL_RESP downlinks. Transport-agnostic:
`handle_datagram` maps one inbound datagram to its response datagrams, and
works identically behind a real UDP socket or an in-process call.
"""

from __future__ import annotations

import logging
import math
import socket
import threading
from collections import deque
from dataclasses import dataclass

from . import frames, udp_protocol
from .frames import MicError, PayloadError, FrameFormatError
from .geo import point_in_polygon
from .lora_phy import SNR_LIMITS_DB
from .store import (DeviceRecord, FenceEvent, FencePolygon, StepBucket, Store,
                    TrackPoint)
from .udp_protocol import (GatewayPacket, ProtocolError, Rxpk, Txpk,
                           decode_datagram, encode_pull_ack, encode_pull_resp,
                           encode_push_ack, parse_datr)

log = logging.getLogger(__name__)

BUCKET_SPACING_MS = 600_000.0
BUCKETS_PER_UPLINK = 6
RX1_DELAY_US = 1_000_000
ADR_SF_STEP_DB = 2.5


@dataclass
class ServerCounters:
    accepted: int = 0
    mic_failures: int = 0
    replay_rejected: int = 0
    transport_errors: int = 0
    unknown_device: int = 0
    payload_errors: int = 0
    unexpected_packets: int = 0


def adr_decide(record: DeviceRecord, margin_db: float = 10.0,
               min_history: int = 4,
               snr_limits: dict[int, float] | None = None) -> int | None:
    """Target SF for a device, or None when no change is warranted.

    The link margin above the demodulation limit plus the configured safety
    margin is converted into SF steps of 2.5 dB each, clamped at SF7.
    """
    if len(record.snr_history) < min_history:
        return None
    limits = snr_limits or SNR_LIMITS_DB
    mean_snr = sum(record.snr_history) / len(record.snr_history)
    margin = mean_snr - limits[record.current_sf] - margin_db
    if margin <= 0:
        return None
    steps = math.floor(margin / ADR_SF_STEP_DB)
    target = max(7, record.current_sf - steps)
    return target if target < record.current_sf else None


class NetworkServer:
    """Protocol transfer, storage and downlink decisions for one deployment."""

    def __init__(self, store: Store, device_keys: dict[str, bytes],
                 adr_margin_db: float = 10.0, adr_enabled: bool = True):
        self.store = store
        self.device_keys = dict(device_keys)
        self.adr_margin_db = adr_margin_db
        self.adr_enabled = adr_enabled
        self.counters = ServerCounters()
        self.pending_downlinks: deque[Txpk] = deque()
        self._lock = store.lock

    # -- datagram layer ----------------------------------------------------

    def handle_datagram(self, data: bytes) -> list[bytes]:
        """Process one datagram and return the datagrams to send back."""
        with self._lock:
            try:
                packet = decode_datagram(data)
            except ProtocolError:
                self.counters.transport_errors += 1
                return self._ack_salvage(data)
            if packet.identifier == udp_protocol.PUSH_DATA:
                self._handle_push_data(packet)
                return [encode_push_ack(packet.token)]
            if packet.identifier == udp_protocol.PULL_DATA:
                responses = [encode_pull_resp(b"\x00\x00", txpk)
                             for txpk in self.pending_downlinks]
                self.pending_downlinks.clear()
                responses.append(encode_pull_ack(packet.token))
                return responses
            self.counters.unexpected_packets += 1
            return []

    def _ack_salvage(self, data: bytes) -> list[bytes]:
        # a malformed PUSH_DATA body still gets its ACK if the header parses
        if (len(data) >= 4 and data[0] == udp_protocol.PROTOCOL_VERSION
                and data[3] == udp_protocol.PUSH_DATA):
            return [encode_push_ack(data[1:3])]
        return []

    # -- frame layer -------------------------------------------------------

    def _handle_push_data(self, packet: GatewayPacket) -> None:
        rxpks = packet.body.get("rxpk", []) if packet.body else []
        for raw in rxpks:
            try:
                rxpk = Rxpk.from_dict(raw)
                frame_bytes = rxpk.frame_bytes()
            except (ProtocolError, ValueError):
                self.counters.transport_errors += 1
                continue
            self._process_frame(frame_bytes, rxpk)

    def _process_frame(self, frame_bytes: bytes, rxpk: Rxpk) -> None:
        try:
            addr_hex = frames.addr_to_hex(frames.peek_dev_addr(frame_bytes))
        except FrameFormatError:
            self.counters.transport_errors += 1
            return
        key = self.device_keys.get(addr_hex)
        if key is None:
            self.counters.unknown_device += 1
            return
        try:
            frame = frames.parse_frame(frame_bytes, key)
        except MicError:
            self.counters.mic_failures += 1
            return
        except FrameFormatError:
            self.counters.transport_errors += 1
            return
        record = self.store.devices.get(addr_hex) or DeviceRecord(dev_addr=addr_hex)
        if frame.fcnt <= record.last_fcnt:
            self.counters.replay_rejected += 1
            return
        try:
            payload = frames.decode_payload(frame.frm_payload)
        except PayloadError:
            self.counters.payload_errors += 1
            return
        self.ingest(addr_hex, frame.fcnt, payload, rxpk, record)

    # -- ingest ------------------------------------------------------------

    def ingest(self, addr_hex: str, fcnt: int, payload: frames.UplinkPayload,
               rxpk: Rxpk, record: DeviceRecord) -> None:
        t_ms = rxpk.tmst / 1000.0
        sf, _bw = parse_datr(rxpk.datr)
        self.store.add_track(TrackPoint(
            dev_addr=addr_hex, fcnt=fcnt, t_ms=t_ms,
            lat_deg=payload.lat_deg, lon_deg=payload.lon_deg,
            rssi_dbm=float(rxpk.rssi), snr_db=rxpk.lsnr, sf=sf))
        # six buckets back-dated at 10-minute spacing ending at the uplink
        for i, steps in enumerate(payload.steps_estimate):
            start = t_ms - (BUCKETS_PER_UPLINK - i) * BUCKET_SPACING_MS
            self.store.add_steps(StepBucket(dev_addr=addr_hex, fcnt=fcnt,
                                            window_start_ms=start, steps=steps))
        record.last_fcnt = fcnt
        record.current_sf = sf
        record.battery_pct = payload.battery_pct
        record.last_seen_ms = t_ms
        record.push_snr(rxpk.lsnr)
        self._check_fence(record, t_ms, payload.lat_deg, payload.lon_deg)
        if self.adr_enabled:
            target = adr_decide(record, self.adr_margin_db)
            if target is not None:
                self._queue_adr_downlink(record, rxpk, target)
        self.store.put_device(record)
        self.counters.accepted += 1

    def _check_fence(self, record: DeviceRecord, t_ms: float,
                     lat: float, lon: float) -> None:
        fence = self.store.fences.get(record.dev_addr)
        if fence is None:
            return
        inside = point_in_polygon(lat, lon, fence.vertices)
        if inside != record.inside_fence:
            self.store.add_fence_event(FenceEvent(
                dev_addr=record.dev_addr, t_ms=t_ms,
                event="entered" if inside else "exited",
                lat_deg=lat, lon_deg=lon))
            record.inside_fence = inside

    def _queue_adr_downlink(self, record: DeviceRecord, rxpk: Rxpk,
                            target_sf: int) -> None:
        record.downlink_fcnt += 1
        frame = frames.build_adr_downlink(target_sf, record.downlink_fcnt,
                                          frames.hex_to_addr(record.dev_addr),
                                          self.device_keys[record.dev_addr])
        self.pending_downlinks.append(Txpk.build(
            frame, tmst=rxpk.tmst + RX1_DELAY_US, freq_hz=rxpk.freq_mhz * 1e6,
            sf=record.current_sf, bw_hz=parse_datr(rxpk.datr)[1],
            cr_denominator=int(rxpk.codr.split("/")[1])))
        log.info("ADR: device %s SF%d -> SF%d", record.dev_addr,
                 record.current_sf, target_sf)

    # -- fence management (shared by the HTTP API) ---------------------------

    def put_fence(self, addr_hex: str, vertices: list[tuple[float, float]]) -> None:
        with self._lock:
            self.store.put_fence(FencePolygon(dev_addr=addr_hex,
                                              vertices=tuple(vertices)))
            record = self.store.devices.get(addr_hex)
            if record is not None:
                record.inside_fence = False   # re-baseline on registration
                self.store.put_device(record)


class UdpServerTransport:
    """Real-socket front end for a NetworkServer; one thread, one socket."""

    def __init__(self, server: NetworkServer, host: str = "127.0.0.1",
                 port: int = 1700):
        self.server = server
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self._sock.settimeout(0.2)
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._stop = threading.Event()

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()

    def start(self) -> "UdpServerTransport":
        self._thread.start()
        return self

    def _loop(self) -> None:
        while not self._stop.is_set():
            try:
                data, addr = self._sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            for response in self.server.handle_datagram(data):
                self._sock.sendto(response, addr)

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2.0)
        self._sock.close()
