"""Gateway packet forwarder: radio domain in, UDP protocol out, and back.

The forwarder never looks inside frame payloads; it wraps delivered uplinks
in PUSH_DATA, keeps the downlink path alive with PULL_DATA polls, and turns
PULL_RESP packets into scheduled radio transmissions. The transport is a
pluggable `exchange(datagram) -> responses` object so the same forwarder
runs over an in-process server or a real UDP socket.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from . import udp_protocol
from .lora_phy import RadioConfig, RxMeta
from .udp_protocol import (ProtocolError, Rxpk, Txpk, decode_datagram,
                           encode_pull_data, encode_push_data)

RETRY_DELAY_MS = 500.0
MAX_ATTEMPTS = 2
KEEPALIVE_INTERVAL_MS = 10_000.0


class Link(Protocol):
    def exchange(self, datagram: bytes) -> list[bytes]:
        """Send one datagram and return the response datagrams it produced."""


class InProcessLink:
    """Zero-copy link calling the server's datagram handler directly."""

    def __init__(self, handler: Callable[[bytes], list[bytes]]):
        self._handler = handler

    def exchange(self, datagram: bytes) -> list[bytes]:
        return self._handler(datagram)


class UdpClientLink:
    """Loopback/UDP link; collects responses until the matching ACK arrives."""

    _TERMINAL = {udp_protocol.PUSH_DATA: udp_protocol.PUSH_ACK,
                 udp_protocol.PULL_DATA: udp_protocol.PULL_ACK}

    def __init__(self, host: str, port: int, timeout_s: float = 0.5):
        self._addr = (host, port)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.settimeout(timeout_s)

    def exchange(self, datagram: bytes) -> list[bytes]:
        self._sock.sendto(datagram, self._addr)
        want_ack = self._TERMINAL.get(datagram[3])
        token = datagram[1:3]
        responses: list[bytes] = []
        while True:
            try:
                data, _ = self._sock.recvfrom(65535)
            except socket.timeout:
                return responses
            responses.append(data)
            if want_ack is None or (len(data) >= 4 and data[3] == want_ack
                                    and data[1:3] == token):
                return responses

    def close(self) -> None:
        self._sock.close()


@dataclass
class GatewayCounters:
    uplinks_forwarded: int = 0
    uplinks_lost: int = 0
    ack_mismatch: int = 0
    downlinks_scheduled: int = 0
    downlinks_dropped_past: int = 0
    malformed_pull_resp: int = 0


class Forwarder:
    """One gateway instance.

    schedule(t_ms, fn) defers work on the caller's clock (retries, polls);
    on_downlink(tmst_ms, frame) hands a downlink to the radio scheduler.
    """

    def __init__(self, link: Link, gateway_eui: bytes,
                 rng: np.random.Generator,
                 schedule: Callable[[float, Callable[[], None]], None],
                 on_downlink: Callable[[float, bytes], None]):
        if len(gateway_eui) != 8:
            raise ValueError("gateway EUI must be 8 bytes")
        self.link = link
        self.eui = gateway_eui
        self.rng = rng
        self.schedule = schedule
        self.on_downlink = on_downlink
        self.counters = GatewayCounters()

    def _token(self) -> bytes:
        return self.rng.integers(0, 256, size=2, dtype=np.uint8).tobytes()

    # -- uplink path ---------------------------------------------------------

    def forward_uplink(self, frame: bytes, rx: RxMeta, radio: RadioConfig,
                       now_ms: float) -> None:
        """Wrap a delivered frame in PUSH_DATA and send, with one retry."""
        rxpk = Rxpk.from_reception(
            frame, tmst=int(round(now_ms * 1000)), freq_hz=radio.freq_hz,
            sf=radio.sf, bw_hz=radio.bw_hz, cr_denominator=radio.cr_denominator,
            rssi_dbm=rx.rssi_dbm, snr_db=rx.snr_db)
        datagram = encode_push_data(self._token(), self.eui, [rxpk])
        self._attempt_uplink(datagram, now_ms, attempt=1)

    def _attempt_uplink(self, datagram: bytes, now_ms: float, attempt: int) -> None:
        token = datagram[1:3]
        if self._got_push_ack(self.link.exchange(datagram), token):
            self.counters.uplinks_forwarded += 1
            self.poll_downlink(now_ms)
            return
        if attempt < MAX_ATTEMPTS:
            retry_at = now_ms + RETRY_DELAY_MS
            self.schedule(retry_at,
                          lambda: self._attempt_uplink(datagram, retry_at, attempt + 1))
        else:
            self.counters.uplinks_lost += 1

    def _got_push_ack(self, responses: list[bytes], token: bytes) -> bool:
        ok = False
        for data in responses:
            if len(data) >= 4 and data[3] == udp_protocol.PUSH_ACK:
                if data[1:3] == token:
                    ok = True
                else:
                    self.counters.ack_mismatch += 1
        return ok

    # -- downlink path ---------------------------------------------------------

    def poll_downlink(self, now_ms: float) -> None:
        """PULL_DATA poll; schedules any PULL_RESP downlinks it brings back."""
        token = self._token()
        for data in self.link.exchange(encode_pull_data(token, self.eui)):
            if len(data) >= 4 and data[3] == udp_protocol.PULL_ACK:
                if data[1:3] != token:
                    self.counters.ack_mismatch += 1
                continue
            self._handle_pull_resp(data, now_ms)

    def _handle_pull_resp(self, data: bytes, now_ms: float) -> None:
        try:
            packet = decode_datagram(data)
            if packet.identifier != udp_protocol.PULL_RESP:
                self.counters.malformed_pull_resp += 1
                return
            txpk = Txpk.from_dict(packet.body["txpk"])
        except (ProtocolError, KeyError, TypeError, ValueError):
            self.counters.malformed_pull_resp += 1
            return
        tmst_ms = txpk.tmst / 1000.0
        if tmst_ms <= now_ms:
            self.counters.downlinks_dropped_past += 1
            return
        self.counters.downlinks_scheduled += 1
        self.on_downlink(tmst_ms, txpk.frame_bytes())
