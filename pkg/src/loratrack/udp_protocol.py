"""UDP packet-forwarder wire protocol between gateway and server.

Datagram layout (version 2 convention):

    PUSH_DATA: 0x02 | token(2) | 0x00 | gateway_eui(8) | JSON {"rxpk": [...]}
    PUSH_ACK:  0x02 | token(2) | 0x01
    PULL_DATA: 0x02 | token(2) | 0x02 | gateway_eui(8)
    PULL_RESP: 0x02 | token(2) | 0x03 | JSON {"txpk": {...}}
    PULL_ACK:  0x02 | token(2) | 0x04

ACK tokens echo the packet they acknowledge. JSON bodies are serialized with
sorted keys and no whitespace so identical content is identical bytes.
"""

from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass

PROTOCOL_VERSION = 0x02
PUSH_DATA = 0x00
PUSH_ACK = 0x01
PULL_DATA = 0x02
PULL_RESP = 0x03
PULL_ACK = 0x04

_IDENTIFIER_NAMES = {
    PUSH_DATA: "PUSH_DATA",
    PUSH_ACK: "PUSH_ACK",
    PULL_DATA: "PULL_DATA",
    PULL_RESP: "PULL_RESP",
    PULL_ACK: "PULL_ACK",
}

_HAS_EUI = {PUSH_DATA, PULL_DATA}
_HAS_BODY = {PUSH_DATA, PULL_RESP}

_DATR_RE = re.compile(r"^SF(\d+)BW(\d+)$")


class ProtocolError(ValueError):
    pass


def _dump_body(body: dict) -> bytes:
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True)
class Rxpk:
    """One received uplink as reported by the forwarder."""

    tmst: int          # gateway microsecond counter at end of reception
    freq_mhz: float
    datr: str          # e.g. "SF12BW125"
    codr: str          # e.g. "4/5"
    rssi: int          # dBm, integer
    lsnr: float        # dB, one decimal
    size: int
    data: str          # base64 of the frame bytes

    def __post_init__(self) -> None:
        if self.size != len(base64.b64decode(self.data)):
            raise ProtocolError("rxpk size does not match decoded data length")
        parse_datr(self.datr)

    @classmethod
    def from_reception(cls, frame: bytes, tmst: int, freq_hz: float, sf: int,
                       bw_hz: int, cr_denominator: int, rssi_dbm: float,
                       snr_db: float) -> "Rxpk":
        return cls(tmst=tmst, freq_mhz=round(freq_hz / 1e6, 6),
                   datr=f"SF{sf}BW{bw_hz // 1000}", codr=f"4/{cr_denominator}",
                   rssi=int(round(rssi_dbm)), lsnr=round(snr_db, 1),
                   size=len(frame), data=base64.b64encode(frame).decode())

    def frame_bytes(self) -> bytes:
        return base64.b64decode(self.data)

    def to_dict(self) -> dict:
        return {"tmst": self.tmst, "freq": self.freq_mhz, "datr": self.datr,
                "codr": self.codr, "rssi": self.rssi, "lsnr": self.lsnr,
                "size": self.size, "data": self.data}

    @classmethod
    def from_dict(cls, d: dict) -> "Rxpk":
        try:
            return cls(tmst=d["tmst"], freq_mhz=d["freq"], datr=d["datr"],
                       codr=d["codr"], rssi=d["rssi"], lsnr=d["lsnr"],
                       size=d["size"], data=d["data"])
        except KeyError as exc:
            raise ProtocolError(f"rxpk missing field {exc}") from exc


@dataclass(frozen=True)
class Txpk:
    """One downlink to transmit at a target gateway timestamp."""

    tmst: int
    freq_mhz: float
    datr: str
    codr: str
    size: int
    data: str

    def frame_bytes(self) -> bytes:
        return base64.b64decode(self.data)

    def to_dict(self) -> dict:
        return {"tmst": self.tmst, "freq": self.freq_mhz, "datr": self.datr,
                "codr": self.codr, "size": self.size, "data": self.data}

    @classmethod
    def from_dict(cls, d: dict) -> "Txpk":
        try:
            txpk = cls(tmst=d["tmst"], freq_mhz=d["freq"], datr=d["datr"],
                       codr=d["codr"], size=d["size"], data=d["data"])
        except KeyError as exc:
            raise ProtocolError(f"txpk missing field {exc}") from exc
        if txpk.size != len(base64.b64decode(txpk.data)):
            raise ProtocolError("txpk size does not match decoded data length")
        return txpk

    @classmethod
    def build(cls, frame: bytes, tmst: int, freq_hz: float, sf: int, bw_hz: int,
              cr_denominator: int) -> "Txpk":
        return cls(tmst=tmst, freq_mhz=round(freq_hz / 1e6, 6),
                   datr=f"SF{sf}BW{bw_hz // 1000}", codr=f"4/{cr_denominator}",
                   size=len(frame), data=base64.b64encode(frame).decode())


def parse_datr(datr: str) -> tuple[int, int]:
    """Split a data-rate string into (sf, bw_hz)."""
    m = _DATR_RE.match(datr)
    if not m:
        raise ProtocolError(f"malformed datr: {datr!r}")
    return int(m.group(1)), int(m.group(2)) * 1000


@dataclass(frozen=True)
class GatewayPacket:
    version: int
    token: bytes
    identifier: int
    gateway_eui: bytes | None = None
    body: dict | None = None

    @property
    def identifier_name(self) -> str:
        return _IDENTIFIER_NAMES.get(self.identifier, f"0x{self.identifier:02x}")


def encode_push_data(token: bytes, gateway_eui: bytes, rxpks: list[Rxpk]) -> bytes:
    if not rxpks:
        raise ProtocolError("PUSH_DATA needs at least one rxpk")
    _check_token_eui(token, gateway_eui)
    body = {"rxpk": [r.to_dict() for r in rxpks]}
    return bytes([PROTOCOL_VERSION]) + token + bytes([PUSH_DATA]) + gateway_eui + _dump_body(body)


def encode_push_ack(token: bytes) -> bytes:
    return bytes([PROTOCOL_VERSION]) + token + bytes([PUSH_ACK])


def encode_pull_data(token: bytes, gateway_eui: bytes) -> bytes:
    _check_token_eui(token, gateway_eui)
    return bytes([PROTOCOL_VERSION]) + token + bytes([PULL_DATA]) + gateway_eui


def encode_pull_resp(token: bytes, txpk: Txpk) -> bytes:
    return (bytes([PROTOCOL_VERSION]) + token + bytes([PULL_RESP])
            + _dump_body({"txpk": txpk.to_dict()}))


def encode_pull_ack(token: bytes) -> bytes:
    return bytes([PROTOCOL_VERSION]) + token + bytes([PULL_ACK])


def _check_token_eui(token: bytes, eui: bytes | None = None) -> None:
    if len(token) != 2:
        raise ProtocolError("token must be 2 bytes")
    if eui is not None and len(eui) != 8:
        raise ProtocolError("gateway EUI must be 8 bytes")


def decode_datagram(data: bytes) -> GatewayPacket:
    """Parse any forwarder datagram; raises ProtocolError on malformed input."""
    if len(data) < 4:
        raise ProtocolError(f"datagram too short: {len(data)} bytes")
    version, identifier = data[0], data[3]
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"bad protocol version 0x{version:02x}")
    if identifier not in _IDENTIFIER_NAMES:
        raise ProtocolError(f"unknown identifier 0x{identifier:02x}")
    token = data[1:3]
    offset = 4
    eui = None
    if identifier in _HAS_EUI:
        if len(data) < offset + 8:
            raise ProtocolError("datagram truncated before gateway EUI")
        eui = data[offset:offset + 8]
        offset += 8
    body = None
    if identifier in _HAS_BODY:
        try:
            body = json.loads(data[offset:].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"malformed JSON body: {exc}") from exc
        if not isinstance(body, dict):
            raise ProtocolError("JSON body must be an object")
    elif len(data) != offset:
        raise ProtocolError(f"unexpected trailing bytes on {_IDENTIFIER_NAMES[identifier]}")
    return GatewayPacket(version=version, token=token, identifier=identifier,
                         gateway_eui=eui, body=body)
