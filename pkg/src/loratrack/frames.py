"""Byte-exact application payload and frame codecs.

Uplink payload, 16 bytes, little-endian multibyte fields:

    lat_e5(4) | lon_e5(4) | steps8[6] | battery_pct(1) | flags(1)

Frame, 29 bytes for a 16-byte uplink payload:

    mhdr(1) | dev_addr(4 LE) | fctrl(1) | fcnt(2 LE) | fport(1) | payload | mic(4 LE)

The MIC is CRC32 over the device key concatenated with all preceding frame
bytes. It is an integrity check with the shape and verification flow of the
real thing, not a cryptographic one.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

MHDR_UNCONFIRMED_UPLINK = 0x40
MHDR_DOWNLINK = 0x60
FPORT_TRACKING = 2      # uplink position/steps payloads
FPORT_MAC = 0           # command downlinks
PAYLOAD_LEN = 16
UPLINK_FRAME_LEN = 29
STEP_QUANT = 8          # steps per quantization unit in steps8

FLAG_GPS_VALID = 0x01
FLAG_ALL_STATIC = 0x02

ADR_COMMAND_ID = 0x03   # frm_payload: [ADR_COMMAND_ID, target_sf]

_HEADER = struct.Struct("<BIBHB")   # mhdr, dev_addr, fctrl, fcnt, fport


class FrameFormatError(ValueError):
    pass


class MicError(ValueError):
    pass


class PayloadError(ValueError):
    pass


@dataclass(frozen=True)
class UplinkPayload:
    lat_e5: int
    lon_e5: int
    steps8: tuple[int, ...]      # six quantized window counts
    battery_pct: int
    flags: int

    def __post_init__(self) -> None:
        if abs(self.lat_e5) > 9_000_000:
            raise PayloadError(f"lat_e5 out of range: {self.lat_e5}")
        if abs(self.lon_e5) > 18_000_000:
            raise PayloadError(f"lon_e5 out of range: {self.lon_e5}")
        if len(self.steps8) != 6 or any(not 0 <= v <= 255 for v in self.steps8):
            raise PayloadError("steps8 must be six values in 0..255")
        if not 0 <= self.battery_pct <= 100:
            raise PayloadError("battery_pct must be 0..100")
        if not 0 <= self.flags <= 255:
            raise PayloadError("flags must fit one byte")

    @property
    def lat_deg(self) -> float:
        return self.lat_e5 / 1e5

    @property
    def lon_deg(self) -> float:
        return self.lon_e5 / 1e5

    @property
    def steps_estimate(self) -> tuple[int, ...]:
        """Window step counts recovered from the quantized bytes."""
        return tuple(v * STEP_QUANT for v in self.steps8)

    @property
    def gps_valid(self) -> bool:
        return bool(self.flags & FLAG_GPS_VALID)

    @classmethod
    def build(cls, lat_deg: float, lon_deg: float, window_steps: tuple[int, ...] | list[int],
              battery_pct: int, gps_valid: bool = True) -> "UplinkPayload":
        """Quantize raw window counts and pack coordinates to 1e-5 degrees."""
        steps8 = tuple(min(int(round(s / STEP_QUANT)), 255) for s in window_steps)
        flags = (FLAG_GPS_VALID if gps_valid else 0)
        if all(s == 0 for s in window_steps):
            flags |= FLAG_ALL_STATIC
        return cls(lat_e5=int(round(lat_deg * 1e5)), lon_e5=int(round(lon_deg * 1e5)),
                   steps8=steps8, battery_pct=battery_pct, flags=flags)


def encode_payload(p: UplinkPayload) -> bytes:
    return struct.pack("<ii6BBB", p.lat_e5, p.lon_e5, *p.steps8,
                       p.battery_pct, p.flags)


def decode_payload(data: bytes) -> UplinkPayload:
    if len(data) != PAYLOAD_LEN:
        raise PayloadError(f"payload must be {PAYLOAD_LEN} bytes, got {len(data)}")
    lat_e5, lon_e5, s0, s1, s2, s3, s4, s5, battery, flags = struct.unpack("<ii6BBB", data)
    return UplinkPayload(lat_e5=lat_e5, lon_e5=lon_e5, steps8=(s0, s1, s2, s3, s4, s5),
                         battery_pct=battery, flags=flags)


@dataclass(frozen=True)
class Frame:
    mhdr: int
    dev_addr: int
    fctrl: int
    fcnt: int
    fport: int
    frm_payload: bytes

    @property
    def is_uplink(self) -> bool:
        return self.mhdr == MHDR_UNCONFIRMED_UPLINK


def _mic(key: bytes, preceding: bytes) -> bytes:
    return struct.pack("<I", zlib.crc32(key + preceding) & 0xFFFFFFFF)


def build_frame(payload: bytes, fcnt: int, dev_addr: int, key: bytes,
                mhdr: int = MHDR_UNCONFIRMED_UPLINK, fport: int = FPORT_TRACKING,
                fctrl: int = 0x00) -> bytes:
    if mhdr == MHDR_UNCONFIRMED_UPLINK and len(payload) != PAYLOAD_LEN:
        raise FrameFormatError(f"uplink payload must be {PAYLOAD_LEN} bytes")
    if len(key) != 16:
        raise FrameFormatError("frame key must be 16 bytes")
    head = _HEADER.pack(mhdr, dev_addr & 0xFFFFFFFF, fctrl, fcnt & 0xFFFF, fport)
    body = head + payload
    return body + _mic(key, body)


def peek_dev_addr(frame: bytes) -> int:
    """Device address without MIC verification, for key lookup."""
    if len(frame) < _HEADER.size + 4:
        raise FrameFormatError(f"frame too short: {len(frame)} bytes")
    return struct.unpack_from("<I", frame, 1)[0]


def parse_frame(frame: bytes, key: bytes) -> Frame:
    """Verify the MIC and split a frame into its fields."""
    if len(frame) < _HEADER.size + 4:
        raise FrameFormatError(f"frame too short: {len(frame)} bytes")
    body, mic = frame[:-4], frame[-4:]
    if _mic(key, body) != mic:
        raise MicError("MIC verification failed")
    mhdr, dev_addr, fctrl, fcnt, fport = _HEADER.unpack_from(body)
    if mhdr == MHDR_UNCONFIRMED_UPLINK and len(frame) != UPLINK_FRAME_LEN:
        raise FrameFormatError(f"uplink frame must be {UPLINK_FRAME_LEN} bytes, "
                               f"got {len(frame)}")
    return Frame(mhdr=mhdr, dev_addr=dev_addr, fctrl=fctrl, fcnt=fcnt,
                 fport=fport, frm_payload=body[_HEADER.size:])


def build_adr_downlink(target_sf: int, fcnt: int, dev_addr: int, key: bytes) -> bytes:
    return build_frame(bytes([ADR_COMMAND_ID, target_sf]), fcnt, dev_addr, key,
                       mhdr=MHDR_DOWNLINK, fport=FPORT_MAC)


def parse_adr_command(frm_payload: bytes) -> int | None:
    """Target SF from a command payload, or None if it is something else."""
    if len(frm_payload) == 2 and frm_payload[0] == ADR_COMMAND_ID:
        return frm_payload[1]
    return None


def addr_to_hex(dev_addr: int) -> str:
    return f"{dev_addr & 0xFFFFFFFF:08x}"


def hex_to_addr(text: str) -> int:
    if len(text) != 8:
        raise ValueError(f"device address must be 8 hex chars, got {text!r}")
    return int(text, 16)
