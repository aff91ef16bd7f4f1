"""Service settings: JSON config file plus LORATRACK_* environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

ENV_PREFIX = "LORATRACK_"


@dataclass
class ServerSettings:
    data_file: str = "loratrack-store.jsonl"
    http_host: str = "127.0.0.1"
    http_port: int = 8000
    udp_host: str = "0.0.0.0"
    udp_port: int = 1700
    adr_margin_db: float = 10.0
    adr_enabled: bool = True
    devices: dict[str, str] = field(default_factory=dict)   # addr hex -> key hex

    def device_keys(self) -> dict[str, bytes]:
        return {addr: bytes.fromhex(key) for addr, key in self.devices.items()}


_ENV_FIELDS = {
    "DATA_FILE": ("data_file", str),
    "HTTP_HOST": ("http_host", str),
    "HTTP_PORT": ("http_port", int),
    "UDP_HOST": ("udp_host", str),
    "UDP_PORT": ("udp_port", int),
    "ADR_MARGIN_DB": ("adr_margin_db", float),
}


def load_settings(config_path: str | Path | None = None,
                  env: dict[str, str] | None = None) -> ServerSettings:
    """Settings from an optional JSON file, then environment overrides."""
    values: dict = {}
    if config_path is not None:
        with open(config_path, encoding="utf-8") as fh:
            values.update(json.load(fh))
    settings = ServerSettings(**values)
    env = os.environ if env is None else env
    for suffix, (attr, cast) in _ENV_FIELDS.items():
        raw = env.get(ENV_PREFIX + suffix)
        if raw is not None:
            setattr(settings, attr, cast(raw))
    return settings
