"""File-backed storage for ingested tracking data.

An append-only JSON-lines file holds one type-tagged record per line; the
full index lives in memory and is rebuilt by replaying the file on startup.
Rows carry idempotency keys so at-least-once writes (the retry path after a
failed append) never duplicate data. Serialization uses sorted keys and
fixed separators: identical content is identical bytes.
"""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any


@dataclass(frozen=True)
class TrackPoint:
    dev_addr: str
    fcnt: int
    t_ms: float
    lat_deg: float
    lon_deg: float
    rssi_dbm: float
    snr_db: float
    sf: int


@dataclass(frozen=True)
class StepBucket:
    dev_addr: str
    fcnt: int
    window_start_ms: float
    steps: int


@dataclass(frozen=True)
class FencePolygon:
    dev_addr: str
    vertices: tuple[tuple[float, float], ...]   # (lat, lon)

    def __post_init__(self) -> None:
        if len(self.vertices) < 3:
            raise ValueError("fence polygon needs at least 3 vertices")


@dataclass(frozen=True)
class FenceEvent:
    dev_addr: str
    t_ms: float
    event: str          # "entered" | "exited"
    lat_deg: float
    lon_deg: float


@dataclass
class DeviceRecord:
    """Last-known state of one device, updated per accepted uplink."""

    dev_addr: str
    last_fcnt: int = 0
    current_sf: int = 12
    battery_pct: int = 100
    last_seen_ms: float = 0.0
    snr_history: list[float] = field(default_factory=list)
    downlink_fcnt: int = 0
    inside_fence: bool = False

    SNR_HISTORY_LEN = 8

    def push_snr(self, snr_db: float) -> None:
        self.snr_history.append(snr_db)
        del self.snr_history[:-self.SNR_HISTORY_LEN]


_RECORD_TYPES = {
    "track": TrackPoint,
    "steps": StepBucket,
    "fence_event": FenceEvent,
}


def _record_key(kind: str, row: dict[str, Any]) -> tuple | None:
    if kind == "track":
        return ("track", row["dev_addr"], row["fcnt"])
    if kind == "steps":
        return ("steps", row["dev_addr"], row["fcnt"], row["window_start_ms"])
    if kind == "fence_event":
        return ("fence_event", row["dev_addr"], row["t_ms"], row["event"])
    return None   # device/fence rows are state updates, last one wins


class Store:
    """Append-only JSONL store with a full in-memory index.

    Appends that fail at the file layer are queued in memory and retried
    before the next write, so the file eventually catches up with the index;
    idempotency keys make the replay safe.
    """

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path is not None else None
        self._lock = threading.RLock()
        self._pending: deque[dict] = deque()
        self.tracks: dict[str, list[TrackPoint]] = {}
        self.steps: dict[str, list[StepBucket]] = {}
        self.devices: dict[str, DeviceRecord] = {}
        self.fences: dict[str, FencePolygon] = {}
        self.fence_events: dict[str, list[FenceEvent]] = {}
        self._seen_keys: set[tuple] = set()
        if self._path is not None and self._path.exists():
            self._replay_file()

    # -- persistence ------------------------------------------------------

    def _replay_file(self) -> None:
        with open(self._path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self._index(json.loads(line))

    def _write_line(self, row: dict) -> None:
        if self._path is None:
            return
        line = json.dumps(row, sort_keys=True, separators=(",", ":"))
        with open(self._path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def flush_pending(self) -> int:
        """Retry queued writes; returns how many are still stuck."""
        with self._lock:
            while self._pending:
                row = self._pending[0]
                try:
                    self._write_line(row)
                except OSError:
                    break
                self._pending.popleft()
            return len(self._pending)

    def append(self, kind: str, row: dict[str, Any]) -> bool:
        """Index and persist one record; returns False for a duplicate key."""
        with self._lock:
            record = {"type": kind, **row}
            key = _record_key(kind, record)
            if key is not None and key in self._seen_keys:
                return False
            self._index(record)
            self.flush_pending()
            try:
                self._write_line(record)
            except OSError:
                self._pending.append(record)
            return True

    # -- indexing ---------------------------------------------------------

    def _index(self, record: dict[str, Any]) -> None:
        kind = record.get("type")
        row = {k: v for k, v in record.items() if k != "type"}
        key = _record_key(kind, record)
        if key is not None:
            if key in self._seen_keys:
                return
            self._seen_keys.add(key)
        if kind == "track":
            self.tracks.setdefault(row["dev_addr"], []).append(TrackPoint(**row))
        elif kind == "steps":
            self.steps.setdefault(row["dev_addr"], []).append(StepBucket(**row))
        elif kind == "device":
            self.devices[row["dev_addr"]] = DeviceRecord(**row)
        elif kind == "fence":
            vertices = tuple((lat, lon) for lat, lon in row["vertices"])
            self.fences[row["dev_addr"]] = FencePolygon(dev_addr=row["dev_addr"],
                                                        vertices=vertices)
        elif kind == "fence_event":
            self.fence_events.setdefault(row["dev_addr"], []).append(FenceEvent(**row))
        else:
            raise ValueError(f"unknown record type {kind!r}")

    # -- write-through helpers used by the ingest path ---------------------

    def add_track(self, point: TrackPoint) -> bool:
        return self.append("track", asdict(point))

    def add_steps(self, bucket: StepBucket) -> bool:
        return self.append("steps", asdict(bucket))

    def add_fence_event(self, event: FenceEvent) -> bool:
        return self.append("fence_event", asdict(event))

    def put_device(self, record: DeviceRecord) -> None:
        self.append("device", asdict(record))

    def put_fence(self, fence: FencePolygon) -> None:
        self.append("fence", {"dev_addr": fence.dev_addr,
                              "vertices": [list(v) for v in fence.vertices]})

    @property
    def lock(self) -> threading.RLock:
        return self._lock
