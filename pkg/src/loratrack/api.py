"""HTTP query API over the server state.

Serves device summaries, GeoJSON track exports, step buckets, geofence
management and latest-position lookups. Read endpoints snapshot the store
under its lock, so concurrent UDP ingest never produces torn reads.
"""

from __future__ import annotations

from typing import Literal

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .server import NetworkServer
from .store import TrackPoint


class DeviceSummary(BaseModel):
    dev_addr: str
    last_seen_ms: float
    battery_pct: int
    current_sf: int
    last_fcnt: int


class TrackProperties(BaseModel):
    dev_addr: str
    point_count: int
    t_ms: list[float]
    rssi_dbm: list[float]
    snr_db: list[float]
    sf: list[int]


class LineStringGeometry(BaseModel):
    type: Literal["LineString"] = "LineString"
    coordinates: list[tuple[float, float]]   # GeoJSON positions: [lon, lat]


class TrackFeature(BaseModel):
    type: Literal["Feature"] = "Feature"
    geometry: LineStringGeometry
    properties: TrackProperties


class TrackFeatureCollection(BaseModel):
    type: Literal["FeatureCollection"] = "FeatureCollection"
    features: list[TrackFeature]


class StepBucketOut(BaseModel):
    dev_addr: str
    window_start_ms: float
    steps: int


class GeoJsonPolygon(BaseModel):
    type: Literal["Polygon"]
    coordinates: list[list[tuple[float, float]]] = Field(min_length=1)


class FenceEventOut(BaseModel):
    dev_addr: str
    t_ms: float
    event: Literal["entered", "exited"]
    lat_deg: float
    lon_deg: float


class TrackPointOut(BaseModel):
    dev_addr: str
    t_ms: float
    lat_deg: float
    lon_deg: float
    rssi_dbm: float
    snr_db: float
    sf: int


class LatestOut(BaseModel):
    track: TrackPointOut
    buckets: list[StepBucketOut]


def track_feature_collection(dev_addr: str, points: list[TrackPoint]) -> dict:
    """GeoJSON FeatureCollection with one LineString and per-point properties."""
    return {
        "type": "FeatureCollection",
        "features": [{
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [[p.lon_deg, p.lat_deg] for p in points],
            },
            "properties": {
                "dev_addr": dev_addr,
                "point_count": len(points),
                "t_ms": [p.t_ms for p in points],
                "rssi_dbm": [p.rssi_dbm for p in points],
                "snr_db": [p.snr_db for p in points],
                "sf": [p.sf for p in points],
            },
        }],
    }


def _time_range(from_ms: float | None, to_ms: float | None) -> tuple[float, float]:
    lo = from_ms if from_ms is not None else float("-inf")
    hi = to_ms if to_ms is not None else float("inf")
    if lo > hi:
        raise HTTPException(status_code=400, detail="'from' must not exceed 'to'")
    return lo, hi


def create_app(server: NetworkServer) -> FastAPI:
    app = FastAPI(title="loratrack", version="0.1.0")
    store = server.store

    @app.exception_handler(RequestValidationError)
    async def validation_to_400(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def known(addr: str) -> str:
        with store.lock:
            if addr not in store.devices:
                raise HTTPException(status_code=404, detail=f"unknown device {addr}")
        return addr

    @app.get("/api/devices", response_model=list[DeviceSummary])
    def list_devices():
        with store.lock:
            return [DeviceSummary(dev_addr=r.dev_addr, last_seen_ms=r.last_seen_ms,
                                  battery_pct=r.battery_pct, current_sf=r.current_sf,
                                  last_fcnt=r.last_fcnt)
                    for r in sorted(store.devices.values(), key=lambda r: r.dev_addr)]

    @app.get("/api/devices/{addr}/track", response_model=TrackFeatureCollection)
    def get_track(addr: str,
                  from_ms: float | None = Query(default=None, alias="from"),
                  to_ms: float | None = Query(default=None, alias="to")):
        known(addr)
        lo, hi = _time_range(from_ms, to_ms)
        with store.lock:
            points = [p for p in store.tracks.get(addr, []) if lo <= p.t_ms <= hi]
        return track_feature_collection(addr, points)

    @app.get("/api/devices/{addr}/steps", response_model=list[StepBucketOut])
    def get_steps(addr: str,
                  from_ms: float | None = Query(default=None, alias="from"),
                  to_ms: float | None = Query(default=None, alias="to")):
        known(addr)
        lo, hi = _time_range(from_ms, to_ms)
        with store.lock:
            buckets = [b for b in store.steps.get(addr, [])
                       if lo <= b.window_start_ms <= hi]
        return [StepBucketOut(dev_addr=b.dev_addr, window_start_ms=b.window_start_ms,
                              steps=b.steps) for b in buckets]

    @app.put("/api/devices/{addr}/fence")
    def put_fence(addr: str, polygon: GeoJsonPolygon):
        exterior = polygon.coordinates[0]
        if len(exterior) >= 2 and exterior[0] == exterior[-1]:
            exterior = exterior[:-1]   # accept closed GeoJSON rings
        if len(exterior) < 3:
            raise HTTPException(status_code=400,
                                detail="fence polygon needs at least 3 vertices")
        server.put_fence(addr, [(lat, lon) for lon, lat in exterior])
        return {"status": "ok", "vertex_count": len(exterior)}

    @app.get("/api/devices/{addr}/fence", response_model=GeoJsonPolygon)
    def get_fence(addr: str):
        with store.lock:
            fence = store.fences.get(addr)
        if fence is None:
            raise HTTPException(status_code=404, detail=f"no fence for {addr}")
        ring = [(lon, lat) for lat, lon in fence.vertices]
        return GeoJsonPolygon(type="Polygon", coordinates=[ring + ring[:1]])

    @app.get("/api/devices/{addr}/fence/events", response_model=list[FenceEventOut])
    def get_fence_events(addr: str):
        with store.lock:
            if addr not in store.devices and addr not in store.fences:
                raise HTTPException(status_code=404, detail=f"unknown device {addr}")
            events = list(store.fence_events.get(addr, []))
        return [FenceEventOut(dev_addr=e.dev_addr, t_ms=e.t_ms, event=e.event,
                              lat_deg=e.lat_deg, lon_deg=e.lon_deg) for e in events]

    @app.get("/api/devices/{addr}/latest", response_model=LatestOut)
    def get_latest(addr: str):
        known(addr)
        with store.lock:
            points = store.tracks.get(addr, [])
            if not points:
                raise HTTPException(status_code=404, detail=f"no data for {addr}")
            track = points[-1]
            buckets = store.steps.get(addr, [])[-6:]
        return LatestOut(
            track=TrackPointOut(dev_addr=track.dev_addr, t_ms=track.t_ms,
                                lat_deg=track.lat_deg, lon_deg=track.lon_deg,
                                rssi_dbm=track.rssi_dbm, snr_db=track.snr_db,
                                sf=track.sf),
            buckets=[StepBucketOut(dev_addr=b.dev_addr,
                                   window_start_ms=b.window_start_ms,
                                   steps=b.steps) for b in buckets])

    return app
