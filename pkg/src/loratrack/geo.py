"""Geodesy helpers shared by the synthetic-data generator, the simulator
and the server-side geofence: haversine distance, local metric offsets and
point-in-polygon tests on WGS-84 coordinates."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEG_LAT = 2 * math.pi * EARTH_RADIUS_M / 360.0


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters between two WGS-84 points (R = 6371 km)."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


def offset_by_meters(lat: float, lon: float, north_m: float, east_m: float) -> tuple[float, float]:
    """Displace a WGS-84 point by a local north/east offset.

    Equirectangular scaling at the source latitude; adequate for the tens of
    meters this project moves points by.
    """
    dlat = north_m / METERS_PER_DEG_LAT
    dlon = east_m / (METERS_PER_DEG_LAT * math.cos(math.radians(lat)))
    return lat + dlat, lon + dlon


def _on_segment(plat: float, plon: float, a: Sequence[float], b: Sequence[float]) -> bool:
    eps = 1e-12
    cross = (plon - a[1]) * (b[0] - a[0]) - (plat - a[0]) * (b[1] - a[1])
    if abs(cross) > eps:
        return False
    dot = (plat - a[0]) * (plat - b[0]) + (plon - a[1]) * (plon - b[1])
    return dot <= eps


def point_in_polygon(lat: float, lon: float, vertices: Iterable[tuple[float, float]]) -> bool:
    """Even-odd ray casting over (lat, lon) vertices.

    A point exactly on an edge or vertex counts as inside; this tie-break is
    part of the geofence contract.
    """
    pts = list(vertices)
    if len(pts) < 3:
        raise ValueError("polygon needs at least 3 vertices")
    inside = False
    n = len(pts)
    for i in range(n):
        a = pts[i]
        b = pts[(i + 1) % n]
        if _on_segment(lat, lon, a, b):
            return True
        # cast the ray in +lon direction, using lat as the sweep axis
        if (a[0] > lat) != (b[0] > lat):
            lon_cross = a[1] + (lat - a[0]) * (b[1] - a[1]) / (b[0] - a[0])
            if lon_cross > lon:
                inside = not inside
    return inside
