"""Spherical-earth geometry and the equirectangular tile scheme.

Positions are plain WGS84 degrees on a sphere of radius ``EARTH_RADIUS_M``.
Tiles split the lon/lat rectangle into ``2**level`` columns and rows, which
makes tile arithmetic exact and cheap; the broker and relevance filters only
use tiles as an over-approximating index and always re-check true distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Set, Tuple

from .errors import GeodesyError

EARTH_RADIUS_M = 6_371_000.0
MAX_TILE_LEVEL = 20
MAX_CIRCLE_RADIUS_M = 100_000.0
MAX_ENU_DISTANCE_M = 50_000.0
DEFAULT_BROKER_LEVEL = 14

# Tiles are padded by this many degrees so float rounding at tile edges can
# never drop a covering tile.
_EDGE_MARGIN_DEG = 1e-7


@dataclass(frozen=True, order=True)
class GeoPosition:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or math.isnan(self.lat):
            raise GeodesyError("INVALID_POSITION", f"lat {self.lat} outside [-90, 90]")
        if not (-180.0 <= self.lon < 180.0) or math.isnan(self.lon):
            raise GeodesyError("INVALID_POSITION", f"lon {self.lon} outside [-180, 180)")


@dataclass(frozen=True, order=True)
class TileId:
    level: int
    x: int
    y: int

    def __post_init__(self):
        if not 0 <= self.level <= MAX_TILE_LEVEL:
            raise GeodesyError("INVALID_TILE", f"level {self.level}")
        n = 1 << self.level
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise GeodesyError("INVALID_TILE", f"({self.x}, {self.y}) outside level {self.level}")

    def bounds(self) -> Tuple[float, float, float, float]:
        """Return ``(lat_min, lon_min, lat_max, lon_max)`` of the tile."""
        n = 1 << self.level
        lon_w = 360.0 / n
        lat_h = 180.0 / n
        return (
            -90.0 + self.y * lat_h,
            -180.0 + self.x * lon_w,
            -90.0 + (self.y + 1) * lat_h,
            -180.0 + (self.x + 1) * lon_w,
        )

    def center(self) -> GeoPosition:
        lat0, lon0, lat1, lon1 = self.bounds()
        return GeoPosition((lat0 + lat1) / 2.0, (lon0 + lon1) / 2.0)


@dataclass(frozen=True)
class Circle:
    center: GeoPosition
    radius: float

    def __post_init__(self):
        if not (0.0 < self.radius <= MAX_CIRCLE_RADIUS_M):
            raise GeodesyError("INVALID_CIRCLE", f"radius {self.radius} m")

    def contains(self, pos: GeoPosition) -> bool:
        return distance(self.center, pos) <= self.radius


def normalize_lon(lon: float) -> float:
    """Wrap a longitude into ``[-180, 180)``."""
    lon = math.fmod(lon + 180.0, 360.0)
    if lon < 0.0:
        lon += 360.0
    lon -= 180.0
    # fmod can land exactly on +180 after the shift for tiny negatives
    return -180.0 if lon >= 180.0 else lon


def distance(a: GeoPosition, b: GeoPosition) -> float:
    """Haversine great-circle distance in meters."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def initial_bearing(a: GeoPosition, b: GeoPosition) -> float:
    """Bearing from ``a`` towards ``b`` in degrees clockwise from north, [0, 360)."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dlmb = math.radians(b.lon - a.lon)
    y = math.sin(dlmb) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlmb)
    return math.degrees(math.atan2(y, x)) % 360.0


def destination(start: GeoPosition, bearing_deg: float, dist_m: float) -> GeoPosition:
    """Point reached travelling ``dist_m`` along a great circle."""
    d = dist_m / EARTH_RADIUS_M
    theta = math.radians(bearing_deg)
    phi1 = math.radians(start.lat)
    lmb1 = math.radians(start.lon)
    phi2 = math.asin(math.sin(phi1) * math.cos(d) + math.cos(phi1) * math.sin(d) * math.cos(theta))
    lmb2 = lmb1 + math.atan2(
        math.sin(theta) * math.sin(d) * math.cos(phi1),
        math.cos(d) - math.sin(phi1) * math.sin(phi2),
    )
    return GeoPosition(math.degrees(phi2), normalize_lon(math.degrees(lmb2)))


def tile_for(pos: GeoPosition, level: int = DEFAULT_BROKER_LEVEL) -> TileId:
    n = 1 << level
    x = math.floor((pos.lon + 180.0) / 360.0 * n)
    y = math.floor((pos.lat + 90.0) / 180.0 * n)
    return TileId(level, min(max(x, 0), n - 1), min(max(y, 0), n - 1))


def _x_index(lon: float, n: int) -> int:
    return min(max(math.floor((lon + 180.0) / 360.0 * n), 0), n - 1)


def _y_index(lat: float, n: int) -> int:
    return min(max(math.floor((lat + 90.0) / 180.0 * n), 0), n - 1)


def _x_ranges(lon_lo: float, lon_hi: float, n: int) -> Iterator[Tuple[int, int]]:
    if lon_hi - lon_lo >= 360.0:
        yield 0, n - 1
        return
    if lon_lo < -180.0:
        yield _x_index(lon_lo + 360.0, n), n - 1
        lon_lo = -180.0
    if lon_hi >= 180.0:
        yield 0, _x_index(lon_hi - 360.0, n)
        lon_hi = math.nextafter(180.0, 0.0)
    yield _x_index(lon_lo, n), _x_index(lon_hi, n)


def tiles_covering(c: Circle, level: int = DEFAULT_BROKER_LEVEL) -> Set[TileId]:
    """All tiles intersecting the lat/lon bounding box of ``c``.

    The box uses the exact spherical extents (``asin(sin d / cos lat)`` for
    longitude), so every point of the circle falls into a returned tile.
    """
    n = 1 << level
    d = c.radius / EARTH_RADIUS_M
    d_deg = math.degrees(d)
    lat_lo = c.center.lat - d_deg - _EDGE_MARGIN_DEG
    lat_hi = c.center.lat + d_deg + _EDGE_MARGIN_DEG
    cos_lat = math.cos(math.radians(c.center.lat))
    if lat_hi >= 90.0 or lat_lo <= -90.0 or math.sin(d) >= cos_lat:
        lon_lo, lon_hi = -180.0, 180.0 + 360.0
    else:
        dlon = math.degrees(math.asin(math.sin(d) / cos_lat)) + _EDGE_MARGIN_DEG
        lon_lo, lon_hi = c.center.lon - dlon, c.center.lon + dlon
    y0, y1 = _y_index(max(lat_lo, -90.0), n), _y_index(min(lat_hi, 90.0), n)
    out = set()
    for x0, x1 in _x_ranges(lon_lo, lon_hi, n):
        for x in range(x0, x1 + 1):
            for y in range(y0, y1 + 1):
                out.add(TileId(level, x, y))
    return out


def enu_offset(ref: GeoPosition, p: GeoPosition) -> Tuple[float, float]:
    """Local ``(east, north)`` offset of ``p`` from ``ref`` in meters."""
    if distance(ref, p) >= MAX_ENU_DISTANCE_M:
        raise GeodesyError("TOO_FAR", f"{p} is 50 km or more from {ref}")
    k = math.pi / 180.0 * EARTH_RADIUS_M
    north = (p.lat - ref.lat) * k
    east = normalize_lon(p.lon - ref.lon) * k * math.cos(math.radians(ref.lat))
    return east, north


def from_enu(ref: GeoPosition, east: float, north: float) -> GeoPosition:
    """Inverse of :func:`enu_offset`."""
    k = math.pi / 180.0 * EARTH_RADIUS_M
    lat = ref.lat + north / k
    lon = ref.lon + east / (k * math.cos(math.radians(ref.lat)))
    return GeoPosition(min(max(lat, -90.0), 90.0), normalize_lon(lon))
