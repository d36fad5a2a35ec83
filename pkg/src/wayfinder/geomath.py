"""Spherical-earth distance and bearing helpers.

Degrees at the API boundary, radians internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import CoincidentPoints

# mean earth radius in meters
EARTH_RADIUS_M = 6_371_000.0


def normalize_lon(lon: float) -> float:
    """Wrap a longitude into (-180, 180]."""
    lon = math.fmod(lon, 360.0)
    if lon <= -180.0:
        lon += 360.0
    elif lon > 180.0:
        lon -= 360.0
    return lon


@dataclass(frozen=True, order=True)
class GeoCoordinate:
    """WGS84 latitude/longitude pair in degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        lat = float(self.lat)
        if not -90.0 <= lat <= 90.0 or math.isnan(lat):
            raise ValueError(f"latitude out of range: {self.lat}")
        lon = float(self.lon)
        if not math.isfinite(lon):
            raise ValueError(f"longitude not finite: {self.lon}")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", normalize_lon(lon))

    @classmethod
    def from_lonlat(cls, pair) -> "GeoCoordinate":
        """Build from a GeoJSON ``[lon, lat]`` position."""
        return cls(lat=pair[1], lon=pair[0])

    def to_lonlat(self) -> list[float]:
        return [self.lon, self.lat]


def haversine_distance(a: GeoCoordinate, b: GeoCoordinate, radius: float = EARTH_RADIUS_M) -> float:
    """Great-circle distance in meters between two coordinates."""
    # order the operands so that the result is bitwise symmetric
    if (a.lat, a.lon) > (b.lat, b.lon):
        a, b = b, a
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    h = min(1.0, max(0.0, h))
    return 2.0 * radius * math.asin(math.sqrt(h))


def initial_bearing(start: GeoCoordinate, end: GeoCoordinate) -> float:
    """Forward azimuth from ``start`` to ``end`` in degrees, clockwise from north, in [0, 360)."""
    if start == end:
        raise CoincidentPoints(f"bearing undefined for identical points {start}")
    phi1 = math.radians(start.lat)
    phi2 = math.radians(end.lat)
    dlmb = math.radians(end.lon - start.lon)
    x = math.sin(dlmb) * math.cos(phi2)
    y = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlmb)
    bearing = math.degrees(math.atan2(x, y)) % 360.0
    # -0.0 % 360 and tiny negatives can round to 360.0
    return 0.0 if bearing >= 360.0 else bearing


def angle_between_bearings(b1: float, b2: float) -> float:
    """Smallest angular separation of two bearings, in [0, 180]."""
    d = abs(b1 - b2) % 360.0
    return 360.0 - d if d > 180.0 else d


def destination_point(start: GeoCoordinate, bearing: float, distance: float,
                      radius: float = EARTH_RADIUS_M) -> GeoCoordinate:
    """Point reached by travelling ``distance`` meters from ``start`` along ``bearing``.

    Used to lay out synthetic fixtures at metric spacing.
    """
    delta = distance / radius
    theta = math.radians(bearing)
    phi1 = math.radians(start.lat)
    lmb1 = math.radians(start.lon)
    sin_phi2 = math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta)
    phi2 = math.asin(max(-1.0, min(1.0, sin_phi2)))
    lmb2 = lmb1 + math.atan2(math.sin(theta) * math.sin(delta) * math.cos(phi1),
                             math.cos(delta) - math.sin(phi1) * sin_phi2)
    return GeoCoordinate(math.degrees(phi2), math.degrees(lmb2))


def polyline_length(points) -> float:
    return math.fsum(haversine_distance(p, q) for p, q in zip(points, points[1:]))
