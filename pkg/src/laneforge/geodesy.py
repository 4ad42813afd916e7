"""Datum conversions (BD-09 / GCJ-02 / WGS-84) and small-scale metric geometry.

Chinese map services ship deliberately offset coordinates: Baidu uses BD-09,
GCJ-02 is the state-mandated "mars" datum, GPS hardware speaks WGS-84. The
constants below are the widely published de facto ones; GCJ->WGS is inverted
by fixed-point iteration rather than the one-shot approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import ConvergenceError, InvalidCoordinateError, ProjectionRangeError

X_PI = math.pi * 3000.0 / 180.0
KRASOVSKY_A = 6378245.0  # semi-major axis used by the GCJ-02 obfuscation
KRASOVSKY_EE = 0.00669342162296594323
EARTH_RADIUS_M = 6_371_000.0
M_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0  # ~111194.9 m per degree of arc

# Rectangle gate shared by the reference implementations; outside it the
# WGS<->GCJ pair is the identity.
CHINA_LNG_MIN, CHINA_LNG_MAX = 72.004, 137.8347
CHINA_LAT_MIN, CHINA_LAT_MAX = 0.8293, 55.8271

GCJ_INVERSION_TOL_DEG = 1e-9
GCJ_INVERSION_MAX_ITER = 50
BD_INVERSION_MAX_ITER = 25

LOCAL_PLANE_MAX_DEG = 0.5


class Datum(str, Enum):
    BD09 = "bd09"
    GCJ02 = "gcj02"
    WGS84 = "wgs84"


@dataclass(frozen=True)
class GeoPoint:
    """Longitude/latitude pair in degrees. The datum travels alongside
    (record or collection level), not on the point itself."""

    lng: float
    lat: float


def _check(p: GeoPoint) -> None:
    if not (math.isfinite(p.lng) and math.isfinite(p.lat)):
        raise InvalidCoordinateError(f"non-finite coordinate ({p.lng}, {p.lat})")
    if not (-180.0 <= p.lng <= 180.0 and -90.0 <= p.lat <= 90.0):
        raise InvalidCoordinateError(f"coordinate out of range ({p.lng}, {p.lat})")


def in_china(p: GeoPoint) -> bool:
    return CHINA_LNG_MIN <= p.lng <= CHINA_LNG_MAX and CHINA_LAT_MIN <= p.lat <= CHINA_LAT_MAX


def bd09_to_gcj02(p: GeoPoint) -> GeoPoint:
    """Remove Baidu's polar offset. Applied unconditionally (pure arithmetic).

    The published one-shot de-offset is only an approximate inverse (up to
    ~2e-6 deg); it seeds a short fixed-point polish against the exact
    forward transform so round trips stay below 1e-6 deg everywhere.
    """
    _check(p)
    x = p.lng - 0.0065
    y = p.lat - 0.006
    z = math.sqrt(x * x + y * y) - 0.00002 * math.sin(y * X_PI)
    theta = math.atan2(y, x) - 0.000003 * math.cos(x * X_PI)
    gcj = GeoPoint(z * math.cos(theta), z * math.sin(theta))
    for _ in range(BD_INVERSION_MAX_ITER):
        forward = gcj02_to_bd09(gcj)
        nxt = GeoPoint(gcj.lng - (forward.lng - p.lng), gcj.lat - (forward.lat - p.lat))
        if abs(nxt.lng - gcj.lng) < GCJ_INVERSION_TOL_DEG and abs(nxt.lat - gcj.lat) < GCJ_INVERSION_TOL_DEG:
            return nxt
        gcj = nxt
    raise ConvergenceError(f"BD-09 inversion did not converge for ({p.lng}, {p.lat})", last=gcj)


def gcj02_to_bd09(p: GeoPoint) -> GeoPoint:
    _check(p)
    z = math.sqrt(p.lng * p.lng + p.lat * p.lat) + 0.00002 * math.sin(p.lat * X_PI)
    theta = math.atan2(p.lat, p.lng) + 0.000003 * math.cos(p.lng * X_PI)
    return GeoPoint(z * math.cos(theta) + 0.0065, z * math.sin(theta) + 0.006)


def _transform_lat(x: float, y: float) -> float:
    ret = -100.0 + 2.0 * x + 3.0 * y + 0.2 * y * y + 0.1 * x * y + 0.2 * math.sqrt(abs(x))
    ret += (20.0 * math.sin(6.0 * x * math.pi) + 20.0 * math.sin(2.0 * x * math.pi)) * 2.0 / 3.0
    ret += (20.0 * math.sin(y * math.pi) + 40.0 * math.sin(y / 3.0 * math.pi)) * 2.0 / 3.0
    ret += (160.0 * math.sin(y / 12.0 * math.pi) + 320.0 * math.sin(y * math.pi / 30.0)) * 2.0 / 3.0
    return ret


def _transform_lng(x: float, y: float) -> float:
    ret = 300.0 + x + 2.0 * y + 0.1 * x * x + 0.1 * x * y + 0.1 * math.sqrt(abs(x))
    ret += (20.0 * math.sin(6.0 * x * math.pi) + 20.0 * math.sin(2.0 * x * math.pi)) * 2.0 / 3.0
    ret += (20.0 * math.sin(x * math.pi) + 40.0 * math.sin(x / 3.0 * math.pi)) * 2.0 / 3.0
    ret += (150.0 * math.sin(x / 12.0 * math.pi) + 300.0 * math.sin(x / 30.0 * math.pi)) * 2.0 / 3.0
    return ret


def wgs84_to_gcj02(p: GeoPoint) -> GeoPoint:
    """Apply the published obfuscation. Out-of-China points pass through unchanged."""
    _check(p)
    if not in_china(p):
        return GeoPoint(p.lng, p.lat)
    dlat = _transform_lat(p.lng - 105.0, p.lat - 35.0)
    dlng = _transform_lng(p.lng - 105.0, p.lat - 35.0)
    radlat = math.radians(p.lat)
    magic = math.sin(radlat)
    magic = 1.0 - KRASOVSKY_EE * magic * magic
    sqrtmagic = math.sqrt(magic)
    dlat = (dlat * 180.0) / ((KRASOVSKY_A * (1.0 - KRASOVSKY_EE)) / (magic * sqrtmagic) * math.pi)
    dlng = (dlng * 180.0) / (KRASOVSKY_A / sqrtmagic * math.cos(radlat) * math.pi)
    return GeoPoint(p.lng + dlng, p.lat + dlat)


def gcj02_to_wgs84(p: GeoPoint) -> GeoPoint:
    """Invert wgs84_to_gcj02 by fixed-point iteration (tol 1e-9 deg, cap 50)."""
    _check(p)
    if not in_china(p):
        return GeoPoint(p.lng, p.lat)
    wgs = p
    for _ in range(GCJ_INVERSION_MAX_ITER):
        forward = wgs84_to_gcj02(wgs)
        nxt = GeoPoint(wgs.lng - (forward.lng - p.lng), wgs.lat - (forward.lat - p.lat))
        if abs(nxt.lng - wgs.lng) < GCJ_INVERSION_TOL_DEG and abs(nxt.lat - wgs.lat) < GCJ_INVERSION_TOL_DEG:
            return nxt
        wgs = nxt
    raise ConvergenceError(
        f"GCJ-02 inversion did not converge for ({p.lng}, {p.lat})", last=wgs
    )


_CHAIN_TO_WGS84 = {
    Datum.BD09: lambda p: gcj02_to_wgs84(bd09_to_gcj02(p)),
    Datum.GCJ02: gcj02_to_wgs84,
    Datum.WGS84: lambda p: p,
}

_CHAIN_FROM_WGS84 = {
    Datum.BD09: lambda p: gcj02_to_bd09(wgs84_to_gcj02(p)),
    Datum.GCJ02: wgs84_to_gcj02,
    Datum.WGS84: lambda p: p,
}


def convert_datum(p: GeoPoint, src: Datum, dst: Datum) -> GeoPoint:
    """Convert between any two supported datums, chaining through GCJ-02."""
    if src == dst:
        _check(p)
        return p
    return _CHAIN_FROM_WGS84[dst](_CHAIN_TO_WGS84[src](p))


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a 6,371,000 m sphere."""
    _check(a)
    _check(b)
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlam = math.radians(b.lng - a.lng)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.atan2(math.sqrt(h), math.sqrt(1.0 - h))


def bearing_deg(a: GeoPoint, b: GeoPoint) -> float:
    """Initial compass bearing a->b in degrees [0, 360): 0 north, 90 east."""
    _check(a)
    _check(b)
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dlam = math.radians(b.lng - a.lng)
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    return (math.degrees(math.atan2(y, x)) + 360.0) % 360.0


def local_plane_project(origin: GeoPoint, p: GeoPoint) -> tuple[float, float]:
    """Equirectangular projection about origin, meters (x east, y north).

    Intended for sub-degree neighborhoods only; lane offsetting works in this
    frame and round-trips through local_plane_unproject.
    """
    _check(origin)
    _check(p)
    if abs(p.lng - origin.lng) >= LOCAL_PLANE_MAX_DEG or abs(p.lat - origin.lat) >= LOCAL_PLANE_MAX_DEG:
        raise ProjectionRangeError(
            f"point ({p.lng}, {p.lat}) too far from origin ({origin.lng}, {origin.lat})"
        )
    x = (p.lng - origin.lng) * math.cos(math.radians(origin.lat)) * M_PER_DEG
    y = (p.lat - origin.lat) * M_PER_DEG
    return x, y


def local_plane_unproject(origin: GeoPoint, x: float, y: float) -> GeoPoint:
    _check(origin)
    lng = origin.lng + x / (math.cos(math.radians(origin.lat)) * M_PER_DEG)
    lat = origin.lat + y / M_PER_DEG
    return GeoPoint(lng, lat)
