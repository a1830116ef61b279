"""Time tags, physical constants and WGS-84 geometry shared by every stage.

All times inside the package are continuous GPS seconds (``week * 604800 +
tow``); :class:`Epoch` is the external, human-facing form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

SECONDS_PER_WEEK = 604800.0

C_LIGHT = 299792458.0  # m/s
F_L1 = 1575.42e6  # Hz
LAMBDA_L1 = C_LIGHT / F_L1  # m

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
R_EARTH_MEAN = 6371000.0

OMEGA_EARTH = 7.2921151467e-5  # rad/s
GM_EARTH = 3.986004418e14  # m^3/s^2


class GeometryError(ValueError):
    """Raised for degenerate geometric input (coincident points, geocenter)."""


@dataclass(frozen=True, order=True)
class Epoch:
    """GPS week and seconds of week."""

    week: int
    tow: float

    def __post_init__(self):
        if self.week < 0:
            raise ValueError(f"negative GPS week {self.week}")
        if not (0.0 <= self.tow < SECONDS_PER_WEEK):
            raise ValueError(f"tow {self.tow} outside [0, 604800)")

    @classmethod
    def from_seconds(cls, seconds: float) -> "Epoch":
        week = int(seconds // SECONDS_PER_WEEK)
        return cls(week, seconds - week * SECONDS_PER_WEEK)

    @property
    def seconds(self) -> float:
        return total_seconds(self)


TimeLike = Union[Epoch, float, int]


def total_seconds(e: Epoch) -> float:
    return e.week * SECONDS_PER_WEEK + e.tow


def as_seconds(t: TimeLike) -> float:
    if isinstance(t, Epoch):
        return total_seconds(t)
    return float(t)


@dataclass(frozen=True)
class GeodeticPos:
    lat: float  # rad
    lon: float  # rad
    h: float  # m above ellipsoid

    def __post_init__(self):
        if abs(self.lat) > math.pi / 2 + 1e-15:
            raise ValueError(f"latitude {self.lat} rad out of range")


def ecef_from_geodetic(g: GeodeticPos) -> np.ndarray:
    slat, clat = math.sin(g.lat), math.cos(g.lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
    return np.array([
        (n + g.h) * clat * math.cos(g.lon),
        (n + g.h) * clat * math.sin(g.lon),
        (n * (1.0 - WGS84_E2) + g.h) * slat,
    ])


def geodetic_from_ecef(v) -> GeodeticPos:
    """Bowring initial guess refined by fixed-point iteration on latitude.

    Converges to well below a micrometre for anything from the deep
    interior (|v| > 1 km) out past GNSS orbit radii.
    """
    x, y, z = (float(c) for c in v)
    p = math.hypot(x, y)
    if math.hypot(p, z) < 1000.0:
        raise GeometryError("position within 1 km of the geocenter")
    lon = math.atan2(y, x)
    ep2 = WGS84_E2 / (1.0 - WGS84_E2)
    beta = math.atan2(z * WGS84_A, p * WGS84_B)
    lat = math.atan2(z + ep2 * WGS84_B * math.sin(beta) ** 3,
                     p - WGS84_E2 * WGS84_A * math.cos(beta) ** 3)
    for _ in range(10):
        slat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
        new = math.atan2(z + n * WGS84_E2 * slat, p)
        if abs(new - lat) < 1e-15:
            lat = new
            break
        lat = new
    slat, clat = math.sin(lat), math.cos(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
    # pick the better-conditioned height formula
    if abs(clat) > 0.1:
        h = p / clat - n
    else:
        h = z / slat - n * (1.0 - WGS84_E2)
    return GeodeticPos(lat, lon, h)


def enu_basis(lat: float, lon: float) -> np.ndarray:
    """Rows are the east, north and up unit vectors in ECEF."""
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    return np.array([
        [-so, co, 0.0],
        [-sl * co, -sl * so, cl],
        [cl * co, cl * so, sl],
    ])


def elevation_azimuth(rx, target) -> tuple[float, float]:
    """Elevation above the ellipsoidal horizon at ``rx`` and azimuth from north."""
    rx = np.asarray(rx, dtype=float)
    d = np.asarray(target, dtype=float) - rx
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        raise GeometryError("target coincides with receiver")
    g = geodetic_from_ecef(rx)
    e, n, u = enu_basis(g.lat, g.lon) @ (d / dist)
    el = math.atan2(u, math.hypot(e, n))  # asin(u) loses half the digits near zenith
    az = math.atan2(e, n) % (2.0 * math.pi)
    return el, az


def radius_of_curvature(lat: float, azimuth: float) -> float:
    """Euler radius of curvature of the ellipsoid along ``azimuth``."""
    s2 = math.sin(lat) ** 2
    w = 1.0 - WGS84_E2 * s2
    meridian = WGS84_A * (1.0 - WGS84_E2) / w ** 1.5
    normal = WGS84_A / math.sqrt(w)
    return 1.0 / (math.cos(azimuth) ** 2 / meridian + math.sin(azimuth) ** 2 / normal)


def rotate_z(v, angle: float) -> np.ndarray:
    """Coordinates of ``v`` in a frame rotated by ``angle`` about +z."""
    c, s = math.cos(angle), math.sin(angle)
    v = np.asarray(v, dtype=float)
    return np.array([c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]])
