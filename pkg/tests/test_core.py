import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from balloonro.core import (OMEGA_EARTH, WGS84_A, WGS84_B, WGS84_E2, Epoch, GeodeticPos,
                            GeometryError, ecef_from_geodetic, elevation_azimuth, enu_basis,
                            geodetic_from_ecef, radius_of_curvature, rotate_z, total_seconds)
from oracles import geodetic_heikkinen


def _metres(g1: GeodeticPos, g2: GeodeticPos) -> float:
    return float(np.linalg.norm(ecef_from_geodetic(g1) - ecef_from_geodetic(g2)))


# --- time ------------------------------------------------------------------------

def test_total_seconds_origin_and_week():
    assert total_seconds(Epoch(0, 0.0)) == 0.0
    assert total_seconds(Epoch(1, 0.0)) == 604800.0


def test_total_seconds_arithmetic():
    assert total_seconds(Epoch(2120, 345600.5)) == 2120 * 604800 + 345600.5


def test_epoch_rejects_bad_fields():
    with pytest.raises(ValueError):
        Epoch(-1, 0.0)
    with pytest.raises(ValueError):
        Epoch(0, 604800.0)


def test_epoch_from_seconds_round_trip():
    e = Epoch.from_seconds(2120 * 604800 + 345600.25)
    assert (e.week, e.tow) == (2120, 345600.25)


@given(st.integers(0, 3000), st.floats(0, 604799.999), st.integers(0, 3000),
       st.floats(0, 604799.999))
def test_total_seconds_monotone_in_lexicographic_order(w1, t1, w2, t2):
    # non-decreasing always; strict once the epochs differ by more than float resolution
    e1, e2 = Epoch(w1, t1), Epoch(w2, t2)
    s1, s2 = total_seconds(e1), total_seconds(e2)
    gap = abs((w2 - w1) * 604800.0 + (t2 - t1))
    if e1 < e2:
        assert s1 <= s2 and (s1 < s2 or gap < 1e-6)
    elif e1 > e2:
        assert s1 >= s2 and (s1 > s2 or gap < 1e-6)


# --- geodesy ---------------------------------------------------------------------

def test_ecef_equator_prime_meridian():
    np.testing.assert_array_equal(ecef_from_geodetic(GeodeticPos(0.0, 0.0, 0.0)),
                                  [6378137.0, 0.0, 0.0])


def test_ecef_pole_is_semi_minor_axis():
    v = ecef_from_geodetic(GeodeticPos(math.pi / 2, 0.0, 0.0))
    assert abs(v[0]) < 1e-9 and abs(v[1]) < 1e-9
    assert v[2] == pytest.approx(WGS84_A * (1 - 1 / 298.257223563), abs=1e-9)


def test_ecef_matches_closed_form_inverse():
    g = GeodeticPos(0.6, -2.0, 18000.0)
    lat, lon, h = geodetic_heikkinen(*ecef_from_geodetic(g))
    assert _metres(g, GeodeticPos(lat, lon, h)) < 1e-6


def test_geodetic_on_axis_points():
    g = geodetic_from_ecef([6378137.0, 0.0, 0.0])
    assert (g.lat, g.lon) == (0.0, 0.0) and abs(g.h) < 1e-9
    g = geodetic_from_ecef([0.0, 0.0, 6356752.314])
    assert g.lat == pytest.approx(math.pi / 2, abs=1e-12)
    assert abs(g.h) < 1e-3


def test_geodetic_rejects_geocenter():
    with pytest.raises(GeometryError):
        geodetic_from_ecef([1.0, 2.0, 3.0])


@given(st.floats(-math.pi / 2, math.pi / 2), st.floats(-math.pi, math.pi),
       st.one_of(st.floats(-500.0, 40000.0), st.floats(19.9e6, 20.5e6)))
def test_geodetic_round_trip(lat, lon, h):
    g = GeodeticPos(lat, lon, h)
    back = geodetic_from_ecef(ecef_from_geodetic(g))
    assert _metres(g, back) < 1e-6


@given(st.floats(-1.5, 1.5), st.floats(-math.pi, math.pi), st.floats(-500.0, 40000.0))
def test_geodetic_agrees_with_closed_form(lat, lon, h):
    v = ecef_from_geodetic(GeodeticPos(lat, lon, h))
    ours = geodetic_from_ecef(v)
    ref = GeodeticPos(*geodetic_heikkinen(*v))
    assert _metres(ours, ref) < 1e-6


# --- elevation / azimuth ---------------------------------------------------------

def test_zenith_target():
    g = GeodeticPos(0.5, 1.0, 18000.0)
    el, _ = elevation_azimuth(ecef_from_geodetic(g),
                              ecef_from_geodetic(GeodeticPos(0.5, 1.0, 2e7)))
    assert el == pytest.approx(math.pi / 2, abs=1e-9)


def test_horizon_target():
    g = GeodeticPos(0.5, 1.0, 18000.0)
    rx = ecef_from_geodetic(g)
    east, north, _ = enu_basis(g.lat, g.lon)
    el, az = elevation_azimuth(rx, rx + 1e6 * (east + north) / math.sqrt(2))
    assert abs(el) < 1e-12
    assert az == pytest.approx(math.pi / 4, abs=1e-12)


def test_gnss_below_geometric_horizon():
    # a GPS-radius point 80 deg of geocentric arc away lies below the horizon of an 18 km balloon
    rx = ecef_from_geodetic(GeodeticPos(0.0, 0.0, 18000.0))
    gam = math.radians(80.0)
    tx = 26.56e6 * np.array([math.cos(gam), math.sin(gam), 0.0])
    el, _ = elevation_azimuth(rx, tx)
    # straight-line depression below the local horizontal is known in closed form
    r = np.linalg.norm(rx)
    expected = math.atan2(26.56e6 * math.cos(gam) - r, 26.56e6 * math.sin(gam))
    assert el < 0
    assert el == pytest.approx(expected, abs=1e-9)


def test_coincident_points_raise():
    rx = ecef_from_geodetic(GeodeticPos(0.1, 0.2, 100.0))
    with pytest.raises(GeometryError):
        elevation_azimuth(rx, rx)


@given(st.floats(-1.4, 1.4), st.floats(-3.0, 3.0), st.floats(0.0, 40000.0),
       st.floats(-1.4, 1.4), st.floats(-3.0, 3.0), st.floats(-2 * math.pi, 2 * math.pi))
def test_elevation_invariant_under_earth_rotation(lat, lon, h, tlat, tlon, angle):
    rx = ecef_from_geodetic(GeodeticPos(lat, lon, h))
    tx = ecef_from_geodetic(GeodeticPos(tlat, tlon, 2.02e7))
    el1, _ = elevation_azimuth(rx, tx)
    el2, _ = elevation_azimuth(rotate_z(rx, angle), rotate_z(tx, angle))
    assert abs(el1 - el2) < 1e-12


# --- radius of curvature ---------------------------------------------------------

def test_radius_of_curvature_equator_east_is_prime_vertical():
    # along the equator the normal section is the prime vertical, N = a / sqrt(1 - e^2 sin^2 0) = a
    assert radius_of_curvature(0.0, math.pi / 2) == pytest.approx(WGS84_A, rel=1e-15)


def test_radius_of_curvature_equator_north_is_meridian():
    assert radius_of_curvature(0.0, 0.0) == pytest.approx(WGS84_A * (1 - WGS84_E2), rel=1e-15)


def test_radius_of_curvature_euler_formula():
    lat, az = 0.61, 1.0
    w = 1 - WGS84_E2 * math.sin(lat) ** 2
    M = WGS84_A * (1 - WGS84_E2) / w ** 1.5
    N = WGS84_A / math.sqrt(w)
    expected = M * N / (N * math.cos(az) ** 2 + M * math.sin(az) ** 2)
    assert radius_of_curvature(lat, az) == pytest.approx(expected, rel=1e-14)
    assert WGS84_B < expected < WGS84_A ** 2 / WGS84_B


def test_rotate_z_is_frame_rotation():
    v = rotate_z([1.0, 0.0, 5.0], OMEGA_EARTH * 0.07)
    assert v[2] == 5.0
    assert v[1] == pytest.approx(-math.sin(OMEGA_EARTH * 0.07))
