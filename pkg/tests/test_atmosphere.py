import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from balloonro.atmosphere import (K1_DRY, Exponential, Layered, MetLevel, SuperRefractionError,
                                  layered_from_met, layered_from_refractivity, read_met_csv,
                                  read_refractivity_csv, refractivity_smith_weintraub,
                                  write_refractivity_csv)

R0 = 6371000.0


def test_smith_weintraub_standard_sea_level():
    N = refractivity_smith_weintraub(MetLevel(p=1013.25, T=288.15, e=0.0, z=0.0))
    assert N == pytest.approx(77.6 * 1013.25 / 288.15, rel=1e-15)
    assert N == pytest.approx(272.87, abs=0.01)


def test_smith_weintraub_dry_term_exact():
    lv = MetLevel(p=850.0, T=270.0, e=0.0, z=1500.0)
    assert refractivity_smith_weintraub(lv) == K1_DRY * 850.0 / 270.0


def test_smith_weintraub_stratosphere():
    assert refractivity_smith_weintraub(MetLevel(10.0, 220.0, 0.0, 30000.0)) == \
        pytest.approx(3.527, abs=5e-4)


def test_smith_weintraub_wet_term():
    lv = MetLevel(p=1000.0, T=300.0, e=20.0, z=0.0)
    assert refractivity_smith_weintraub(lv) == pytest.approx(
        77.6 * 1000 / 300 + 3.73e5 * 20 / 300 ** 2, rel=1e-15)


def test_met_level_validation():
    with pytest.raises(ValueError):
        MetLevel(p=-1.0, T=280.0, e=0.0, z=0.0)
    with pytest.raises(ValueError):
        MetLevel(p=100.0, T=280.0, e=150.0, z=0.0)


def test_exponential_surface_values():
    m = Exponential(300.0, 7000.0, R0)
    n, dn = m.eval(R0)
    assert n == pytest.approx(1.0003, rel=1e-15)
    assert dn == pytest.approx(-1e-6 * 300.0 / 7000.0, rel=1e-15)


def test_vacuum_model():
    m = Exponential(0.0, 7000.0, R0)
    r = R0 + np.linspace(0, 1e5, 11)
    n, dn = m.eval(r)
    assert np.all(n == 1.0) and np.all(dn == 0.0)


def test_layered_reproduces_exponential_at_midpoints():
    z = np.arange(0.0, 30001.0, 1000.0)
    lay = layered_from_refractivity(z, 300.0 * np.exp(-z / 7000.0), R0)
    exp = Exponential(300.0, 7000.0, R0)
    mid = R0 + 0.5 * (z[1:] + z[:-1])
    n1, dn1 = lay.eval(mid)
    n2, dn2 = exp.eval(mid)
    assert np.max(np.abs((n1 - 1) / (n2 - 1) - 1)) < 1e-6
    assert np.max(np.abs(dn1 / dn2 - 1)) < 1e-6


def test_layered_from_met_dry_levels():
    levels = [MetLevel(1000.0, 288.0, 0.0, 0.0), MetLevel(800.0, 275.0, 0.0, 2000.0),
              MetLevel(600.0, 260.0, 0.0, 4200.0), MetLevel(400.0, 240.0, 0.0, 7200.0)]
    m = layered_from_met(levels, R0)
    expected = [77.6 * lv.p / lv.T for lv in levels]
    np.testing.assert_allclose(m.N, expected, rtol=1e-15)
    np.testing.assert_allclose(m.refractivity(R0 + np.array([lv.z for lv in levels])),
                               expected, rtol=1e-12)


def test_layered_from_met_duplicate_height():
    levels = [MetLevel(1000.0, 288.0, 0.0, 0.0), MetLevel(800.0, 275.0, 0.0, 2000.0),
              MetLevel(790.0, 274.0, 0.0, 2000.0), MetLevel(400.0, 240.0, 0.0, 7200.0)]
    with pytest.raises(ValueError):
        layered_from_met(levels, R0)


def test_dry_met_equals_dry_refractivity_construction():
    levels = [MetLevel(1000.0 - 150 * k, 288.0 - 6.5 * k, 0.0, 1500.0 * k) for k in range(6)]
    a = layered_from_met(levels, R0)
    b = layered_from_refractivity([lv.z for lv in levels],
                                  [K1_DRY * lv.p / lv.T for lv in levels], R0)
    r = R0 + np.linspace(-100.0, 12000.0, 97)
    np.testing.assert_array_equal(a.refractivity(r), b.refractivity(r))


def test_layered_needs_four_ascending_levels():
    with pytest.raises(ValueError):
        Layered(R0 + np.array([0.0, 1.0, 2.0]), np.array([3.0, 2.0, 1.0]))
    with pytest.raises(ValueError):
        Layered(R0 + np.array([0.0, 2.0, 1.0, 3.0]), np.array([4.0, 3.0, 2.0, 1.0]))


@pytest.mark.parametrize("model", [
    Exponential(300.0, 7000.0, R0),
    layered_from_refractivity([0, 2000, 5000, 9000, 14000], [320, 250, 170, 100, 50], R0),
])
def test_index_at_least_one_and_decays(model):
    r = R0 + np.linspace(0, 5e5, 2001)
    n, _ = model.eval(r)
    assert np.all(n >= 1.0)
    assert model.eval(R0 + 1e7)[0] - 1.0 < 1e-12
    assert model.is_monotone(R0, R0 + 1e5)


@given(st.floats(100.0, 60000.0))
def test_analytic_gradient_matches_finite_difference(h):
    m = layered_from_refractivity([0, 2000, 5000, 9000, 14000], [320, 250, 170, 100, 50], R0)
    r = R0 + h
    bps = np.array(m.breakpoints)
    if np.min(np.abs(bps - r)) < 10.0:
        return
    step = 1e-2
    fd = (m.eval(r + step)[0] - m.eval(r - step)[0]) / (2 * step)
    assert fd == pytest.approx(m.eval(r)[1], rel=1e-6)


@given(st.floats(0.0, 80000.0))
def test_exponential_gradient_matches_finite_difference(h):
    m = Exponential(300.0, 7000.0, R0)
    r = R0 + h
    step = 1e-2
    fd = (m.eval(r + step)[0] - m.eval(r - step)[0]) / (2 * step)
    assert fd == pytest.approx(m.eval(r)[1], rel=1e-6)


def test_super_refraction_detected():
    # dN/dr below -157 N/km makes x = n r decrease
    m = layered_from_refractivity([0, 100, 200, 5000], [400, 370, 300, 150], R0)
    with pytest.raises(SuperRefractionError):
        m.check_monotone(R0, R0 + 1000.0)
    assert not m.is_monotone(R0, R0 + 1000.0)


def test_radius_from_x_inverts_refractional_radius():
    m = Exponential(300.0, 7000.0, R0)
    r = R0 + np.linspace(0, 50000, 51)
    np.testing.assert_allclose(m.radius_from_x(m.refractional_radius(r)), r, atol=1e-6)


def test_refractivity_csv_round_trip():
    z = np.array([0.0, 1000.5, 2500.0, 9000.25])
    N = np.array([300.1, 260.0, 200.123456789, 80.0])
    buf = io.StringIO()
    write_refractivity_csv(buf, z, N)
    z2, N2 = read_refractivity_csv(io.StringIO("# comment\n" + buf.getvalue()))
    np.testing.assert_array_equal(z, z2)
    np.testing.assert_array_equal(N, N2)


def test_met_csv_reader_and_missing_column():
    text = "# sonde\nz_m,p_hpa,t_k,e_hpa\n0,1000,288,10\n1000,900,281,6\n"
    levels = read_met_csv(io.StringIO(text))
    assert levels[1] == MetLevel(900.0, 281.0, 6.0, 1000.0)
    with pytest.raises(ValueError, match="e_hpa"):
        read_met_csv(io.StringIO("z_m,p_hpa,t_k\n0,1000,288\n"))


def test_top_radius_is_where_refractivity_vanishes():
    m = Exponential(300.0, 7000.0, R0)
    assert m.refractivity(m.top_radius) == pytest.approx(1e-9, rel=1e-9)
    assert math.isfinite(m.top_radius)
