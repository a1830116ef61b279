import datetime as dt
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from balloonro.ingest import (AlignReport, Constellation, EphemerisTable, ObsEpoch, ParseError,
                              PlatformState, SatId, SatTrack, align_epochs, parse_obs_csv,
                              parse_platform_csv, parse_rinex_obs, parse_sp3, write_obs_csv,
                              write_platform_csv, write_rinex_obs, write_sp3)

G05 = SatId(Constellation.GPS, 5)
E11 = SatId(Constellation.GAL, 11)
R07 = SatId(Constellation.GLO, 7)


def _gps(*args) -> float:
    return (dt.datetime(*args) - dt.datetime(1980, 1, 6)).total_seconds()


def _hdr(content: str, label: str) -> str:
    return f"{content:<60}{label}"


def _obs(value) -> str:
    return " " * 16 if value is None else f"{value:14.3f}  "


RINEX_HEADER = "\n".join([
    _hdr("     3.04           OBSERVATION DATA    M", "RINEX VERSION / TYPE"),
    _hdr("G    4 C1C L1C D1C S1C", "SYS / # / OBS TYPES"),
    _hdr("E    4 C1X L1X D1X S1X", "SYS / # / OBS TYPES"),
    _hdr("R    4 C1C L1C D1C S1C", "SYS / # / OBS TYPES"),
    _hdr("", "END OF HEADER"),
])

RINEX_BODY = "\n".join([
    "> 2020 08 26 00 00  0.0000000  0  3",
    "G05" + _obs(21000000.125) + _obs(110354897.321) + _obs(-1234.567) + _obs(45.25),
    "R07" + _obs(20000000.5) + _obs(100000000.0) + _obs(100.0) + _obs(40.0),
    "E11" + _obs(24000000.0) + _obs(-12.5) + _obs(2500.0) + _obs(38.75),
    "> 2020 08 26 00 00  1.0000000  0  3",
    "G05" + _obs(21000000.5) + _obs(110353662.0) + _obs(None) + _obs(45.0),
    "S20" + _obs(1.0) + _obs(2.0) + _obs(3.0) + _obs(4.0),
    "E11" + _obs(None) + _obs(-2512.5) + _obs(2500.0) + _obs(39.0),
])

RINEX_TEXT = RINEX_HEADER + "\n" + RINEX_BODY + "\n"


# --- RINEX -------------------------------------------------------------------------

def test_rinex_fixture_values():
    parsed = parse_rinex_obs(io.StringIO(RINEX_TEXT))
    assert len(parsed) == 4
    g = parsed[0]
    assert g.sat == G05
    assert g.t == _gps(2020, 8, 26)
    assert (g.carrier_phase, g.doppler, g.snr, g.pseudorange) == \
        (110354897.321, -1234.567, 45.25, 21000000.125)
    last = parsed[3]
    assert last.sat == E11 and last.t == _gps(2020, 8, 26) + 1.0
    assert last.pseudorange is None and last.carrier_phase == -2512.5


def test_rinex_counters():
    rep = parse_rinex_obs(io.StringIO(RINEX_TEXT)).report
    assert rep.blank_fields == 1
    assert rep.unknown_constellation == 1
    assert rep.skipped_epochs == 0


def test_rinex_glonass_parsed_but_excluded_from_processing():
    parsed = parse_rinex_obs(io.StringIO(RINEX_TEXT))
    assert R07 in {o.sat for o in parsed}
    t0 = _gps(2020, 8, 26)
    track = lambda s: SatTrack(s, np.array([t0 - 900, t0 + 900]), np.ones((2, 3)) * 2e7)
    eph = EphemerisTable({s: track(s) for s in (G05, E11, R07)})
    plat = [PlatformState(t0 + k, (6.4e6, 0, 0), (0, 0, 0)) for k in range(2)]
    assert R07 not in {d.sat for d in align_epochs(parsed, plat, eph)}
    assert R07 in {d.sat for d in align_epochs(parsed, plat, eph, include_glonass=True)}


def test_rinex_event_flag_epoch_skipped():
    body = RINEX_BODY.replace("> 2020 08 26 00 00  1.0000000  0  3",
                              "> 2020 08 26 00 00  1.0000000  4  3")
    parsed = parse_rinex_obs(io.StringIO(RINEX_HEADER + "\n" + body + "\n"))
    assert parsed.report.skipped_epochs == 1
    assert len(parsed) == 3


def test_rinex_loss_of_lock_indicator():
    line = "G05" + _obs(1.0) + f"{5.0:14.3f}1 " + _obs(1.0) + _obs(40.0)
    text = RINEX_HEADER + "\n> 2020 08 26 00 00  0.0000000  0  1\n" + line + "\n"
    assert parse_rinex_obs(io.StringIO(text))[0].loss_of_lock


def test_rinex_long_comment_wraps():
    t0 = _gps(2021, 3, 1, 12)
    epochs = [ObsEpoch(t0, G05, 1.0e7, -100.0, 40.0, 2.2e7, False)]
    note = "config_hash=" + "0123456789abcdef" * 4
    buf = io.StringIO()
    write_rinex_obs(epochs, buf, comments=[note])
    lines = [ln for ln in buf.getvalue().splitlines() if ln.endswith("COMMENT")]
    assert len(lines) == 2 and all(len(ln) == 67 for ln in lines)
    assert "".join(ln[:60] for ln in lines).rstrip() == note
    assert len(parse_rinex_obs(io.StringIO(buf.getvalue()))) == 1


def test_rinex_round_trip_at_field_precision():
    t0 = _gps(2021, 3, 1, 12)
    rng = np.random.default_rng(3)
    epochs = [ObsEpoch(t0 + k, s, float(rng.uniform(-1e8, 1e8)), float(rng.uniform(-5e3, 5e3)),
                       float(rng.uniform(20, 55)), float(rng.uniform(2e7, 2.6e7)), k == 3)
              for k in range(10) for s in (G05, E11)]
    buf = io.StringIO()
    write_rinex_obs(epochs, buf, comments=["fixture"])
    back = parse_rinex_obs(io.StringIO(buf.getvalue()))
    assert len(back) == len(epochs)
    for a, b in zip(sorted(epochs, key=lambda o: (o.t, str(o.sat))), back):
        assert (a.t, a.sat, a.loss_of_lock) == (b.t, b.sat, b.loss_of_lock)
        for u, v in ((a.carrier_phase, b.carrier_phase), (a.doppler, b.doppler), (a.snr, b.snr),
                     (a.pseudorange, b.pseudorange)):
            assert abs(u - v) <= 5e-4 + 1e-9 * abs(u)


# --- SP3 ---------------------------------------------------------------------------

SP3_TEXT = """#dP2020  8 26  0  0  0.00000000       3 ORBIT IGS14 HLM  IGS
## 2120 259200.00000000   900.00000000 59087 0.0000000000000
+    2   G05G07
/* fixture
*  2020  8 26  0  0  0.00000000
PG05  13250.123456 -21000.654321   8123.000001     12.345678
PG07 -15000.000000  10000.500000  19000.250000 999999.999999
*  2020  8 26  0 15  0.00000000
PG05  13900.100000 -20500.200000   9000.300000     12.346000
PG07 -15500.000000   9500.500000  19200.250000 999999.999999
*  2020  8 26  0 30  0.00000000
PG05  14500.000001 -19900.999999   9800.500000     12.346500
PG07 -16000.000000   9000.000000  19400.000000 999999.999999
EOF
"""


def test_sp3_three_epochs_km_to_m():
    table = parse_sp3(io.StringIO(SP3_TEXT))
    assert len(table) == 2 and table.spacing == 900.0
    g = table[G05]
    t0 = _gps(2020, 8, 26)
    np.testing.assert_array_equal(g.t, [t0, t0 + 900, t0 + 1800])
    assert g.pos[0, 0] == float("13250.123456") * 1e3
    assert g.pos[0, 1] == float("-21000.654321") * 1e3
    assert g.pos[2, 2] == float("9800.500000") * 1e3
    assert g.clock[0] == 12.345678e-6 or g.clock[0] == pytest.approx(12.345678e-6, rel=1e-15)


def test_sp3_clock_sentinel_is_missing():
    table = parse_sp3(io.StringIO(SP3_TEXT))
    g7 = table[SatId(Constellation.GPS, 7)]
    assert g7.clock is None
    assert g7.pos.shape == (3, 3)


def test_sp3_round_trip():
    table = parse_sp3(io.StringIO(SP3_TEXT))
    buf = io.StringIO()
    write_sp3(table, buf)
    again = parse_sp3(io.StringIO(buf.getvalue()))
    for sat in table.sats():
        np.testing.assert_array_equal(table[sat].t, again[sat].t)
        np.testing.assert_allclose(table[sat].pos, again[sat].pos, atol=1e-6)


# --- platform CSV --------------------------------------------------------------------

PLATFORM_TEXT = """# balloon GNSS/INS
week,tow,x_m,y_m,z_m,vx_mps,vy_mps,vz_mps
2120,259200.0,-1888000.125,-4894000.5,3457000.25,1.5,-2.25,0.125
2120,259201.0,-1887998.625,-4894002.75,3457000.375,1.5,-2.25,0.125
"""


def test_platform_two_rows_bitwise():
    states = parse_platform_csv(io.StringIO(PLATFORM_TEXT))
    assert len(states) == 2
    s = states[1]
    assert s.t == 2120 * 604800 + 259201.0
    assert s.pos == (-1887998.625, -4894002.75, 3457000.375)
    assert s.vel == (1.5, -2.25, 0.125)
    assert s.pos_sigma is None


def test_platform_out_of_order_rejected():
    lines = PLATFORM_TEXT.splitlines()
    text = "\n".join(lines[:2] + [lines[3], lines[2]])
    with pytest.raises(ParseError) as err:
        parse_platform_csv(io.StringIO(text))
    assert err.value.line == 4


def test_platform_nan_velocity_row_dropped():
    text = PLATFORM_TEXT + "2120,259202.0,-1887997.0,-4894005.0,3457000.5,nan,-2.25,0.125\n"
    states = parse_platform_csv(io.StringIO(text))
    assert len(states) == 2
    assert states.report.rejected_rows == 1


def test_platform_round_trip_bitwise():
    rng = np.random.default_rng(11)
    states = [PlatformState(2120 * 604800 + 100.0 + k * 0.1, tuple(rng.normal(0, 6e6, 3)),
                            tuple(rng.normal(0, 5, 3)), None if k % 2 else 0.05)
              for k in range(20)]
    buf = io.StringIO()
    write_platform_csv(states, buf, comments=["x"])
    back = list(parse_platform_csv(io.StringIO(buf.getvalue())))
    assert back == states


def test_obs_csv_round_trip_bitwise():
    rng = np.random.default_rng(5)
    epochs = [ObsEpoch(2120 * 604800 + 7.0 + k, G05, float(rng.normal(0, 1e8)),
                       float(rng.normal(0, 3e3)), 44.0, None if k == 2 else 2.1e7, k == 4)
              for k in range(8)]
    buf = io.StringIO()
    write_obs_csv(epochs, buf)
    assert list(parse_obs_csv(io.StringIO(buf.getvalue()))) == epochs


# --- alignment ---------------------------------------------------------------------------

def _track(sat, t0, t1):
    return SatTrack(sat, np.array([t0, t1]), np.array([[2e7, 0, 0], [2e7, 1e5, 0]]))


def _obs_at(times, sat=G05):
    return [ObsEpoch(float(t), sat, 100.0 + t, -1.0, 40.0) for t in times]


def _plat_at(times):
    return [PlatformState(float(t), (6.4e6 + t, 0.0, 0.0), (1.0, 0.0, 0.0)) for t in times]


def test_align_exact_pairing_at_1hz():
    t = 1000.0 + np.arange(60)
    eph = EphemerisTable({G05: _track(G05, 0.0, 5000.0)})
    plat = _plat_at(t)
    (ds,) = align_epochs(_obs_at(t), plat, eph)
    assert len(ds.obs) == 60
    assert all(p.t == o.t for o, p in zip(ds.obs, ds.platform))
    assert ds.event_id.startswith("G05-")


def test_align_splits_at_gap():
    t = np.concatenate([1000.0 + np.arange(30), 1090.0 + np.arange(30)])
    eph = EphemerisTable({G05: _track(G05, 0.0, 5000.0)})
    out = align_epochs(_obs_at(t), _plat_at(t), eph, gap_split_s=30.0)
    assert [len(d.obs) for d in out] == [30, 30]
    assert out[1].obs[0].t == 1090.0


@pytest.mark.parametrize("tol, paired", [(0.04, 0), (0.06, 10)])
def test_align_tolerance(tol, paired):
    t = 1000.0 + np.arange(10)
    eph = EphemerisTable({G05: _track(G05, 0.0, 5000.0)})
    rep = AlignReport()
    out = align_epochs(_obs_at(t), _plat_at(t + 0.05), eph, tolerance=tol, report=rep)
    assert sum(len(d.obs) for d in out) == paired
    assert rep.unpaired == 10 - paired


def test_align_never_fabricates_states():
    t_obs = 1000.0 + 0.5 * np.arange(40)
    t_plat = 1000.0 + np.arange(20)
    plat = _plat_at(t_plat)
    eph = EphemerisTable({G05: _track(G05, 0.0, 5000.0)})
    rep = AlignReport()
    out = align_epochs(_obs_at(t_obs), plat, eph, tolerance=0.05, report=rep)
    paired = [p for d in out for p in d.platform]
    assert all(any(p is q for q in plat) for p in paired)
    assert len(paired) == 20 and rep.unpaired == 20


def test_align_without_ephemeris_counts():
    t = 1000.0 + np.arange(5)
    rep = AlignReport()
    out = align_epochs(_obs_at(t, E11), _plat_at(t), EphemerisTable({}), report=rep)
    assert out == [] and rep.no_ephemeris == 5


# --- malformed inputs ------------------------------------------------------------------------

def _rinex_lines():
    return RINEX_TEXT.splitlines()


def _replace(lines, k, new):
    out = list(lines)
    out[k] = new
    return "\n".join(out) + "\n"


_body0 = len(RINEX_HEADER.splitlines())

MALFORMED_RINEX = [
    "",
    "garbage\n",
    _replace(_rinex_lines(), 0, _hdr("     2.11           OBSERVATION DATA    M",
                                     "RINEX VERSION / TYPE")),
    _replace(_rinex_lines(), 0, _hdr("     x.yy", "RINEX VERSION / TYPE")),
    "\n".join(_rinex_lines()[:_body0 - 1]) + "\n",
    _replace(_rinex_lines(), 1, _hdr("G    ? C1C", "SYS / # / OBS TYPES")),
    _replace(_rinex_lines(), _body0, "# 2020 08 26 00 00  0.0000000  0  3"),
    _replace(_rinex_lines(), _body0, "> 2020 08 XX 00 00  0.0000000  0  3"),
    _replace(_rinex_lines(), _body0, "> 2020 13 40 00 00  0.0000000  0  3"),
    _replace(_rinex_lines(), _body0, "> 2020 08 26 00 00  0.0000000  0 -3"),
    _replace(_rinex_lines(), _body0, "> 2020 08 26 00 00  0.0000000  0  9"),
    _replace(_rinex_lines(), _body0 + 1, "G99" + _obs(1.0) * 4),
    _replace(_rinex_lines(), _body0 + 1, "G05" + _obs(1.0) + "   1.2.3.4.5.6  " + _obs(1.0) * 2),
    RINEX_HEADER.replace(_hdr("E    4 C1X L1X D1X S1X", "SYS / # / OBS TYPES") + "\n", "")
    + "\n" + RINEX_BODY + "\n",
    _replace(_rinex_lines(), 0, _hdr("     5.00           OBSERVATION DATA    M",
                                     "RINEX VERSION / TYPE")),
]

MALFORMED_SP3 = [
    "",
    "not sp3\n",
    SP3_TEXT.replace("#dP", "#aP", 1),
    SP3_TEXT.replace("*  2020  8 26  0 15", "*  2020  8 26  0 00", 1),
    SP3_TEXT.replace("*  2020  8 26  0 15", "*  2020 xx 26  0 15", 1),
    SP3_TEXT.replace("PG05  13250.123456", "PG05  13250.12x456", 1),
    SP3_TEXT.replace("PG07 -15000.000000", "PX07 -15000.000000", 1),
    SP3_TEXT.replace("## 2120 259200.00000000   900.00000000",
                     "## 2120 259200.00000000   9x0.00000000", 1),
    "#dP2020\nPG05  13250.123456 -21000.654321   8123.000001     12.345678\n",
    SP3_TEXT.replace("     12.345678", "     12.34z678", 1),
    SP3_TEXT.replace("999999.999999\n*  2020  8 26  0 30", "999999.9999990*  2020  8 26  0 30", 1),
]

MALFORMED_CSV = [
    (parse_platform_csv, ""),
    (parse_platform_csv, "week,tow,x_m\n2120,1,2\n"),
    (parse_platform_csv, PLATFORM_TEXT + "2120,259203.0,1,2\n"),
    (parse_platform_csv, PLATFORM_TEXT + "2120,259203.0,1,2,3,4,5,abc\n"),
    (parse_platform_csv, PLATFORM_TEXT + "-1,259203.0,1,2,3,4,5,6\n"),
    (parse_platform_csv, PLATFORM_TEXT + "2120.5,259203.0,1,2,3,4,5,6\n"),
    (parse_platform_csv, PLATFORM_TEXT + "2120,259203.0,1,2,3,4,5,\x006\n"),
    (parse_obs_csv, ""),
    (parse_obs_csv, "week,tow,sat\n"),
    (parse_obs_csv, "week,tow,sat,phase_cyc,doppler_hz,snr_dbhz,pseudorange_m,lol\n"
                    "2120,1.0,G99,1,2,3,,0\n"),
    (parse_obs_csv, "week,tow,sat,phase_cyc,doppler_hz,snr_dbhz,pseudorange_m,lol\n"
                    "2120,one,G05,1,2,3,,0\n"),
]


@pytest.mark.parametrize("text", MALFORMED_RINEX)
def test_malformed_rinex_raises_parse_error(text):
    with pytest.raises(ParseError) as err:
        parse_rinex_obs(io.StringIO(text))
    assert err.value.line is not None and err.value.line >= 1


@pytest.mark.parametrize("text", MALFORMED_SP3)
def test_malformed_sp3_raises_parse_error(text):
    with pytest.raises(ParseError) as err:
        parse_sp3(io.StringIO(text))
    assert err.value.line is not None


@pytest.mark.parametrize("parser, text", MALFORMED_CSV)
def test_malformed_csv_raises_parse_error(parser, text):
    with pytest.raises(ParseError) as err:
        parser(io.StringIO(text))
    assert err.value.line is not None


def test_malformed_corpus_size():
    assert len(MALFORMED_RINEX) + len(MALFORMED_SP3) + len(MALFORMED_CSV) >= 20


def test_parse_error_message_has_location():
    with pytest.raises(ParseError, match=r"line 1, column 2"):
        parse_sp3(io.StringIO(SP3_TEXT.replace("#dP", "#aP", 1)))


# --- fuzzing: any input either parses or raises ParseError ---------------------------------

def _mutate(text: str, data) -> str:
    chars = list(text)
    for _ in range(data.draw(st.integers(1, 6))):
        if not chars:
            break
        k = data.draw(st.integers(0, len(chars) - 1))
        op = data.draw(st.sampled_from(["replace", "delete", "insert"]))
        c = data.draw(st.characters(min_codepoint=0, max_codepoint=127))
        if op == "replace":
            chars[k] = c
        elif op == "delete":
            del chars[k]
        else:
            chars.insert(k, c)
    return "".join(chars)


_FUZZ_TARGETS = [
    (parse_rinex_obs, RINEX_TEXT),
    (parse_sp3, SP3_TEXT),
    (parse_platform_csv, PLATFORM_TEXT),
    (parse_obs_csv, "week,tow,sat,phase_cyc,doppler_hz,snr_dbhz,pseudorange_m,lol\n"
                    "2120,1.0,G05,1.5,2.5,40.0,,0\n2120,2.0,E11,1.5,2.5,40.0,2e7,1\n"),
]


@pytest.mark.parametrize("parser, seed_text", _FUZZ_TARGETS,
                         ids=["rinex", "sp3", "platform", "obs_csv"])
@given(data=st.data())
def test_mutated_inputs_parse_or_raise_parse_error(parser, seed_text, data):
    text = _mutate(seed_text, data)
    try:
        parser(io.StringIO(text))
    except ParseError:
        pass


@given(st.text(max_size=400))
def test_random_text_never_crashes(text):
    for parser in (parse_rinex_obs, parse_sp3, parse_platform_csv, parse_obs_csv):
        try:
            parser(io.StringIO(text))
        except ParseError:
            pass


def test_bytes_input_accepted():
    parsed = parse_rinex_obs(RINEX_TEXT.encode("ascii"))
    assert len(parsed) == 4
    assert math.isfinite(parsed[0].t)
