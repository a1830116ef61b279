"""Parsers for raw observables, precise orbits and platform trajectories.

Every parser is total: malformed input raises :class:`ParseError` carrying a
line (and, where meaningful, column) number; nothing else escapes.  Records
that are individually unusable are dropped and counted instead.
"""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import SECONDS_PER_WEEK, Epoch

log = logging.getLogger(__name__)

GPS_EPOCH = dt.datetime(1980, 1, 6)

SP3_BAD_CLOCK = 999999.999999


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class Constellation(enum.Enum):
    GPS = "G"
    GAL = "E"
    BDS = "C"
    GLO = "R"


@dataclass(frozen=True)
class SatId:
    constellation: Constellation
    prn: int

    def __post_init__(self):
        if not 1 <= self.prn <= 63:
            raise ValueError(f"PRN {self.prn} outside [1, 63]")

    @property
    def excluded_by_default(self) -> bool:
        # GLONASS is parsed but left out of processing unless asked for
        return self.constellation is Constellation.GLO

    def __str__(self):
        return f"{self.constellation.value}{self.prn:02d}"

    def __lt__(self, other):
        return str(self) < str(other)

    @classmethod
    def parse(cls, text: str) -> "SatId":
        text = text.strip()
        if len(text) < 2:
            raise ValueError(f"bad satellite id {text!r}")
        return cls(Constellation(text[0]), int(text[1:]))


@dataclass(frozen=True)
class ObsEpoch:
    t: float  # GPS seconds
    sat: SatId
    carrier_phase: float  # cycles (L1)
    doppler: float  # Hz
    snr: float  # dB-Hz
    pseudorange: Optional[float] = None
    loss_of_lock: bool = False


@dataclass(frozen=True)
class PlatformState:
    t: float
    pos: tuple[float, float, float]
    vel: tuple[float, float, float]
    pos_sigma: Optional[float] = None


@dataclass
class SatTrack:
    """Time-ordered samples of one satellite's ECEF position (and clock)."""

    sat: SatId
    t: np.ndarray
    pos: np.ndarray  # (n, 3) m
    clock: Optional[np.ndarray] = None  # s, NaN where absent

    def __post_init__(self):
        # contiguous copies: BLAS results on strided views differ in the last bit
        self.t = np.ascontiguousarray(self.t, dtype=float)
        self.pos = np.ascontiguousarray(np.asarray(self.pos, dtype=float).reshape(-1, 3))
        if self.clock is not None:
            self.clock = np.ascontiguousarray(self.clock, dtype=float)
        if np.any(np.diff(self.t) <= 0):
            raise ValueError(f"{self.sat}: ephemeris epochs not strictly increasing")

    def __len__(self):
        return self.t.size

    @property
    def span(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    def clock_at(self, t: float) -> Optional[float]:
        """Linearly interpolated clock bias, or None where unavailable."""
        if self.clock is None or not self.t[0] <= t <= self.t[-1]:
            return None
        k = min(max(int(np.searchsorted(self.t, t)) - 1, 0), self.t.size - 2)
        c0, c1 = self.clock[k], self.clock[k + 1]
        if not (np.isfinite(c0) and np.isfinite(c1)):
            return None
        w = (t - self.t[k]) / (self.t[k + 1] - self.t[k])
        return float(c0 + w * (c1 - c0))


@dataclass
class EphemerisTable:
    tracks: dict[SatId, SatTrack] = field(default_factory=dict)
    spacing: float = 900.0

    def __getitem__(self, sat: SatId) -> SatTrack:
        return self.tracks[sat]

    def __contains__(self, sat) -> bool:
        return sat in self.tracks

    def __len__(self):
        return len(self.tracks)

    def sats(self) -> list[SatId]:
        return sorted(self.tracks)


@dataclass
class OccultationDataset:
    event_id: str
    sat: SatId
    obs: list[ObsEpoch]
    platform: list[Optional[PlatformState]]  # paired 1:1 with obs
    ephem: object  # SatTrack or any object geometry.sat_state understands

    def __post_init__(self):
        if len(self.obs) != len(self.platform):
            raise ValueError("obs and platform lists must be paired")

    @property
    def t(self) -> np.ndarray:
        return np.array([o.t for o in self.obs])


@dataclass
class ParseReport:
    """Counters and warnings accumulated by a parser."""

    skipped_epochs: int = 0
    unknown_constellation: int = 0
    blank_fields: int = 0
    rejected_rows: int = 0
    warnings: list[str] = field(default_factory=list)


# --- time helpers -------------------------------------------------------------

def gps_seconds_from_calendar(year, month, day, hour, minute, second: float) -> float:
    whole = int(math.floor(second))
    stamp = dt.datetime(year, month, day, hour, minute, whole)
    days = (stamp - GPS_EPOCH)
    return days.days * 86400.0 + days.seconds + (second - whole)


def calendar_from_gps_seconds(t: float):
    whole = math.floor(t)
    frac = t - whole
    stamp = GPS_EPOCH + dt.timedelta(seconds=int(whole))
    return stamp.year, stamp.month, stamp.day, stamp.hour, stamp.minute, stamp.second + frac


def _lines(stream) -> list[str]:
    if isinstance(stream, (bytes, bytearray)):
        stream = stream.decode("ascii", errors="replace")
    text = stream.read() if hasattr(stream, "read") else stream
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("ascii", errors="replace")
    return str(text).splitlines()


# --- RINEX 3 observation subset ----------------------------------------------

_PHASE_DEFAULT = ("L1C", "L1X")


@dataclass
class ParsedObs:
    epochs: list[ObsEpoch]
    report: ParseReport

    def __iter__(self):
        return iter(self.epochs)

    def __len__(self):
        return len(self.epochs)

    def __getitem__(self, i):
        return self.epochs[i]


def _pick(codes: Sequence[str], prefix: str, attr: Optional[str]) -> Optional[int]:
    if attr is not None and prefix + attr in codes:
        return codes.index(prefix + attr)
    for i, c in enumerate(codes):
        if c.startswith(prefix):
            return i
    return None


def parse_rinex_obs(stream, priority: Sequence[str] = _PHASE_DEFAULT) -> ParsedObs:
    """Parse the RINEX 3.x observation subset we rely on.

    Carrier phase comes from the first code of ``priority`` declared for the
    system; Doppler and SNR prefer the same tracking attribute.  A satellite
    with any of phase/Doppler/SNR blank is omitted for that epoch.
    """
    lines = _lines(stream)
    report = ParseReport()
    types: dict[str, list[str]] = {}
    i = 0
    version = None
    pending_sys = None
    pending_n = 0
    while True:
        if i >= len(lines):
            raise ParseError("missing END OF HEADER", line=i + 1)
        ln = lines[i]
        label = ln[60:].strip()
        if label == "RINEX VERSION / TYPE":
            try:
                version = float(ln[:9])
            except ValueError:
                raise ParseError("unreadable RINEX version", line=i + 1, column=1) from None
            if not 3.0 <= version < 4.0:
                raise ParseError(f"unsupported RINEX version {version}", line=i + 1)
        elif label == "SYS / # / OBS TYPES":
            if ln[0] != " ":
                pending_sys = ln[0]
                try:
                    pending_n = int(ln[3:6])
                except ValueError:
                    raise ParseError("bad observation type count", line=i + 1, column=4) from None
                types[pending_sys] = []
            elif pending_sys is None:
                raise ParseError("continuation line without system", line=i + 1)
            for k in range(13):
                code = ln[7 + 4 * k: 10 + 4 * k].strip()
                if code and len(types[pending_sys]) < pending_n:
                    types[pending_sys].append(code)
        elif label == "END OF HEADER":
            i += 1
            break
        i += 1
    if version is None:
        raise ParseError("missing RINEX VERSION / TYPE", line=1)

    selection = {}
    for sys_, codes in types.items():
        phase = next((codes.index(c) for c in priority if c in codes), None)
        attr = codes[phase][2:] if phase is not None else None
        selection[sys_] = (phase, _pick(codes, "D1", attr), _pick(codes, "S1", attr),
                           _pick(codes, "C1", attr))

    epochs: list[ObsEpoch] = []
    while i < len(lines):
        ln = lines[i]
        lineno = i + 1
        if not ln.strip():
            i += 1
            continue
        if not ln.startswith(">"):
            raise ParseError("expected epoch record '>'", line=lineno, column=1)
        try:
            yr, mo, dy = int(ln[2:6]), int(ln[7:9]), int(ln[10:12])
            hh, mm = int(ln[13:15]), int(ln[16:18])
            ss = float(ln[18:29])
            flag = int(ln[31])
            nsat = int(ln[32:35])
        except (ValueError, IndexError):
            raise ParseError("malformed epoch record", line=lineno, column=2) from None
        if nsat < 0:
            raise ParseError("negative satellite count", line=lineno, column=33)
        i += 1
        if flag > 1:
            report.skipped_epochs += 1
            i += nsat
            continue
        try:
            t = gps_seconds_from_calendar(yr, mo, dy, hh, mm, ss)
        except (ValueError, OverflowError):
            raise ParseError("invalid epoch date", line=lineno, column=2) from None
        for _ in range(nsat):
            if i >= len(lines):
                raise ParseError("truncated epoch block", line=i + 1)
            rec = lines[i]
            i += 1
            sys_ = rec[:1]
            if sys_ not in ("G", "E", "C", "R"):
                report.unknown_constellation += 1
                continue
            try:
                sat = SatId(Constellation(sys_), int(rec[1:3]))
            except ValueError:
                raise ParseError("bad satellite id", line=i, column=1) from None
            if sys_ not in selection:
                raise ParseError(f"system {sys_} has no declared observation types", line=i)
            ip, idop, isnr, ipr = selection[sys_]
            if ip is None or idop is None or isnr is None:
                report.blank_fields += 1
                continue

            def field_(k):
                if k is None:
                    return None, ""
                raw = rec[3 + 16 * k: 3 + 16 * k + 14]
                lli = rec[3 + 16 * k + 14: 3 + 16 * k + 15]
                if not raw.strip():
                    return None, lli
                try:
                    return float(raw), lli
                except ValueError:
                    raise ParseError("unreadable observation value", line=i,
                                     column=4 + 16 * k) from None

            phase, lli = field_(ip)
            dop, _ = field_(idop)
            snr, _ = field_(isnr)
            pr, _ = field_(ipr)
            if phase is None or dop is None or snr is None:
                report.blank_fields += 1
                continue
            lol = lli.strip().isdigit() and int(lli) & 1 == 1
            epochs.append(ObsEpoch(t, sat, phase, dop, snr, pr, bool(lol)))
    if report.unknown_constellation:
        report.warnings.append(f"{report.unknown_constellation} records with unknown constellation")
    return ParsedObs(epochs, report)


def write_rinex_obs(epochs: Iterable[ObsEpoch], stream, comments: Sequence[str] = ()) -> None:
    """Minimal RINEX 3.04 writer (L1C/C1C/D1C/S1C) used for fixtures."""
    epochs = sorted(epochs, key=lambda o: (o.t, str(o.sat)))
    systems = sorted({o.sat.constellation.value for o in epochs}) or ["G"]
    hdr = [f"{3.04:9.2f}{'':11s}{'OBSERVATION DATA':20s}{'M':20s}RINEX VERSION / TYPE"]
    for s in systems:
        codes = "".join(f" {c}" for c in ("C1C", "L1C", "D1C", "S1C"))
        hdr.append(f"{s}  {4:3d}{codes:<54s}SYS / # / OBS TYPES")
    # long comments continue on further COMMENT records
    hdr.extend(f"{c[i:i + 60]:60s}COMMENT" for c in comments for i in range(0, max(len(c), 1), 60))
    hdr.append(f"{'':60s}END OF HEADER")
    out = [h for h in hdr]
    by_t: dict[float, list[ObsEpoch]] = {}
    for o in epochs:
        by_t.setdefault(o.t, []).append(o)
    for t, group in by_t.items():
        y, mo, d, h, mi, s = calendar_from_gps_seconds(t)
        out.append(f"> {y:4d} {mo:02d} {d:02d} {h:02d} {mi:02d}{s:11.7f}  0{len(group):3d}")
        for o in group:
            def f(v, lli=" "):
                return " " * 16 if v is None else f"{v:14.3f}{lli} "
            out.append(f"{o.sat}" + f(o.pseudorange) + f(o.carrier_phase, "1" if o.loss_of_lock else " ")
                       + f(o.doppler) + f(o.snr))
    stream.write("\n".join(out) + "\n")


# --- SP3-c/d ------------------------------------------------------------------

def parse_sp3(stream) -> EphemerisTable:
    """Position ("P") records of an SP3-c or SP3-d file, converted to metres/seconds."""
    lines = _lines(stream)
    if not lines or not lines[0].startswith("#"):
        raise ParseError("missing SP3 version line", line=1, column=1)
    if len(lines[0]) < 2 or lines[0][1] not in "cd":
        raise ParseError(f"unknown SP3 version {lines[0][1:2]!r}", line=1, column=2)
    samples: dict[SatId, list[tuple[float, float, float, float, float]]] = {}
    t = None
    last_t = None
    spacing = None
    for lineno, ln in enumerate(lines, start=1):
        if ln.startswith("##"):
            try:
                spacing = float(ln[24:38])
            except ValueError:
                raise ParseError("bad epoch interval", line=lineno, column=25) from None
        elif ln.startswith("*"):
            try:
                t = gps_seconds_from_calendar(int(ln[3:7]), int(ln[8:10]), int(ln[11:13]),
                                              int(ln[14:16]), int(ln[17:19]), float(ln[20:31]))
            except (ValueError, OverflowError):
                raise ParseError("malformed epoch header", line=lineno, column=4) from None
            if last_t is not None and t <= last_t:
                raise ParseError("epochs not strictly increasing", line=lineno)
            last_t = t
        elif ln.startswith("P"):
            if t is None:
                raise ParseError("position record before first epoch", line=lineno)
            try:
                sat = SatId.parse(ln[1:4])
            except ValueError:
                raise ParseError("bad satellite id", line=lineno, column=2) from None
            try:
                x, y, z = (float(ln[4 + 14 * k: 18 + 14 * k]) for k in range(3))
            except ValueError:
                raise ParseError("unreadable coordinate", line=lineno, column=5) from None
            clk_txt = ln[46:60].strip()
            try:
                clk = float(clk_txt) if clk_txt else SP3_BAD_CLOCK
            except ValueError:
                raise ParseError("unreadable clock", line=lineno, column=47) from None
            if x == 0.0 and y == 0.0 and z == 0.0:
                continue
            clock = math.nan if clk >= SP3_BAD_CLOCK - 1e-6 else clk * 1e-6
            rows = samples.setdefault(sat, [])
            if rows and rows[-1][0] == t:
                raise ParseError(f"second {sat} record in one epoch", line=lineno, column=2)
            rows.append((t, x * 1e3, y * 1e3, z * 1e3, clock))
        elif ln.startswith("EOF"):
            break
    tracks = {}
    for sat, rows in samples.items():
        arr = np.array(rows)
        clock = arr[:, 4] if np.any(np.isfinite(arr[:, 4])) else None
        tracks[sat] = SatTrack(sat, arr[:, 0], arr[:, 1:4], clock)
    if spacing is None:
        all_t = sorted({r[0] for rows in samples.values() for r in rows})
        spacing = float(np.median(np.diff(all_t))) if len(all_t) > 1 else 0.0
    return EphemerisTable(tracks, spacing)


def write_sp3(table: EphemerisTable, stream, version: str = "d",
              comments: Sequence[str] = ()) -> None:
    times = sorted({float(t) for tr in table.tracks.values() for t in tr.t})
    sats = table.sats()
    y, mo, d, h, mi, s = calendar_from_gps_seconds(times[0]) if times else (1980, 1, 6, 0, 0, 0.0)
    week = int(times[0] // SECONDS_PER_WEEK) if times else 0
    tow = times[0] - week * SECONDS_PER_WEEK if times else 0.0
    out = [f"#{version}P{y:4d} {mo:2d} {d:2d} {h:2d} {mi:2d} {s:11.8f} {len(times):7d} ORBIT IGS14 HLM  SIM",
           f"## {week:4d} {tow:15.8f} {table.spacing:14.8f} {0:5d} {0.0:15.13f}",
           f"+  {len(sats):3d}   " + "".join(str(x) for x in sats[:17])]
    out.append("/* simulated orbit written by balloonro")
    out.extend(f"/* {c}" for c in comments)
    index = {sat: {float(t): k for k, t in enumerate(table.tracks[sat].t)} for sat in sats}
    for t in times:
        y, mo, d, h, mi, s = calendar_from_gps_seconds(t)
        out.append(f"*  {y:4d} {mo:2d} {d:2d} {h:2d} {mi:2d} {s:11.8f}")
        for sat in sats:
            k = index[sat].get(t)
            if k is None:
                continue
            tr = table.tracks[sat]
            x, yy, z = tr.pos[k] / 1e3
            clk = SP3_BAD_CLOCK
            if tr.clock is not None and np.isfinite(tr.clock[k]):
                clk = tr.clock[k] * 1e6
            out.append(f"P{sat}{x:14.6f}{yy:14.6f}{z:14.6f}{clk:14.6f}")
    out.append("EOF")
    stream.write("\n".join(out) + "\n")


# --- platform CSV -------------------------------------------------------------

PLATFORM_COLUMNS = ("week", "tow", "x_m", "y_m", "z_m", "vx_mps", "vy_mps", "vz_mps")


def _csv_body(lines: list[str]):
    kept = [(n, ln) for n, ln in enumerate(lines, start=1)
            if ln.strip() and not ln.lstrip().startswith("#")]
    return kept


def _fields(text: str, lineno: int) -> list[str]:
    try:
        return next(csv.reader([text]))
    except csv.Error as exc:
        raise ParseError(f"unreadable CSV row ({exc})", line=lineno) from None


@dataclass
class ParsedPlatform:
    states: list[PlatformState]
    report: ParseReport

    def __iter__(self):
        return iter(self.states)

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]


def parse_platform_csv(stream) -> ParsedPlatform:
    """``week,tow,x_m,y_m,z_m,vx_mps,vy_mps,vz_mps[,sigma_m]`` with '#' comments."""
    rows = _csv_body(_lines(stream))
    report = ParseReport()
    if not rows:
        raise ParseError("empty platform file", line=1)
    hline, header_text = rows[0]
    header = [h.strip() for h in _fields(header_text, hline)]
    for col in PLATFORM_COLUMNS:
        if col not in header:
            raise ParseError(f"missing column {col}", line=hline)
    idx = [header.index(c) for c in PLATFORM_COLUMNS]
    isig = header.index("sigma_m") if "sigma_m" in header else None
    states: list[PlatformState] = []
    for lineno, text in rows[1:]:
        fields = _fields(text, lineno)
        try:
            vals = [float(fields[k]) for k in idx]
            sig = float(fields[isig]) if isig is not None and fields[isig].strip() else None
        except (ValueError, IndexError):
            raise ParseError("unreadable or missing field", line=lineno) from None
        if not all(math.isfinite(v) for v in vals) or (sig is not None and not math.isfinite(sig)):
            report.rejected_rows += 1
            continue
        week, tow = vals[0], vals[1]
        if week < 0 or week != int(week):
            raise ParseError(f"invalid GPS week {week}", line=lineno)
        t = week * SECONDS_PER_WEEK + tow
        if states and t <= states[-1].t:
            raise ParseError("rows not in strictly increasing time order", line=lineno)
        states.append(PlatformState(t, tuple(vals[2:5]), tuple(vals[5:8]), sig))
    return ParsedPlatform(states, report)


def write_platform_csv(states: Iterable[PlatformState], stream, comments: Sequence[str] = ()) -> None:
    for c in comments:
        stream.write(f"# {c}\n")
    stream.write(",".join(PLATFORM_COLUMNS) + ",sigma_m\n")
    for s in states:
        week = int(s.t // SECONDS_PER_WEEK)
        tow = s.t - week * SECONDS_PER_WEEK
        sig = "" if s.pos_sigma is None else repr(float(s.pos_sigma))
        vals = [repr(float(v)) for v in (tow, *s.pos, *s.vel)]
        stream.write(f"{week}," + ",".join(vals) + f",{sig}\n")


# --- canonical observation CSV ----------------------------------------------

OBS_COLUMNS = ("week", "tow", "sat", "phase_cyc", "doppler_hz", "snr_dbhz", "pseudorange_m", "lol")


def write_obs_csv(epochs: Iterable[ObsEpoch], stream, comments: Sequence[str] = ()) -> None:
    """Full-precision text form of :class:`ObsEpoch` records."""
    for c in comments:
        stream.write(f"# {c}\n")
    stream.write(",".join(OBS_COLUMNS) + "\n")
    for o in epochs:
        week = int(o.t // SECONDS_PER_WEEK)
        tow = o.t - week * SECONDS_PER_WEEK
        pr = "" if o.pseudorange is None else repr(float(o.pseudorange))
        stream.write(f"{week},{float(tow)!r},{o.sat},{float(o.carrier_phase)!r},"
                     f"{float(o.doppler)!r},{float(o.snr)!r},{pr},{int(o.loss_of_lock)}\n")


def parse_obs_csv(stream) -> ParsedObs:
    rows = _csv_body(_lines(stream))
    report = ParseReport()
    if not rows:
        raise ParseError("empty observation file", line=1)
    hline, header_text = rows[0]
    header = [h.strip() for h in _fields(header_text, hline)]
    for col in OBS_COLUMNS:
        if col not in header:
            raise ParseError(f"missing column {col}", line=hline)
    idx = {c: header.index(c) for c in OBS_COLUMNS}
    out = []
    for lineno, text in rows[1:]:
        f = _fields(text, lineno)
        try:
            sys_ = f[idx["sat"]].strip()[:1]
            if sys_ not in ("G", "E", "C", "R"):
                report.unknown_constellation += 1
                continue
            sat = SatId.parse(f[idx["sat"]])
            week = int(f[idx["week"]])
            tow = float(f[idx["tow"]])
            if any(not f[idx[c]].strip() for c in ("phase_cyc", "doppler_hz", "snr_dbhz")):
                report.blank_fields += 1
                continue
            phase = float(f[idx["phase_cyc"]])
            dop = float(f[idx["doppler_hz"]])
            snr = float(f[idx["snr_dbhz"]])
            pr_txt = f[idx["pseudorange_m"]].strip()
            pr = float(pr_txt) if pr_txt else None
            lol = bool(int(f[idx["lol"]] or 0))
        except (ValueError, IndexError):
            raise ParseError("unreadable observation row", line=lineno) from None
        if week < 0 or not all(math.isfinite(v) for v in (tow, phase, dop, snr)):
            report.rejected_rows += 1
            continue
        out.append(ObsEpoch(week * SECONDS_PER_WEEK + tow, sat, phase, dop, snr, pr, lol))
    return ParsedObs(out, report)


# --- alignment ----------------------------------------------------------------

@dataclass
class AlignReport:
    unpaired: int = 0
    no_ephemeris: int = 0
    warnings: list[str] = field(default_factory=list)


def align_epochs(obs: Iterable[ObsEpoch], platform: Sequence[PlatformState],
                 ephem: EphemerisTable, tolerance: float = 0.05,
                 gap_split_s: float = 30.0, include_glonass: bool = False,
                 report: AlignReport | None = None) -> list[OccultationDataset]:
    """Pair observations with the nearest platform state and split arcs at gaps.

    No interpolation or extrapolation happens here; an observation whose
    nearest platform sample is further than ``tolerance`` is dropped and
    counted in ``report.unpaired``.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    report = report if report is not None else AlignReport()
    platform = sorted(platform, key=lambda s: s.t)
    pt = [s.t for s in platform]
    by_sat: dict[SatId, list[ObsEpoch]] = {}
    for o in obs:
        if o.sat.excluded_by_default and not include_glonass:
            continue
        by_sat.setdefault(o.sat, []).append(o)
    if not pt or not by_sat:
        return []

    obs_dt = []
    for lst in by_sat.values():
        ts = sorted({o.t for o in lst})
        obs_dt.extend(np.diff(ts).tolist())
    if obs_dt and len(pt) > 1:
        if float(np.median(np.diff(pt))) > 10 * float(np.median(obs_dt)):
            msg = "platform sampling more than 10x sparser than observations"
            log.warning(msg)
            report.warnings.append(msg)

    out: list[OccultationDataset] = []
    for sat in sorted(by_sat):
        if sat not in ephem:
            report.no_ephemeris += len(by_sat[sat])
            continue
        track = ephem[sat]
        t0, t1 = track.span
        arc_obs: list[ObsEpoch] = []
        arc_plat: list[PlatformState] = []
        arcs = []
        for o in sorted(by_sat[sat], key=lambda o: o.t):
            if not t0 <= o.t <= t1:
                report.no_ephemeris += 1
                continue
            k = bisect.bisect_left(pt, o.t)
            best = None
            for j in (k - 1, k):
                if 0 <= j < len(pt) and abs(pt[j] - o.t) <= tolerance + 1e-12:
                    if best is None or abs(pt[j] - o.t) < abs(pt[best] - o.t):
                        best = j
            if best is None:
                report.unpaired += 1
                continue
            if arc_obs and o.t - arc_obs[-1].t > gap_split_s:
                arcs.append((arc_obs, arc_plat))
                arc_obs, arc_plat = [], []
            arc_obs.append(o)
            arc_plat.append(platform[best])
        if arc_obs:
            arcs.append((arc_obs, arc_plat))
        for a_obs, a_plat in arcs:
            e = Epoch.from_seconds(a_obs[0].t)
            eid = f"{sat}-{e.week}-{int(e.tow)}"
            out.append(OccultationDataset(eid, sat, a_obs, list(a_plat), track))
    return out
