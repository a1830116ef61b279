"""Satellite states, light-time ranging and occultation event detection."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .core import (C_LIGHT, GM_EARTH, OMEGA_EARTH, Epoch, GeometryError, TimeLike,
                   as_seconds, elevation_azimuth, geodetic_from_ecef, rotate_z)
from .ingest import PlatformState, SatId, SatTrack

LAGRANGE_ORDER = 10


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SatState:
    t: float
    pos: np.ndarray
    vel: np.ndarray


@dataclass(frozen=True)
class KeplerElements:
    a: float
    e: float
    i: float
    raan: float
    argp: float
    M0: float
    epoch: float  # GPS seconds
    mu: float = GM_EARTH

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("semi-major axis must be positive")
        if not 0.0 <= self.e < 1.0:
            raise ValueError("eccentricity must be in [0, 1)")

    @property
    def mean_motion(self) -> float:
        return math.sqrt(self.mu / self.a ** 3)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.mean_motion


def solve_kepler(M: float, e: float, tol: float = 1e-12, max_iter: int = 50) -> float:
    """Eccentric anomaly from mean anomaly by Newton iteration."""
    M = math.remainder(M, 2.0 * math.pi)
    E = M if e < 0.8 else math.pi * math.copysign(1.0, M)
    for _ in range(max_iter):
        dE = (E - e * math.sin(E) - M) / (1.0 - e * math.cos(E))
        E -= dE
        if abs(dE) < tol:
            return E
    raise ConvergenceError(f"Kepler's equation did not converge (M={M}, e={e})")


def _perifocal_to_inertial(el: KeplerElements) -> np.ndarray:
    cO, sO = math.cos(el.raan), math.sin(el.raan)
    ci, si = math.cos(el.i), math.sin(el.i)
    cw, sw = math.cos(el.argp), math.sin(el.argp)
    return np.array([
        [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
        [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
        [sw * si, cw * si, ci],
    ])


def kepler_state(el: KeplerElements, t: TimeLike, dt: float = 0.0) -> SatState:
    """Two-body state in the inertial frame aligned with ECEF at ``el.epoch``."""
    ts = as_seconds(t)
    tau = (ts - el.epoch) + dt
    M = el.M0 + el.mean_motion * tau
    E = solve_kepler(M, el.e)
    cE, sE = math.cos(E), math.sin(E)
    b_over_a = math.sqrt(1.0 - el.e ** 2)
    r = el.a * (1.0 - el.e * cE)
    p = np.array([el.a * (cE - el.e), el.a * b_over_a * sE, 0.0])
    Edot = el.mean_motion * el.a / r
    v = np.array([-el.a * sE * Edot, el.a * b_over_a * cE * Edot, 0.0])
    R = _perifocal_to_inertial(el)
    return SatState(ts + dt, R @ p, R @ v)


@dataclass(frozen=True)
class KeplerTrack:
    """A Keplerian satellite expressed in the rotating Earth-fixed frame."""

    elements: KeplerElements
    sat: Optional[SatId] = None

    def state(self, t: float, dt: float = 0.0) -> SatState:
        s = kepler_state(self.elements, t, dt)
        theta = OMEGA_EARTH * ((t - self.elements.epoch) + dt)
        pos = rotate_z(s.pos, theta)
        vel = rotate_z(s.vel, theta) - np.cross([0.0, 0.0, OMEGA_EARTH], pos)
        return SatState(s.t, pos, vel)

    def clock_at(self, t: float) -> Optional[float]:
        return None

    @property
    def span(self) -> tuple[float, float]:
        return -math.inf, math.inf


def _lagrange_weights(s: np.ndarray, x: float) -> tuple[np.ndarray, np.ndarray]:
    """Lagrange basis values and derivatives at ``x`` for nodes ``s``."""
    m = s.size
    eye = np.eye(m, dtype=bool)
    denom = s[:, None] - s[None, :]
    denom[eye] = 1.0
    den = denom.prod(axis=1)
    # num[j, k] = x - s_k for k != j, 1 on the diagonal
    num = np.where(eye, 1.0, (x - s)[None, :])
    w = num.prod(axis=1) / den
    # drop one more factor i from each product to differentiate
    dropped = np.broadcast_to(num[:, None, :], (m, m, m)).copy()
    idx = np.arange(m)
    dropped[:, idx, idx] = 1.0
    terms = dropped.prod(axis=2)
    terms[eye] = 0.0
    dw = terms.sum(axis=1) / den
    return w, dw


def interpolate_sat_state(table: SatTrack, t: TimeLike, dt: float = 0.0,
                          order: int = LAGRANGE_ORDER) -> SatState:
    """Lagrange interpolation of degree ``order`` centred on ``t + dt``.

    Velocity is the analytic derivative of the same polynomial.
    """
    ts = as_seconds(t)
    times = table.t
    npts = order + 1
    if times.size < npts:
        raise ValueError(f"need {npts} ephemeris samples, have {times.size}")
    if not (times[0] <= ts + dt <= times[-1]):
        raise ValueError(f"t={ts + dt} outside ephemeris span [{times[0]}, {times[-1]}]")
    k = int(np.searchsorted(times, ts + dt))
    start = min(max(k - npts // 2, 0), times.size - npts)
    nodes = times[start:start + npts]
    centre = nodes[npts // 2]
    h = float(np.median(np.diff(nodes)))
    s = (nodes - centre) / h
    x = ((ts - centre) + dt) / h
    w, dw = _lagrange_weights(s, x)
    seg = table.pos[start:start + npts]
    return SatState(ts + dt, w @ seg, (dw @ seg) / h)


def sat_state(source, t: float, dt: float = 0.0) -> SatState:
    if isinstance(source, SatTrack):
        return interpolate_sat_state(source, t, dt)
    if isinstance(source, KeplerElements):
        return kepler_state(source, t, dt)
    return source.state(t, dt)


def _clock(source, t: float) -> Optional[float]:
    fn = getattr(source, "clock_at", None)
    return fn(t) if fn is not None else None


@dataclass(frozen=True)
class LightTimeResult:
    range: float
    t_emit: float
    tau: float
    pos: np.ndarray  # transmitter at emission, receive-time Earth-fixed frame
    vel: np.ndarray  # d(pos)/d(t_receive)
    clock: Optional[float] = None


def light_time_range(rx_pos, ephem, t_rx: TimeLike, rx_vel=None, sagnac: bool = True,
                     tol: float = 1e-4, max_iter: int = 5) -> LightTimeResult:
    """Geometric range from the emission-time transmitter to the receiver.

    The transmitter is rotated into the Earth-fixed frame of the reception
    instant (Sagnac).  The returned velocity is the derivative of that
    rotated emission position with respect to reception time, which is what
    a range-rate built from successive reception epochs sees.
    """
    t = as_seconds(t_rx)
    rx = np.asarray(rx_pos, dtype=float)
    vr = np.zeros(3) if rx_vel is None else np.asarray(rx_vel, dtype=float)
    tau = 0.0
    rng = None
    for _ in range(max_iter + 1):
        st = sat_state(ephem, t, -tau)
        ang = OMEGA_EARTH * tau if sagnac else 0.0
        pos = rotate_z(st.pos, ang)
        new = float(np.linalg.norm(pos - rx))
        if new == 0.0:
            raise GeometryError("transmitter coincides with receiver")
        if rng is not None and abs(new - rng) < tol:
            rng = new
            break
        rng = new
        tau = rng / C_LIGHT
    else:
        raise ConvergenceError("light-time iteration did not converge")
    w = rotate_z(st.vel, ang)
    q = -OMEGA_EARTH * np.cross([0.0, 0.0, 1.0], pos) if sagnac else np.zeros(3)
    u = (pos - rx) / rng
    tau_dot = float(u @ (w - vr)) / (C_LIGHT - float(u @ (q - w)))
    vel = w + tau_dot * (q - w)
    return LightTimeResult(rng, t - tau, tau, pos, vel, _clock(ephem, t - tau))


# --- occultation events -------------------------------------------------------

class EventKind(enum.Enum):
    RISING = "rising"
    SETTING = "setting"


@dataclass(frozen=True)
class OccultationEvent:
    sat: Optional[SatId]
    t_start: float
    t_end: float
    kind: EventKind
    min_elevation: float
    tangent_lat: float
    tangent_lon: float

    @property
    def start_epoch(self) -> Epoch:
        return Epoch.from_seconds(self.t_start)

    @property
    def end_epoch(self) -> Epoch:
        return Epoch.from_seconds(self.t_end)


def straight_tangent_point(rx, tx) -> np.ndarray:
    """Point of the rx-tx segment closest to the geocentre."""
    rx = np.asarray(rx, float)
    d = np.asarray(tx, float) - rx
    s = -float(rx @ d) / float(d @ d)
    return rx + min(max(s, 0.0), 1.0) * d


def _platform_interp(platform: Sequence[PlatformState]) -> Callable[[float], np.ndarray]:
    t = np.array([p.t for p in platform])
    pos = np.array([p.pos for p in platform], dtype=float)

    def at(tt: float) -> np.ndarray:
        if t.size == 1:
            return pos[0]
        return np.array([np.interp(tt, t, pos[:, k]) for k in range(3)])

    return at


def _setting_runs(el: np.ndarray, high: float, low: float) -> list[tuple[int, int]]:
    """Index ranges of setting events in an elevation sequence."""
    runs = []
    k = 1
    n = el.size
    while k < n:
        if el[k - 1] >= high > el[k]:
            start = k
            j = k
            while j + 1 < n and el[j + 1] < el[j] and el[j] >= low:
                j += 1
            runs.append((start, j))
            k = j + 1
        else:
            k += 1
    return runs


def detect_events(platform: Sequence[PlatformState], sources: Mapping, scan_dt: float = 10.0,
                  elev_high: float = math.radians(5.0), elev_low: float = math.radians(-6.0),
                  t_start: float | None = None, t_end: float | None = None) -> list[OccultationEvent]:
    """Scan elevation of each satellite from the platform and extract events.

    A setting event opens on the first sample below ``elev_high`` after a
    downward crossing and runs while the elevation keeps decreasing, closing
    on the first sample below ``elev_low``.  Rising events are the same rule
    applied to the time-reversed scan, so the two are exact mirror images.
    """
    if not platform:
        return []
    t0 = platform[0].t if t_start is None else t_start
    t1 = platform[-1].t if t_end is None else t_end
    if not t1 > t0:
        return []
    ts = t0 + scan_dt * np.arange(int(math.floor((t1 - t0) / scan_dt + 1e-9)) + 1)
    rx_at = _platform_interp(platform)
    rx = np.array([rx_at(t) for t in ts])
    events: list[OccultationEvent] = []
    for sat in sorted(sources, key=str):
        src = sources[sat]
        tx = np.array([sat_state(src, t).pos for t in ts])
        el = np.array([elevation_azimuth(r, x)[0] for r, x in zip(rx, tx)])

        def make(idx: np.ndarray, kind: EventKind):
            k_min = idx[int(np.argmin(el[idx]))]
            tp = geodetic_from_ecef(straight_tangent_point(rx[k_min], tx[k_min]))
            events.append(OccultationEvent(sat, float(ts[idx[0]]), float(ts[idx[-1]]), kind,
                                           float(el[k_min]), tp.lat, tp.lon))

        # each run is widened by the last sample above elev_high
        for a, b in _setting_runs(el, elev_high, elev_low):
            make(np.arange(a - 1, b + 1), EventKind.SETTING)
        rev = el[::-1]
        n = el.size
        for a, b in _setting_runs(rev, elev_high, elev_low):
            idx = np.arange(n - 1 - b, n - a + 1)
            make(idx, EventKind.RISING)
    events.sort(key=lambda e: (e.t_start, str(e.sat), e.kind.value))
    return events
