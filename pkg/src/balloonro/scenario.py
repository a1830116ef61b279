"""Synthetic balloon occultation geometries and observable writers.

Used by the simulator command line and by the verification suite: builds
circular GNSS orbits that set (or stay high) as seen from a hovering
balloon, and turns a simulated series into receiver observables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .core import (LAMBDA_L1, GeodeticPos, ecef_from_geodetic, elevation_azimuth, enu_basis,
                   geodetic_from_ecef)
from .geometry import KeplerElements, KeplerTrack, sat_state
from .ingest import Constellation, ObsEpoch, PlatformState, SatId, SatTrack
from .raytracer import SimSeries

GPS_RADIUS = 26_559_700.0


def circular_orbit_through(rx_pos, azimuth: float, gamma0: float, epoch: float,
                           radius: float = GPS_RADIUS, sat: Optional[SatId] = None) -> KeplerTrack:
    """Circular orbit whose plane contains the receiver's geocentric direction.

    At ``epoch`` the satellite sits ``gamma0`` rad (geocentric angle) away
    from the receiver zenith towards ``azimuth`` and moves away from it, so
    it sets in that azimuth.
    """
    rx = np.asarray(rx_pos, float)
    b = rx / np.linalg.norm(rx)
    g = geodetic_from_ecef(rx)
    east, north, up = enu_basis(g.lat, g.lon)
    h = math.sin(azimuth) * east + math.cos(azimuth) * north
    h = h - (h @ b) * b
    h /= np.linalg.norm(h)
    k = np.cross(b, h)
    inc = math.acos(max(-1.0, min(1.0, k[2])))
    raan = math.atan2(k[0], -k[1])
    node = np.array([math.cos(raan), math.sin(raan), 0.0])
    p = math.cos(gamma0) * b + math.sin(gamma0) * h
    u = math.atan2(float(np.cross(node, p) @ k), float(node @ p))
    el = KeplerElements(a=radius, e=0.0, i=inc, raan=raan, argp=0.0, M0=u, epoch=epoch)
    return KeplerTrack(el, sat)


def elevation_at(rx_pos, track, t: float) -> float:
    return elevation_azimuth(rx_pos, sat_state(track, t).pos)[0]


def time_of_elevation(rx_pos, track, target: float, t_lo: float, t_hi: float) -> float:
    return brentq(lambda t: elevation_at(rx_pos, track, t) - target, t_lo, t_hi, xtol=1e-6)


@dataclass
class Scenario:
    rx_pos: np.ndarray
    occ: KeplerTrack
    ref: KeplerTrack
    t_start: float
    t_end: float
    meta: dict = field(default_factory=dict)
    extras: list = field(default_factory=list)


def balloon_scenario(lat_deg: float = 33.0, lon_deg: float = -111.0, height: float = 18_000.0,
                     azimuth_deg: float = 270.0, start_elev_deg: float = 2.0,
                     end_elev_deg: float = -5.0, epoch: float = 2120 * 604800.0 + 345600.0,
                     ref_azimuth_deg: float = 20.0, ref_gamma_deg: float = -12.0,
                     extra_azimuths_deg: Sequence[float] = ()) -> Scenario:
    """Hovering balloon watching one GPS satellite set and one stay high.

    ``extra_azimuths_deg`` adds further satellites that set at the same
    time towards other azimuths (PRNs 1, 2, ...).
    """
    rx = ecef_from_geodetic(GeodeticPos(math.radians(lat_deg), math.radians(lon_deg), height))
    occ = circular_orbit_through(rx, math.radians(azimuth_deg), math.radians(60.0), epoch,
                                 sat=SatId(Constellation.GPS, 32))
    ref = circular_orbit_through(rx, math.radians(ref_azimuth_deg), math.radians(ref_gamma_deg),
                                 epoch, sat=SatId(Constellation.GPS, 10))
    # bracket the setting: elevation falls monotonically over the first hour
    ts = epoch + np.arange(0.0, 3600.0, 30.0)
    el = np.array([elevation_at(rx, occ, t) for t in ts])

    def crossing(level):
        k = int(np.flatnonzero((el[:-1] >= level) & (el[1:] < level))[0])
        return time_of_elevation(rx, occ, level, ts[k], ts[k + 1])

    t0 = math.floor(crossing(math.radians(start_elev_deg)))
    t1 = math.ceil(crossing(math.radians(end_elev_deg)))
    extras = [circular_orbit_through(rx, math.radians(az), math.radians(60.0), epoch,
                                     sat=SatId(Constellation.GPS, k + 1))
              for k, az in enumerate(extra_azimuths_deg)]
    return Scenario(rx, occ, ref, float(t0), float(t1),
                    meta=dict(lat_deg=lat_deg, lon_deg=lon_deg, height=height), extras=extras)


def ephemeris_from_track(track, t0: float, t1: float, spacing: float = 900.0,
                         sat: Optional[SatId] = None, pad: int = 6) -> SatTrack:
    """Sample an orbit source on a regular grid covering [t0, t1] plus padding."""
    start = math.floor(t0 / spacing) * spacing - pad * spacing
    stop = math.ceil(t1 / spacing) * spacing + pad * spacing
    ts = np.arange(start, stop + 0.5 * spacing, spacing)
    pos = np.array([sat_state(track, t).pos for t in ts])
    return SatTrack(sat or track.sat, ts, pos)


def observables_from_sim(sim: SimSeries, sat: SatId, clock: Optional[np.ndarray] = None,
                         phase_noise: Optional[np.ndarray] = None, snr: float = 45.0,
                         integer_ambiguity: int = 0) -> list[ObsEpoch]:
    """Carrier phase/Doppler a receiver would log for a simulated series.

    Phase (cycles) is geometric range plus excess path, plus an optional
    receiver clock term (m) and phase noise (m), plus an integer ambiguity.
    Epochs where the ray solve failed are not observed.
    """
    path = sim.range + sim.excess_phase
    if clock is not None:
        path = path + clock
    if phase_noise is not None:
        path = path + phase_noise
    rate = np.gradient(path, sim.t)
    out = []
    for k in np.flatnonzero(sim.ok):
        out.append(ObsEpoch(float(sim.t[k]), sat, float(path[k] / LAMBDA_L1 + integer_ambiguity),
                            float(-rate[k] / LAMBDA_L1), snr))
    return out


def platform_from_sim(sim: SimSeries) -> list[PlatformState]:
    return [PlatformState(float(t), tuple(map(float, p)), tuple(map(float, v)))
            for t, p, v in zip(sim.t, sim.rx_pos, sim.rx_vel)]


def random_walk(n: int, dt: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Random walk with ``sigma`` m/sqrt(s) diffusion, starting at zero."""
    steps = rng.normal(0.0, sigma * math.sqrt(dt), size=n)
    steps[0] = 0.0
    return np.cumsum(steps)
