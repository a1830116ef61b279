"""Shared fixtures: one simulated balloon occultation reused across modules,
plus the acceptance-criteria summary printed at the end of the run."""

from __future__ import annotations

import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from balloonro.atmosphere import Exponential
from balloonro.ingest import EphemerisTable, align_epochs
from balloonro.preprocess import calibrate_clock, compute_excess_phase
from balloonro.raytracer import hover, simulate_occultation
from balloonro.scenario import (balloon_scenario, ephemeris_from_track, observables_from_sim,
                                platform_from_sim, random_walk)

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("stress", deadline=None, max_examples=600,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}
N_CRITERIA = 10


@pytest.fixture
def criterion():
    """Record one acceptance criterion outcome and echo it immediately."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE[number] = (title, bool(ok), detail)
        print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        if k in _ACCEPTANCE:
            title, ok, detail = _ACCEPTANCE[k]
            terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}: "
                                        f"{title} ({detail})")
        else:
            terminalreporter.write_line(f"criterion {k:2d} NOT RUN")


@pytest.fixture(scope="session")
def scenario():
    return balloon_scenario()


@pytest.fixture(scope="session")
def surface_radius(scenario):
    return float(np.linalg.norm(scenario.rx_pos)) - scenario.meta["height"]


@pytest.fixture(scope="session")
def exp_model(surface_radius):
    return Exponential(300.0, 7000.0, surface_radius)


@pytest.fixture(scope="session")
def sims(scenario, exp_model):
    """Noise-free simulations of the setting and the reference satellite at 1 Hz."""
    rx = hover(scenario.rx_pos)
    return {tr.sat: simulate_occultation(exp_model, tr, rx, t_start=scenario.t_start,
                                         t_end=scenario.t_end, dt=1.0)
            for tr in (scenario.occ, scenario.ref)}


@pytest.fixture(scope="session")
def ephemeris(scenario):
    return EphemerisTable({tr.sat: ephemeris_from_track(tr, scenario.t_start, scenario.t_end)
                           for tr in (scenario.occ, scenario.ref)})


def build_datasets(scenario, sims, ephemeris, clock=None, noise_sigma=0.0, seed=0):
    """Receiver observables for both arcs, aligned into occultation datasets."""
    rng = np.random.default_rng(seed)
    occ = sims[scenario.occ.sat]
    obs = []
    for sat in (scenario.occ.sat, scenario.ref.sat):
        noise = noise_sigma * rng.standard_normal(len(occ)) if noise_sigma > 0 else None
        obs += observables_from_sim(sims[sat], sat, clock=clock, phase_noise=noise)
    ds = align_epochs(obs, platform_from_sim(occ), ephemeris)
    by_sat = {d.sat: d for d in ds}
    return by_sat[scenario.occ.sat], by_sat[scenario.ref.sat]


@pytest.fixture(scope="session")
def clock_walk(sims, scenario):
    n = len(sims[scenario.occ.sat])
    return random_walk(n, 1.0, 1.0, np.random.default_rng(7))


@pytest.fixture(scope="session")
def calibrated(scenario, sims, ephemeris, clock_walk):
    """Raw occulting and reference series plus the calibrated arc (clock walk injected)."""
    d_occ, d_ref = build_datasets(scenario, sims, ephemeris, clock=clock_walk)
    occ, ref = compute_excess_phase(d_occ), compute_excess_phase(d_ref)
    return occ, ref, calibrate_clock(occ, ref)


def anchored(values: np.ndarray, k: int) -> np.ndarray:
    return values - values[k]


def max_elevation_index(sim) -> int:
    return int(np.nanargmax(np.where(sim.ok, sim.elevation, -math.inf)))
