"""Command-line front end: simulate -> preprocess -> retrieve -> invert, plus stats.

Every stage reads files written by the previous one, writes a
``summary.json`` next to its outputs and embeds the config hash in each
file it writes.  Exit codes: 0 success (possibly with warnings), 1 usage
or configuration error, 2 every dataset failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .atmosphere import (Exponential, layered_from_met, layered_from_refractivity,
                         read_met_csv, read_refractivity_csv)
from .config import ConfigError, RunConfig, load_config, parse_bands
from .core import GeodeticPos, ecef_from_geodetic, geodetic_from_ecef
from .ingest import (EphemerisTable, ParseError, align_epochs, parse_obs_csv,
                     parse_platform_csv, parse_rinex_obs, parse_sp3, write_obs_csv,
                     write_platform_csv, write_rinex_obs, write_sp3)
from .preprocess import (GprConfig, SlipConfig, calibrate_clock, choose_reference,
                         compute_excess_phase, correct_cycle_slips, export_profile,
                         gpr_smooth, read_profile, series_from_sim)
from .raytracer import hover, simulate_occultation, trajectory_from_states
from .retrieval import (RefractivityProfile, abel_invert_partial, compare_refractivity,
                        doppler_to_bending, read_profile_file, write_profile_csv,
                        write_profile_file)
from .scenario import (balloon_scenario, ephemeris_from_track, observables_from_sim,
                       platform_from_sim, random_walk)
from .stats import (QualityLedger, grid_coverage, ledger_from_stage_totals, sounding_density,
                    tally)

log = logging.getLogger("balloonro")

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- shared helpers ----------------------------------------------------------------

def _receiver_geometry(cfg: RunConfig) -> tuple[np.ndarray, float]:
    g = GeodeticPos(math.radians(cfg["scenario.lat_deg"]), math.radians(cfg["scenario.lon_deg"]),
                    cfg["scenario.height_m"])
    rx = ecef_from_geodetic(g)
    return rx, float(np.linalg.norm(rx)) - cfg["scenario.height_m"]


def build_model(cfg: RunConfig, r0: float, base_dir: str = "."):
    kind = cfg["model.kind"]
    if kind == "vacuum":
        return Exponential(0.0, cfg["model.H"], r0)
    if kind == "exponential":
        return Exponential(cfg["model.N0"], cfg["model.H"], r0)
    path = cfg["model.profile"]
    if not path:
        raise UsageError("model.kind = layered needs model.profile")
    path = os.path.join(base_dir, path)
    with open(path, encoding="utf-8") as f:
        text = f.read()
    first = next((ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")), "")
    if "n_units" in first:
        z, N = read_refractivity_csv(text)
        return layered_from_refractivity(z, N, r0)
    return layered_from_met(read_met_csv(text), r0)


def model_id(cfg: RunConfig) -> str:
    kind = cfg["model.kind"]
    if kind == "exponential":
        return f"exponential(N0={cfg['model.N0']!r},H={cfg['model.H']!r})"
    if kind == "layered":
        return f"layered({os.path.basename(cfg['model.profile'])})"
    return "vacuum"


def _topside(cfg: RunConfig, model, r0: float):
    choice = cfg["invert.topside"]
    if choice == "model":
        return model, model_id(cfg)
    if choice == "exponential":
        N0, H = cfg["invert.topside_N0"], cfg["invert.topside_H"]
        return Exponential(N0, H, r0), f"exponential(N0={N0!r},H={H!r})"
    return None, "none"


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _ext(emit_json: bool) -> str:
    return ".json" if emit_json else ".nc"


def _gather(inputs: Sequence[str]) -> list[Path]:
    files: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if q.is_file()))
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"input {item} does not exist")
    return files


def _is_excess_profile(path: Path) -> bool:
    try:
        with open(path, "rb") as f:
            head = f.read(4096)
    except OSError:
        return False
    if head[:3] == b"CDF":
        return b"excess_phase" in head
    return b'"balloonro-excess-phase"' in head


def _profile_kind(path: Path) -> str:
    try:
        with open(path, "rb") as f:
            head = f.read(4096)
    except OSError:
        return ""
    if b"balloonro-bending" in head or (head[:3] == b"CDF" and b"alpha_rad" in head):
        return "bending"
    return ""


# --- simulate ----------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path, seed: Optional[int], emit_json: bool,
                 base_dir: str = ".") -> dict:
    problems = []
    traj_states = None
    if cfg["scenario.trajectory"]:
        tpath = os.path.join(base_dir, cfg["scenario.trajectory"])
        if not os.path.isfile(tpath):
            problems.append(f"trajectory file {tpath} not found")
        else:
            with open(tpath, encoding="utf-8") as f:
                traj_states = list(parse_platform_csv(f))
            if len(traj_states) < 2:
                problems.append("trajectory file needs at least two states")
    if cfg["model.kind"] == "layered" and not os.path.isfile(
            os.path.join(base_dir, cfg["model.profile"] or "\0")):
        problems.append(f"model profile {cfg['model.profile']!r} not found")
    if problems:
        raise ConfigError(problems)

    lat, lon, h = cfg["scenario.lat_deg"], cfg["scenario.lon_deg"], cfg["scenario.height_m"]
    if traj_states:
        g = geodetic_from_ecef(np.asarray(traj_states[0].pos))
        lat, lon, h = math.degrees(g.lat), math.degrees(g.lon), g.h
    epoch = cfg["scenario.epoch_week"] * 604800.0 + cfg["scenario.epoch_tow"]
    sc = balloon_scenario(lat, lon, h, cfg["scenario.azimuth_deg"], cfg["scenario.start_elev_deg"],
                          cfg["scenario.end_elev_deg"], epoch, cfg["scenario.ref_azimuth_deg"],
                          cfg["scenario.ref_gamma_deg"], _floats(cfg["scenario.extra_azimuths_deg"]))
    r0 = float(np.linalg.norm(sc.rx_pos)) - h
    model = build_model(cfg, r0, base_dir)
    if traj_states:
        rx = trajectory_from_states(traj_states)
        t0 = max(sc.t_start, traj_states[0].t)
        t1 = min(sc.t_end, traj_states[-1].t)
    else:
        rx = hover(sc.rx_pos)
        t0, t1 = sc.t_start, sc.t_end
    dt = cfg["scenario.dt"]
    sims = {}
    tracks = [sc.occ, sc.ref, *sc.extras]
    for track in tracks:
        sims[track.sat] = simulate_occultation(model, track, rx, t_start=t0, t_end=t1, dt=dt)
    seed = cfg["noise.seed"] if seed is None else seed
    rng = np.random.default_rng(seed)
    n = len(next(iter(sims.values())))
    clock = random_walk(n, dt, cfg["noise.clock_sigma"], rng) if cfg["noise.clock_sigma"] > 0 else None
    obs = []
    for sat in sorted(sims):
        noise = None
        if cfg["noise.phase_sigma_m"] > 0:
            noise = cfg["noise.phase_sigma_m"] * rng.standard_normal(n)
        obs.extend(observables_from_sim(sims[sat], sat, clock=clock, phase_noise=noise))
    obs.sort(key=lambda o: (o.t, str(o.sat)))

    out.mkdir(parents=True, exist_ok=True)
    tag = [f"config_hash={cfg.config_hash}"]
    files = []
    if cfg["scenario.obs_format"] == "rinex":
        with open(out / "obs.rnx", "w", encoding="ascii") as f:
            write_rinex_obs(obs, f, comments=tag)
        files.append("obs.rnx")
    else:
        with open(out / "obs.csv", "w", encoding="ascii") as f:
            write_obs_csv(obs, f, comments=tag)
        files.append("obs.csv")
    with open(out / "platform.csv", "w", encoding="ascii") as f:
        write_platform_csv(platform_from_sim(sims[sc.occ.sat]), f, comments=tag)
    spacing = cfg["scenario.ephemeris_spacing"]
    eph = EphemerisTable({tr.sat: ephemeris_from_track(tr, t0, t1, spacing) for tr in tracks},
                         spacing)
    with open(out / "ephemeris.sp3", "w", encoding="ascii") as f:
        write_sp3(eph, f, comments=tag)
    files += ["platform.csv", "ephemeris.sp3"]

    occ = sims[sc.occ.sat]
    for sat in sorted(sims):
        name = f"sim_{sat}{_ext(emit_json)}"
        export_profile(series_from_sim(sims[sat], sat), out / name, cfg.config_hash, emit_json)
        files.append(name)
    desc = occ.ok & occ.descending
    order = np.argsort(occ.true_a[desc])
    from .retrieval import BendingAngleProfile
    truth_b = BendingAngleProfile(occ.true_a[desc][order], occ.true_alpha[desc][order],
                                  occ.t[desc][order], np.zeros(int(desc.sum()), dtype=np.int64))
    r_rx = float(np.linalg.norm(sc.rx_pos))
    r_grid = np.arange(r0, r_rx, 100.0)
    truth_n = RefractivityProfile.from_model(model, r_grid)
    for name, obj in (("truth_bending.csv", truth_b), ("truth_refractivity.csv", truth_n)):
        with open(out / name, "w", encoding="ascii") as f:
            f.write(f"# config_hash={cfg.config_hash}\n")
            write_profile_csv(obj, f)
        files.append(name)
    k = np.flatnonzero(occ.ok)
    summary = {
        "command": "simulate", "config_hash": cfg.config_hash, "version": __version__,
        "model": model_id(cfg), "surface_radius_m": r0, "seed": seed, "files": files,
        "epochs": n, "occulting_sat": str(sc.occ.sat), "reference_sat": str(sc.ref.sat),
        "min_elevation_deg": float(np.degrees(np.min(occ.elevation))),
        "max_excess_phase_m": float(np.max(occ.excess_phase[k])) if k.size else 0.0,
        "max_true_alpha_rad": float(np.max(occ.true_alpha[k])) if k.size else 0.0,
        "failed_ray_solves": int((~occ.ok).sum()),
    }
    _write_json(out / "summary.json", summary)
    print(f"simulated {n} epochs of {sc.occ.sat} (reference {sc.ref.sat}); "
          f"min elevation {summary['min_elevation_deg']:.2f} deg, "
          f"max excess phase {summary['max_excess_phase_m']:.2f} m")
    return summary


# --- preprocess --------------------------------------------------------------------

def _gpr_config(cfg: RunConfig) -> GprConfig:
    return GprConfig(cfg["gpr.length_scale"], cfg.get("gpr.signal_sigma"), cfg.get("gpr.noise_sigma"),
                     cfg["gpr.chunk"], cfg["gpr.overlap"])


def _slip_config(cfg: RunConfig) -> SlipConfig:
    kw = dict(mad_factor=cfg["slip.mad_factor"], median_window=cfg["slip.median_window"],
              max_passes=cfg["slip.max_passes"])
    if cfg.get("slip.min_jump_m") is not None:
        kw["min_jump"] = cfg["slip.min_jump_m"]
    return SlipConfig(**kw)


def _process_one(job):
    ds, ref, cfg_values, out_dir, emit_json = job
    cfg = RunConfig(cfg_values)
    try:
        occ = compute_excess_phase(ds)
        cal = calibrate_clock(occ, ref)
        fixed, report = correct_cycle_slips(cal, _slip_config(cfg))
        smooth = gpr_smooth(fixed, _gpr_config(cfg))
        name = f"{ds.event_id}{_ext(emit_json)}"
        export_profile(smooth, Path(out_dir) / name, cfg.config_hash, emit_json)
        slips = [{"t": s.t, "jump_m": s.jump_m, "corrected_cycles": s.corrected_cycles}
                 for s in report]
        return {"event_id": ds.event_id, "file": name, "ok": True, "slips": slips,
                "fallback_fit": report.used_fallback, "gpr": smooth.meta.get("gpr", {})}
    except Exception as exc:  # one bad dataset must not stop the run
        return {"event_id": ds.event_id, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _run_jobs(fn, jobs: list, n_jobs: int) -> list:
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, jobs))


def cmd_preprocess(cfg: RunConfig, inputs: Sequence[str], out: Path, jobs: int,
                   emit_json: bool) -> tuple[dict, int]:
    files = _gather(inputs)
    warnings: list[str] = []
    obs = []
    platform = []
    eph = EphemerisTable()
    for p in files:
        name = p.name.lower()
        try:
            if name.endswith((".rnx", ".obs")) or name[-1:] == "o" and name[-4:-3] == ".":
                with open(p, encoding="ascii", errors="replace") as f:
                    obs.extend(parse_rinex_obs(f))
            elif name.endswith(".csv") and "obs" in name:
                with open(p, encoding="ascii", errors="replace") as f:
                    obs.extend(parse_obs_csv(f))
            elif name.endswith(".csv") and "platform" in name:
                with open(p, encoding="ascii", errors="replace") as f:
                    platform.extend(parse_platform_csv(f))
            elif name.endswith(".sp3"):
                with open(p, encoding="ascii", errors="replace") as f:
                    table = parse_sp3(f)
                eph.tracks.update(table.tracks)
                eph.spacing = table.spacing
        except (ParseError, ValueError) as exc:
            msg = f"skipping {p.name}: {exc}"
            log.warning(msg)
            warnings.append(msg)
    out.mkdir(parents=True, exist_ok=True)
    results: list[dict] = []
    datasets = []
    if obs and platform and len(eph):
        datasets = align_epochs(obs, platform, eph, cfg["preprocess.align_tolerance"],
                                cfg["preprocess.gap_split_s"], cfg["preprocess.include_glonass"])
    elif obs or platform or len(eph):
        warnings.append("observations, platform states and ephemeris are all required")
    ref_id = None
    if datasets:
        series = {ds.event_id: compute_excess_phase(ds) for ds in datasets}
        try:
            ref = choose_reference(list(series.values()),
                                   math.radians(cfg["preprocess.ref_min_elev_deg"]))
        except ValueError as exc:
            warnings.append(str(exc))
            ref = None
        if ref is not None:
            ref_id = ref.meta["event_id"]
            low = math.radians(cfg["events.elev_high_deg"])
            job_list = [(ds, ref, dict(cfg.values), str(out), emit_json) for ds in datasets
                        if ds.event_id != ref_id
                        and np.nanmin(series[ds.event_id].elevation) < low]
            results = _run_jobs(_process_one, job_list, jobs)
    for r in results:
        if not r["ok"]:
            msg = f"dataset {r['event_id']} failed: {r['error']}"
            log.warning(msg)
            warnings.append(msg)
    n_ok = sum(r["ok"] for r in results)
    summary = {"command": "preprocess", "config_hash": cfg.config_hash, "version": __version__,
               "reference": ref_id, "datasets": results, "exported": n_ok, "warnings": warnings}
    _write_json(out / "summary.json", summary)
    print(f"preprocessed {n_ok} of {len(results)} occultation datasets"
          + (f" (reference {ref_id})" if ref_id else ""))
    for r in results:
        if r["ok"]:
            print(f"  {r['event_id']}: {len(r['slips'])} cycle slips corrected -> {r['file']}")
    code = EXIT_FAILED if results and n_ok == 0 else EXIT_OK
    return summary, code


# --- retrieve / invert -------------------------------------------------------------

def _n_r_source(cfg: RunConfig, model):
    src = cfg["retrieval.n_r_source"]
    if src == "spaceborne":
        return 1.0
    if src == "insitu":
        N = cfg.get("retrieval.n_r_insitu_N")
        if N is None:
            raise UsageError("retrieval.n_r_source = insitu needs retrieval.n_r_insitu_N")
        return 1.0 + 1e-6 * N
    return model


def _retrieve_one(job) -> dict:
    path, cfg_values, out_dir, emit_json, base_dir = job
    cfg = RunConfig(cfg_values)
    p, out = Path(path), Path(out_dir)
    try:
        _, r0 = _receiver_geometry(cfg)
        nr = _n_r_source(cfg, build_model(cfg, r0, base_dir))
        s = read_profile(p)
        prof = doppler_to_bending(s, n_r=nr, max_fail_fraction=cfg["retrieval.max_fail_fraction"],
                                  horizon_margin=cfg["retrieval.horizon_margin_m"])
        attrs = {"config_hash": cfg.config_hash, "source": p.name}
        write_profile_file(prof, out / f"{p.stem}_bending{_ext(emit_json)}", attrs, emit_json)
        with open(out / f"{p.stem}_bending.csv", "w", encoding="ascii") as f:
            f.write(f"# config_hash={cfg.config_hash}\n")
            write_profile_csv(prof, f)
        return {"source": p.name, "ok": True, "samples": len(prof),
                "usable": int((prof.quality == 0).sum()),
                "max_alpha_rad": float(np.max(prof.alpha)) if len(prof) else 0.0}
    except Exception as exc:  # one bad profile must not stop the run
        return {"source": p.name, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def cmd_retrieve(cfg: RunConfig, inputs: Sequence[str], out: Path, emit_json: bool,
                 base_dir: str = ".", jobs: int = 1) -> tuple[dict, int]:
    files = [p for p in _gather(inputs) if _is_excess_profile(p)]
    _, r0 = _receiver_geometry(cfg)
    _n_r_source(cfg, build_model(cfg, r0, base_dir))  # configuration errors surface here
    out.mkdir(parents=True, exist_ok=True)
    job_list = [(str(p), dict(cfg.values), str(out), emit_json, base_dir) for p in files]
    results = _run_jobs(_retrieve_one, job_list, jobs)
    for r in results:
        if not r["ok"]:
            log.warning("retrieval failed for %s: %s", r["source"], r["error"])
    n_ok = sum(r["ok"] for r in results)
    summary = {"command": "retrieve", "config_hash": cfg.config_hash, "version": __version__,
               "profiles": results, "retrieved": n_ok}
    _write_json(out / "summary.json", summary)
    print(f"retrieved bending angles for {n_ok} of {len(results)} profiles")
    return summary, (EXIT_FAILED if results and n_ok == 0 else EXIT_OK)


def _invert_one(job) -> dict:
    path, cfg_values, out_dir, emit_json, base_dir = job
    cfg = RunConfig(cfg_values)
    p, out = Path(path), Path(out_dir)
    stem = p.stem[:-len("_bending")] if p.stem.endswith("_bending") else p.stem
    try:
        _, r0 = _receiver_geometry(cfg)
        model = build_model(cfg, r0, base_dir)
        topside, top_id = _topside(cfg, model, r0)
        prof = read_profile_file(p)
        r_rx = float(prof.meta["receiver_radius"])
        n_r = float(prof.meta["n_r"])
        refr = abel_invert_partial(prof, r_rx, n_r, topside, top_id)
        attrs = {"config_hash": cfg.config_hash, "source": p.name}
        write_profile_file(refr, out / f"{stem}_refractivity{_ext(emit_json)}", attrs, emit_json)
        with open(out / f"{stem}_refractivity.csv", "w", encoding="ascii") as f:
            f.write(f"# config_hash={cfg.config_hash}\n")
            write_profile_csv(refr, f)
        entry = {"source": p.name, "ok": True, "levels": len(refr), "topside": top_id}
        if cfg["model.kind"] != "vacuum":
            ref = RefractivityProfile.from_model(model, refr.r)
            stats = compare_refractivity(refr, ref, parse_bands(cfg["invert.bands_km"]), r0)
            entry["bias_vs_model"] = [
                {"lo_m": b.lo, "hi_m": b.hi, "count": b.count,
                 "mean_pct": None if math.isnan(b.mean_pct) else b.mean_pct,
                 "rms_pct": None if math.isnan(b.rms_pct) else b.rms_pct} for b in stats]
        return entry
    except Exception as exc:  # one bad profile must not stop the run
        return {"source": p.name, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def cmd_invert(cfg: RunConfig, inputs: Sequence[str], out: Path, emit_json: bool,
               base_dir: str = ".", jobs: int = 1) -> tuple[dict, int]:
    files = [p for p in _gather(inputs) if _profile_kind(p) == "bending"]
    _, r0 = _receiver_geometry(cfg)
    _topside(cfg, build_model(cfg, r0, base_dir), r0)
    out.mkdir(parents=True, exist_ok=True)
    job_list = [(str(p), dict(cfg.values), str(out), emit_json, base_dir) for p in files]
    results = _run_jobs(_invert_one, job_list, jobs)
    for r in results:
        if not r["ok"]:
            log.warning("inversion failed for %s: %s", r["source"], r["error"])
    n_ok = sum(r["ok"] for r in results)
    summary = {"command": "invert", "config_hash": cfg.config_hash, "version": __version__,
               "profiles": results, "inverted": n_ok}
    _write_json(out / "summary.json", summary)
    print(f"inverted {n_ok} of {len(results)} bending profiles")
    for r in results:
        for b in r.get("bias_vs_model", []):
            if b["count"]:
                print(f"  {r['source']}: {b['lo_m'] / 1e3:5.1f}-{b['hi_m'] / 1e3:5.1f} km "
                      f"mean {b['mean_pct']:+.3f}% rms {b['rms_pct']:.3f}%")
    return summary, (EXIT_FAILED if results and n_ok == 0 else EXIT_OK)


# --- stats -------------------------------------------------------------------------

def cmd_stats(cfg: RunConfig, inputs: Sequence[str], out: Path) -> tuple[dict, int]:
    """Aggregate count files and event files into a ledger, density and coverage report.

    Count files hold ``stage_totals`` (observed/parsed/selected, optional
    ``failures``) and an optional ``density`` block; event files hold an
    ``events`` list of ``{outcome, constellation, lat_deg, lon_deg}``.
    """
    docs = []
    for p in _gather(inputs):
        if p.suffix.lower() != ".json":
            continue
        try:
            docs.append((p.name, json.loads(p.read_text(encoding="utf-8"))))
        except json.JSONDecodeError as exc:
            log.warning("skipping %s: %s", p.name, exc)
    out.mkdir(parents=True, exist_ok=True)
    ledgers: list[QualityLedger] = []
    densities = []
    points = []
    for name, doc in docs:
        if not isinstance(doc, dict):
            continue
        if "stage_totals" in doc:
            st = doc["stage_totals"]
            fails = doc.get("failures", {})
            ledgers.append(ledger_from_stage_totals(
                int(st["observed"]), int(st["parsed"]), int(st.get("selected", 0)),
                int(fails.get("excluded-constellation", 0)), int(fails.get("loss-of-lock", 0))))
        if "events" in doc:
            evs = doc["events"]
            ledgers.append(tally(evs))
            points.extend((e["lat_deg"], e["lon_deg"]) for e in evs
                          if "lat_deg" in e and "lon_deg" in e)
        if "density" in doc:
            d = doc["density"]
            densities.append(sounding_density(d["count"], d["area_km2"], d["duration_days"],
                                              d.get("reported_per_1e6_km2"),
                                              d.get("reported_per_1e6_mi2")))
    if ledgers:
        merged = {}
        for led in ledgers:
            for s in led.stages:
                m = merged.setdefault(s.name, {"count": 0, "by": {}})
                m["count"] += s.count
                for k, v in s.by_constellation.items():
                    m["by"][k] = m["by"].get(k, 0) + v
        edges = {}
        for led in ledgers:
            for e in led.edges:
                key = (e.source, e.target, e.reason)
                edges[key] = edges.get(key, 0) + e.count
        ledger = QualityLedger.from_dict({
            "stages": [{"name": k, "count": v["count"], "by_constellation": v["by"]}
                       for k, v in merged.items()],
            "edges": [{"from": a, "to": b, "count": c, "reason": r}
                      for (a, b, r), c in edges.items()]})
    else:
        ledger = tally([])
    (out / "ledger.json").write_text(ledger.to_json() + "\n", encoding="utf-8")
    cov = grid_coverage(points, cfg["stats.cell_deg"])
    summary = {"command": "stats", "config_hash": cfg.config_hash, "version": __version__,
               "ledger": ledger.to_dict(), "density": [d.to_dict() for d in densities],
               "coverage": {"cell_deg": cov.cell_deg, "total": cov.total,
                            "cells": [[i, j, c] for (i, j), c in cov.counts.items()]}}
    _write_json(out / "summary.json", summary)
    lines = ["stage counts:"]
    lines += [f"  {s.name:10s} {s.count}" for s in ledger.stages]
    lines.append("flows:")
    lines += [f"  {e.source} -> {e.target} ({e.reason}): {e.count}" for e in ledger.edges]
    for d in densities:
        lines.append(d.text())
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return summary, EXIT_OK


# --- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel datasets (default 1)")
    common.add_argument("--emit-json", action="store_true",
                        help="write JSON instead of NetCDF profile files")
    common.add_argument("--seed", type=int, default=None, help="noise seed (overrides noise.seed)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = _Parser(prog="balloonro", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="simulate a balloon occultation")
    for name, helptext in (("preprocess", "observables -> calibrated, smoothed excess phase"),
                           ("retrieve", "excess Doppler -> bending angle"),
                           ("invert", "bending angle -> refractivity"),
                           ("stats", "quality ledger, density and coverage")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("inputs", nargs="+", help="input files or directories")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("balloonro: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        base_dir = os.path.dirname(os.path.abspath(args.config)) if args.config else "."
        out = Path(args.out)
        if args.command == "simulate":
            cmd_simulate(cfg, out, args.seed, args.emit_json, base_dir)
            return EXIT_OK
        if args.command == "preprocess":
            return cmd_preprocess(cfg, args.inputs, out, args.jobs, args.emit_json)[1]
        if args.command == "retrieve":
            return cmd_retrieve(cfg, args.inputs, out, args.emit_json, base_dir, args.jobs)[1]
        if args.command == "invert":
            return cmd_invert(cfg, args.inputs, out, args.emit_json, base_dir, args.jobs)[1]
        return cmd_stats(cfg, args.inputs, out)[1]
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"balloonro: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
