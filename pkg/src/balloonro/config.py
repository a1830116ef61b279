"""Run configuration: flat ``section.key = value`` text with typed defaults.

Unknown keys and bad values are collected and reported together.  The
config hash is the SHA-256 of the canonical resolved text, so it does not
depend on ordering, whitespace or comments in the source file.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

AUTO = "auto"

# key -> (type, default, allowed values or None)
SCHEMA: dict[str, tuple[type, Any, Optional[tuple]]] = {
    "scenario.lat_deg": (float, 33.0, None),
    "scenario.lon_deg": (float, -111.0, None),
    "scenario.height_m": (float, 18000.0, None),
    "scenario.azimuth_deg": (float, 270.0, None),
    "scenario.start_elev_deg": (float, 2.0, None),
    "scenario.end_elev_deg": (float, -5.0, None),
    "scenario.epoch_week": (int, 2120, None),
    "scenario.epoch_tow": (float, 345600.0, None),
    "scenario.ref_azimuth_deg": (float, 20.0, None),
    "scenario.ref_gamma_deg": (float, -12.0, None),
    "scenario.dt": (float, 1.0, None),
    "scenario.trajectory": (str, "", None),
    "scenario.extra_azimuths_deg": (str, "", None),
    "scenario.ephemeris_spacing": (float, 900.0, None),
    "scenario.obs_format": (str, "rinex", ("rinex", "csv")),
    "model.kind": (str, "exponential", ("exponential", "layered", "vacuum")),
    "model.N0": (float, 300.0, None),
    "model.H": (float, 7000.0, None),
    "model.profile": (str, "", None),
    "noise.phase_sigma_m": (float, 0.0, None),
    "noise.clock_sigma": (float, 0.0, None),
    "noise.seed": (int, 0, None),
    "events.scan_dt": (float, 10.0, None),
    "events.elev_high_deg": (float, 5.0, None),
    "events.elev_low_deg": (float, -6.0, None),
    "preprocess.ref_min_elev_deg": (float, 30.0, None),
    "preprocess.align_tolerance": (float, 0.05, None),
    "preprocess.gap_split_s": (float, 30.0, None),
    "preprocess.include_glonass": (bool, False, None),
    "slip.mad_factor": (float, 6.0, None),
    "slip.min_jump_m": (float, AUTO, None),
    "slip.median_window": (int, 15, None),
    "slip.max_passes": (int, 5, None),
    "gpr.length_scale": (float, 5.0, None),
    "gpr.signal_sigma": (float, AUTO, None),
    "gpr.noise_sigma": (float, AUTO, None),
    "gpr.chunk": (int, 512, None),
    "gpr.overlap": (int, 64, None),
    "retrieval.n_r_source": (str, "model", ("model", "insitu", "spaceborne")),
    "retrieval.n_r_insitu_N": (float, AUTO, None),
    "retrieval.max_fail_fraction": (float, 0.3, None),
    "retrieval.horizon_margin_m": (float, 10.0, None),
    "invert.topside": (str, "model", ("model", "exponential", "none")),
    "invert.topside_N0": (float, 300.0, None),
    "invert.topside_H": (float, 7000.0, None),
    "invert.bands_km": (str, "0,4.5,10,15,20", None),
    "stats.cell_deg": (float, 1.0, None),
}

_POSITIVE = {"scenario.dt", "scenario.ephemeris_spacing", "model.H", "events.scan_dt",
             "preprocess.gap_split_s", "slip.mad_factor", "slip.median_window",
             "slip.max_passes", "gpr.length_scale", "gpr.chunk", "invert.topside_H",
             "stats.cell_deg", "gpr.signal_sigma", "gpr.noise_sigma", "slip.min_jump_m"}
_NONNEG = {"model.N0", "noise.phase_sigma_m", "noise.clock_sigma", "noise.seed",
           "preprocess.align_tolerance", "gpr.overlap", "invert.topside_N0",
           "retrieval.n_r_insitu_N", "retrieval.horizon_margin_m"}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def _convert(kind: type, text: str):
    text = text.strip()
    if text.lower() == AUTO:
        return AUTO
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("value must be finite")
        return v
    return text


def _canon(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class RunConfig:
    values: Mapping[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        v = self.values.get(key, default)
        return default if v == AUTO else v

    def canonical_text(self) -> str:
        return "".join(f"{k}={_canon(self.values[k])}\n" for k in sorted(self.values))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def with_overrides(self, **pairs) -> "RunConfig":
        return build_config({**self.values, **pairs})


def build_config(pairs: Mapping[str, Any]) -> RunConfig:
    problems = []
    values = {k: d for k, (_, d, _) in SCHEMA.items()}
    for key, raw in pairs.items():
        if key not in SCHEMA:
            problems.append(f"unknown key {key!r}")
            continue
        kind, _, allowed = SCHEMA[key]
        try:
            v = _convert(kind, raw) if isinstance(raw, str) else raw
            if v != AUTO and kind is float and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if v != AUTO and not isinstance(v, kind):
                raise ValueError(f"expected {kind.__name__}")
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
            continue
        if allowed is not None and v not in allowed:
            problems.append(f"{key}: {v!r} not one of {', '.join(allowed)}")
            continue
        if v != AUTO and key in _POSITIVE and not v > 0:
            problems.append(f"{key}: must be positive")
            continue
        if v != AUTO and key in _NONNEG and v < 0:
            problems.append(f"{key}: must be non-negative")
            continue
        values[key] = v
    if values["gpr.chunk"] <= 2 * values["gpr.overlap"]:
        problems.append("gpr.chunk must exceed twice gpr.overlap")
    try:
        [float(x) for x in values["scenario.extra_azimuths_deg"].split(",") if x.strip()]
    except ValueError:
        problems.append("scenario.extra_azimuths_deg: expected comma-separated numbers")
    try:
        parse_bands(values["invert.bands_km"])
    except ValueError as exc:
        problems.append(f"invert.bands_km: {exc}")
    if problems:
        raise ConfigError(problems)
    return RunConfig(values)


def parse_config_text(text: str) -> RunConfig:
    pairs: dict[str, str] = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            problems.append(f"line {lineno}: expected key = value")
            continue
        k, v = (p.strip() for p in s.split("=", 1))
        if k in pairs:
            problems.append(f"line {lineno}: duplicate key {k!r}")
        pairs[k] = v
    try:
        cfg = build_config(pairs)
    except ConfigError as exc:
        problems.extend(exc.problems)
        cfg = None
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: Optional[str]) -> RunConfig:
    if not path:
        return build_config({})
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read())


def parse_bands(text: str) -> list[tuple[float, float]]:
    edges = [float(x) * 1e3 for x in text.split(",") if x.strip()]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("need at least two strictly increasing band edges")
    return list(zip(edges, edges[1:]))
