"""Quality accounting of the data down-selection and sounding-density figures."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

KM2_PER_MI2 = 2.589988

# terminal outcome tags, and the main-chain stage each one reaches
OUTCOMES = ("observed", "excluded-constellation", "loss-of-lock", "parsed", "selected")
STAGES = ("observed", "parsed", "selected")
_EDGES = (
    # from, to, reason, outcomes that take this edge
    ("observed", "parsed", "parsed", ("parsed", "selected")),
    ("observed", "excluded", "excluded-constellation", ("excluded-constellation",)),
    ("observed", "lost", "loss-of-lock", ("loss-of-lock",)),
    ("observed", "failed", "unspecified", ("observed",)),
    ("parsed", "selected", "selected", ("selected",)),
    ("parsed", "not-selected", "not-selected", ("parsed",)),
)


class LedgerError(ValueError):
    """Flow conservation or tag validation failed."""


@dataclass
class Stage:
    name: str
    count: int
    by_constellation: dict[str, int] = field(default_factory=dict)


@dataclass
class Edge:
    source: str
    target: str
    count: int
    reason: str


@dataclass
class QualityLedger:
    stages: list[Stage]
    edges: list[Edge]

    def stage(self, name: str) -> Stage:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def edge(self, source: str, target: str) -> Edge:
        for e in self.edges:
            if e.source == source and e.target == target:
                return e
        raise KeyError((source, target))

    def validate(self) -> None:
        counts = [s.count for s in self.stages]
        if any(b > a for a, b in zip(counts, counts[1:])):
            raise LedgerError(f"stage counts increase along the chain: {counts}")
        for s in self.stages:
            out = [e.count for e in self.edges if e.source == s.name]
            if out and sum(out) != s.count:
                raise LedgerError(f"edges out of {s.name} carry {sum(out)}, stage holds {s.count}")

    def to_dict(self) -> dict:
        return {"stages": [{"name": s.name, "count": s.count,
                            "by_constellation": dict(sorted(s.by_constellation.items()))}
                           for s in self.stages],
                "edges": [{"from": e.source, "to": e.target, "count": e.count, "reason": e.reason}
                          for e in self.edges]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "QualityLedger":
        try:
            stages = [Stage(str(s["name"]), int(s["count"]),
                            {str(k): int(v) for k, v in s.get("by_constellation", {}).items()})
                      for s in doc["stages"]]
            edges = [Edge(str(e["from"]), str(e["to"]), int(e["count"]), str(e["reason"]))
                     for e in doc["edges"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise LedgerError(f"malformed ledger document: {exc}") from exc
        led = cls(stages, edges)
        led.validate()
        return led

    @classmethod
    def from_json(cls, text: str) -> "QualityLedger":
        return cls.from_dict(json.loads(text))


def _normalise(item) -> tuple[str, str]:
    if isinstance(item, str):
        return item, ""
    if isinstance(item, Mapping):
        return str(item["outcome"]), str(item.get("constellation", ""))
    tag, cons = item
    return str(tag), str(cons)


def tally(outcomes: Iterable, stage_totals: Optional[Mapping[str, int]] = None) -> QualityLedger:
    """Build a ledger from one terminal outcome per event.

    Items are a tag, a ``(tag, constellation)`` pair, or a mapping with
    ``outcome`` and optional ``constellation``.  ``stage_totals`` are
    independently declared stage counts; any mismatch is a conservation
    error.
    """
    per_tag: Counter = Counter()
    per_tag_cons: dict[str, Counter] = {t: Counter() for t in OUTCOMES}
    for item in outcomes:
        tag, cons = _normalise(item)
        if tag not in OUTCOMES:
            raise LedgerError(f"unknown outcome tag {tag!r}; expected one of {', '.join(OUTCOMES)}")
        per_tag[tag] += 1
        if cons:
            per_tag_cons[tag][cons] += 1
    reach = {"observed": OUTCOMES, "parsed": ("parsed", "selected"), "selected": ("selected",)}
    stages = []
    for name in STAGES:
        cons: Counter = Counter()
        for t in reach[name]:
            cons.update(per_tag_cons[t])
        stages.append(Stage(name, sum(per_tag[t] for t in reach[name]), dict(sorted(cons.items()))))
    edges = [Edge(src, dst, sum(per_tag[t] for t in tags), reason)
             for src, dst, reason, tags in _EDGES]
    led = QualityLedger(stages, edges)
    for name, declared in (stage_totals or {}).items():
        got = led.stage(name).count
        if got != int(declared):
            relation = "less than" if got < declared else "more than"
            raise LedgerError(f"outcomes for stage {name} sum to {got}, {relation} "
                              f"the declared total {declared}")
    led.validate()
    return led


def tally_counts(terminal: Mapping[str, int], stage_totals: Optional[Mapping[str, int]] = None
                 ) -> QualityLedger:
    """Same as :func:`tally` for pre-aggregated terminal outcome counts."""
    items = []
    for tag in OUTCOMES:
        n = int(terminal.get(tag, 0))
        if n < 0:
            raise LedgerError(f"negative count for {tag}")
        items.extend([tag] * n)
    unknown = set(terminal) - set(OUTCOMES)
    if unknown:
        raise LedgerError(f"unknown outcome tag {sorted(unknown)[0]!r}")
    return tally(items, stage_totals)


def ledger_from_stage_totals(observed: int, parsed: int, selected: int,
                             excluded_constellation: int = 0, loss_of_lock: int = 0
                             ) -> QualityLedger:
    """Ledger from published stage totals; unattributed drop-outs are tagged ``observed``."""
    if not observed >= parsed >= selected >= 0:
        raise LedgerError("stage totals must be non-increasing and non-negative")
    rest = observed - parsed - excluded_constellation - loss_of_lock
    if rest < 0:
        raise LedgerError("failure counts exceed the observed-minus-parsed total")
    terminal = {"selected": selected, "parsed": parsed - selected,
                "excluded-constellation": excluded_constellation,
                "loss-of-lock": loss_of_lock, "observed": rest}
    return tally_counts(terminal, {"observed": observed, "parsed": parsed, "selected": selected})


# --- density -----------------------------------------------------------------------

@dataclass(frozen=True)
class DensityReport:
    count: float
    area_km2: float
    duration_days: float
    density: float  # per 1e6 km^2 per day
    density_mi2: float  # per 1e6 mi^2 per day
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"count": self.count, "area_km2": self.area_km2,
                "duration_days": self.duration_days, "density_per_1e6_km2_per_day": self.density,
                "density_per_1e6_mi2_per_day": self.density_mi2, "notes": list(self.notes)}

    def text(self) -> str:
        lines = [
            f"soundings: {self.count:g} over {self.area_km2:g} km^2 and {self.duration_days:g} days",
            f"density = {self.count:g} / {self.duration_days:g} d / ({self.area_km2:g} km^2 / 1e6)"
            f" = {self.density:.6g} per 1e6 km^2 per day",
            f"        = {self.density_mi2:.6g} per 1e6 mi^2 per day (x {KM2_PER_MI2})",
        ]
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


def sounding_density(count: float, area_km2: float, duration_days: float,
                     reported_km2: Optional[float] = None,
                     reported_mi2: Optional[float] = None) -> DensityReport:
    """Soundings per 10^6 km^2 per day (and per 10^6 mi^2 per day).

    When externally reported figures are supplied they are compared with
    the arithmetic and any disagreement is written into the notes.
    """
    if count < 0 or not area_km2 > 0 or not duration_days > 0:
        raise ValueError("count must be >= 0 and area/duration > 0")
    density = count / duration_days / (area_km2 / 1e6)
    notes = []
    for label, rep, ours in (("1e6 km^2", reported_km2, density),
                             ("1e6 mi^2", reported_mi2, density * KM2_PER_MI2)):
        if rep is None:
            continue
        if math.isclose(rep, ours, rel_tol=0.05):
            notes.append(f"reported {rep:g} per {label} per day agrees with {ours:.4g}")
        else:
            notes.append(f"reported {rep:g} per {label} per day, but count/duration/area gives "
                         f"{ours:.4g}; the reported accounting cannot be derived from these inputs")
    return DensityReport(count, area_km2, duration_days, density, density * KM2_PER_MI2,
                         tuple(notes))


# --- coverage grid -----------------------------------------------------------------

@dataclass
class GridCoverage:
    cell_deg: float
    counts: dict[tuple[int, int], int]

    @property
    def shape(self) -> tuple[int, int]:
        return math.ceil(180.0 / self.cell_deg), math.ceil(360.0 / self.cell_deg)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def cell(self, lat_deg: float, lon_deg: float) -> tuple[int, int]:
        return _cell(lat_deg, lon_deg, self.cell_deg)

    def __getitem__(self, key: tuple[int, int]) -> int:
        return self.counts.get(key, 0)

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.int64)
        for (i, j), c in self.counts.items():
            out[i, j] = c
        return out


def _cell(lat: float, lon: float, c: float) -> tuple[int, int]:
    # a point on a boundary belongs to the lower-index cell
    nr, nc = math.ceil(180.0 / c), math.ceil(360.0 / c)
    i = min(max(math.ceil((lat + 90.0) / c) - 1, 0), nr - 1)
    j = min(max(math.ceil((lon + 180.0) / c) - 1, 0), nc - 1)
    return i, j


def _latlon(ev) -> tuple[float, float]:
    if hasattr(ev, "tangent_lat"):
        return math.degrees(ev.tangent_lat), math.degrees(ev.tangent_lon)
    lat, lon = ev
    return float(lat), float(lon)


def grid_coverage(events: Iterable, cell_deg: float) -> GridCoverage:
    """Count events per lat/lon cell.

    Events are :class:`OccultationEvent` objects (radians) or ``(lat, lon)``
    pairs in degrees.  Longitudes are wrapped to [-180, 180).
    """
    if not cell_deg > 0:
        raise ValueError("cell size must be positive")
    counts: Counter = Counter()
    for ev in events:
        lat, lon = _latlon(ev)
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat} out of range")
        lon = (lon + 180.0) % 360.0 - 180.0
        counts[_cell(lat, lon, cell_deg)] += 1
    return GridCoverage(cell_deg, dict(sorted(counts.items())))


def median_min_elevation(events: Iterable) -> float:
    """Median of per-event minimum elevation (rad); NaN if there are none."""
    vals = [ev.min_elevation for ev in events]
    return float(np.median(vals)) if vals else math.nan
