"""Quality ledger and sounding density for the published flight counts.

680 occultations were observable during the 120 h flight, 195 were parsed
and 15 selected for retrieval.  Over 1350 soundings were counted in a
900 km x 1000 km box.  The ledger keeps the flows conserved, and the
density report shows its arithmetic next to the figures reported for the
flight, which cannot be reproduced from those inputs.

    python3 demos/flight_accounting.py
"""

import json

import numpy as np

from balloonro.stats import grid_coverage, ledger_from_stage_totals, sounding_density

ledger = ledger_from_stage_totals(observed=680, parsed=195, selected=15)
print("stage counts")
for s in ledger.stages:
    print(f"  {s.name:9s} {s.count:4d}")
print("flows (the Sankey diagram's edges)")
for e in ledger.edges:
    if e.count:
        print(f"  {e.source:8s} -> {e.target:12s} {e.count:4d}  ({e.reason})")

report = sounding_density(1350, 900.0 * 1000.0, 120.0 / 24.0, reported_km2=130, reported_mi2=340)
print()
print(report.text())

# what normalisation would give the reported figure?
print()
print("inputs that would reproduce 130 per 1e6 km^2 per day with count 1350:")
print(f"  area {1350 / 5 / 130 * 1e6:.3g} km^2 over 5 days, or")
print(f"  {1350 / 0.9 / 130:.3g} days over 9e5 km^2")

# coverage of synthetic tangent points scattered over the flight box
rng = np.random.default_rng(0)
lat = 33.0 + rng.uniform(-4.5, 4.5, 1350)
lon = -111.0 + rng.uniform(-5.0, 5.0, 1350)
cov = grid_coverage(zip(lat, lon), 2.0)
counts = np.array(sorted(cov.counts.values()))
print()
print(f"2 deg grid: {len(counts)} occupied cells, {cov.total} soundings, "
      f"per-cell min/median/max {counts.min()}/{int(np.median(counts))}/{counts.max()}")
print()
print("ledger JSON for an external Sankey renderer:")
print(json.dumps(ledger.to_dict()["edges"][:2], indent=1), "...")
