"""Walk one small hand-made encounter through aggregation, normalization,
the event grid and the 12-hour snapshot.

    python demos/preprocessing_walkthrough.py
"""

import io

import numpy as np
import pandas as pd

from icudyn.catalog import aggregate, parse_catalog
from icudyn.events import MeasurementEvent, as_frame
from icudyn.preprocess import apply_norm, build_event_grid, build_snapshot, fit_norm_stats

CATALOG = parse_catalog(io.StringIO(
    "raw_name,canonical_name,kind,unit_scale,unit_offset\n"
    "SBP-invasive,systolic_bp,physiologic,,\n"
    "SBP-cuff,systolic_bp,physiologic,,\n"
    f"temp_F,temperature,physiologic,{5 / 9!r},{-160 / 9!r}\n"
    "lactate,lactate,lab,,\n"
    "epinephrine,epinephrine,drug,,\n"
))

raw = as_frame([
    MeasurementEvent("p1", "e1", "SBP-cuff", 0, 92),
    MeasurementEvent("p1", "e1", "temp_F", 0, 100.4),
    MeasurementEvent("p1", "e1", "SBP-invasive", 40, 85),
    MeasurementEvent("p1", "e1", "lactate", 55, 3.1),
    MeasurementEvent("p1", "e1", "epinephrine", 60, 0.05),
    MeasurementEvent("p1", "e1", "SBP-invasive", 90, 78),
    MeasurementEvent("p1", "e1", "temp_F", 130, 101.8),
])

canonical = aggregate(raw, CATALOG)
print("aggregated events (two blood pressure sources share one row, Fahrenheit became Celsius):")
print(canonical.to_string(index=False), "\n")

stats = fit_norm_stats(canonical, CATALOG)
print("normalization stats fitted on this encounter:")
print(pd.DataFrame({"mean": stats.mean, "std": stats.std, "binarized": stats.binarized},
                   index=stats.variables).round(3), "\n")

grid = build_event_grid(apply_norm(canonical, stats), CATALOG, survived=True)
print("event grid, one column per measurement time (minutes):")
print(pd.DataFrame(grid.values, index=grid.row_vars, columns=grid.times.astype(int)).round(2), "\n")

snap = build_snapshot(grid)
print(f"snapshot: {snap.n_cols} columns every {snap.times[1] - snap.times[0]:g} min up to {snap.times[-1]:g} min")
first = pd.DataFrame(snap.values[:, :30:5], index=snap.row_vars, columns=snap.times[:30:5].astype(int))
print(first.round(2))
print("\nrows that are all zero in the snapshot:", [v for v, r in zip(snap.row_vars, snap.values) if not np.any(r)])
