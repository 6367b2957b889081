"""End-to-end preprocessing: raw events -> split -> normalized event grids."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from .catalog import VariableCatalog, aggregate
from .errors import DataValidationError, EmptyWindowError
from .events import as_frame
from .preprocess import (
    EncounterMatrix,
    NormStats,
    SplitAssignment,
    apply_norm,
    build_event_grid,
    build_snapshot,
    fit_norm_stats,
    read_matrix_csv,
    split_patients,
    write_matrix_csv,
    write_snapshot_csv,
)

log = logging.getLogger(__name__)


@dataclass
class PreparedData:
    stats: NormStats
    split: SplitAssignment
    train: list[EncounterMatrix] = field(default_factory=list)
    holdout: list[EncounterMatrix] = field(default_factory=list)
    n_unlabeled: int = 0


def attach_labels(events: pd.DataFrame, labels: Mapping[str, bool]) -> tuple[pd.DataFrame, int]:
    """Drop encounters without a disposition; returns (events, n_dropped_encounters)."""
    has = events["encounter_id"].isin(labels.keys())
    dropped = events.loc[~has, "encounter_id"].nunique()
    if dropped:
        log.info("excluded %d encounters without disposition", dropped)
    return events[has], int(dropped)


def build_matrices(events: pd.DataFrame, labels: Mapping[str, bool], catalog: VariableCatalog) -> list[EncounterMatrix]:
    out = []
    for enc, group in events.groupby("encounter_id", sort=True):
        out.append(build_event_grid(group, catalog, labels[enc], encounter_id=enc))
    return out


def prepare(
    raw_events,
    labels: Mapping[str, bool],
    catalog: VariableCatalog,
    split: SplitAssignment | None = None,
    train_fraction: float = 0.75,
    seed: int = 0,
    unknown: str = "drop",
) -> PreparedData:
    """Aggregate, split by patient, fit stats on train, normalize both sides, impute."""
    events = aggregate(as_frame(raw_events), catalog, unknown)
    events, n_unlabeled = attach_labels(events, labels)
    if len(events) == 0:
        raise DataValidationError("no labeled events")
    if split is None:
        split = split_patients(events["patient_id"].unique(), train_fraction, seed)
    missing = set(events["patient_id"].unique()) - set(split.sides)
    if missing:
        raise DataValidationError(f"{len(missing)} patients missing from the split, e.g. {sorted(missing)[:3]}")
    side = events["patient_id"].map(split.sides)
    train_events = events[side == "train"]
    stats = fit_norm_stats(train_events, catalog)
    normed = apply_norm(events, stats)
    train = build_matrices(normed[side == "train"], labels, catalog)
    holdout = build_matrices(normed[side == "holdout"], labels, catalog)
    return PreparedData(stats, split, train, holdout, n_unlabeled)


# ---------------------------------------------------------------------------
# on-disk layout of a preprocessed data set
#
#   norm_stats.csv, split.csv, encounters.csv (the index)
#   matrices/<side>/<encounter>.csv and <encounter>.mask.csv
#   snapshots/<side>/<encounter>.csv   (optional)

INDEX_HEADER = ["encounter_id", "patient_id", "side", "survived", "n_cols", "last_minute"]


def write_prepared(data: PreparedData, out_dir, snapshot: bool = False, window_minutes: float = 720.0,
                   step_minutes: float = 5.0) -> dict[str, Path]:
    """Write stats, split, index and per-encounter matrices; returns the written paths.

    Encounters with nothing inside the snapshot window get no snapshot file.
    """
    out = Path(out_dir)
    written: dict[str, Path] = {}
    data.stats.to_csv(out / "norm_stats.csv")
    data.split.to_csv(out / "split.csv")
    written["norm_stats"] = out / "norm_stats.csv"
    written["split"] = out / "split.csv"
    rows = []
    for side, mats in (("train", data.train), ("holdout", data.holdout)):
        mdir = out / "matrices" / side
        mdir.mkdir(parents=True, exist_ok=True)
        sdir = out / "snapshots" / side
        if snapshot:
            sdir.mkdir(parents=True, exist_ok=True)
        for m in mats:
            write_matrix_csv(m, mdir / f"{m.encounter_id}.csv", mdir / f"{m.encounter_id}.mask.csv")
            if snapshot:
                try:
                    snap = build_snapshot(m, window_minutes, step_minutes)
                except EmptyWindowError:
                    log.info("encounter %s: no data inside the snapshot window", m.encounter_id)
                else:
                    write_snapshot_csv(snap, sdir / f"{m.encounter_id}.csv")
            rows.append([m.encounter_id, m.patient_id, side, int(m.survived), m.n_cols, repr(float(m.times[-1]))])
    with open(out / "encounters.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INDEX_HEADER)
        w.writerows(rows)
    written["index"] = out / "encounters.csv"
    return written


def read_prepared(data_dir, side: str) -> list[EncounterMatrix]:
    """Matrices of one side ("train" or "holdout") from a ``write_prepared`` directory."""
    root = Path(data_dir)
    index_path = root / "encounters.csv"
    if not index_path.exists():
        raise DataValidationError(f"{root} is not a preprocessed data directory (no encounters.csv)")
    index = pd.read_csv(index_path, dtype={"encounter_id": str, "patient_id": str, "side": str})
    if list(index.columns) != INDEX_HEADER:
        raise DataValidationError(f"{index_path}: unexpected header")
    stats = NormStats.from_csv(root / "norm_stats.csv")
    flags = dict(zip(stats.variables, stats.binarized))
    out = []
    for rec in index[index["side"] == side].itertuples(index=False):
        base = root / "matrices" / side / rec.encounter_id
        m = read_matrix_csv(f"{base}.csv", f"{base}.mask.csv", rec.encounter_id, rec.patient_id, bool(rec.survived))
        m.binarized = np.array([flags[v] for v in m.row_vars], dtype=bool)
        out.append(m)
    return out
