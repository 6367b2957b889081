"""Raw measurement events and the events/labels CSV formats.

Events travel through the pipeline as a pandas table with the columns of
:data:`EVENT_COLUMNS`; :class:`MeasurementEvent` is the per-row view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, astuple
from typing import Iterable

import numpy as np
import pandas as pd

from .errors import DataValidationError

EVENT_COLUMNS = ["patient_id", "encounter_id", "variable", "t", "value"]
EVENTS_CSV_HEADER = ["patient_id", "encounter_id", "variable", "t_minutes", "value"]
LABELS_CSV_HEADER = ["encounter_id", "survived"]


@dataclass(frozen=True)
class MeasurementEvent:
    patient_id: str
    encounter_id: str
    variable: str
    t: float  # minutes since encounter start
    value: float

    def __post_init__(self):
        if not (self.t >= 0 and math.isfinite(self.t)):
            raise DataValidationError(f"event time must be finite and >= 0, got {self.t}")
        if not math.isfinite(self.value):
            raise DataValidationError(f"event value must be finite, got {self.value}")


def empty_events() -> pd.DataFrame:
    return pd.DataFrame(
        {
            "patient_id": pd.Series([], dtype=object),
            "encounter_id": pd.Series([], dtype=object),
            "variable": pd.Series([], dtype=object),
            "t": pd.Series([], dtype=float),
            "value": pd.Series([], dtype=float),
        }
    )


def validate_events(df: pd.DataFrame) -> pd.DataFrame:
    missing = [c for c in EVENT_COLUMNS if c not in df.columns]
    if missing:
        raise DataValidationError(f"event table lacks columns {missing}")
    t = df["t"].to_numpy(dtype=float)
    v = df["value"].to_numpy(dtype=float)
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise DataValidationError("event times must be finite and >= 0")
    if not np.all(np.isfinite(v)):
        raise DataValidationError("event values must be finite")
    return df


def as_frame(events) -> pd.DataFrame:
    """Accept a DataFrame or an iterable of MeasurementEvent."""
    if isinstance(events, pd.DataFrame):
        return validate_events(events)
    rows = [astuple(e) for e in events]
    if not rows:
        return empty_events()
    df = pd.DataFrame(rows, columns=EVENT_COLUMNS)
    df["t"] = df["t"].astype(float)
    df["value"] = df["value"].astype(float)
    return df


def to_records(df: pd.DataFrame) -> list[MeasurementEvent]:
    return [MeasurementEvent(*row) for row in df[EVENT_COLUMNS].itertuples(index=False, name=None)]


def read_events_csv(path) -> pd.DataFrame:
    df = pd.read_csv(
        path,
        dtype={"patient_id": str, "encounter_id": str, "variable": str},
        keep_default_na=False,
        float_precision="round_trip",
    )
    if list(df.columns) != EVENTS_CSV_HEADER:
        raise DataValidationError(f"{path}: expected header {','.join(EVENTS_CSV_HEADER)}")
    df = df.rename(columns={"t_minutes": "t"})
    try:
        df["t"] = df["t"].astype(float)
        df["value"] = df["value"].astype(float)
    except ValueError as exc:
        raise DataValidationError(f"{path}: non-numeric time or value ({exc})") from None
    return validate_events(df)


def write_events_csv(df: pd.DataFrame, path) -> None:
    out = df[EVENT_COLUMNS].rename(columns={"t": "t_minutes"})
    out.to_csv(path, index=False, lineterminator="\n")


def read_labels_csv(path) -> dict[str, bool]:
    df = pd.read_csv(path, dtype={"encounter_id": str}, keep_default_na=False)
    if list(df.columns) != LABELS_CSV_HEADER:
        raise DataValidationError(f"{path}: expected header {','.join(LABELS_CSV_HEADER)}")
    labels = {}
    for enc, flag in zip(df["encounter_id"], df["survived"].astype(str)):
        if flag not in ("0", "1"):
            raise DataValidationError(f"{path}: survived must be 0 or 1, got {flag!r} for {enc}")
        if enc in labels:
            raise DataValidationError(f"{path}: duplicate encounter {enc}")
        labels[enc] = flag == "1"
    return labels


def write_labels_csv(labels: dict[str, bool], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(LABELS_CSV_HEADER) + "\n")
        for enc, survived in labels.items():
            fh.write(f"{enc},{int(bool(survived))}\n")


def iter_encounters(df: pd.DataFrame) -> Iterable[tuple[str, pd.DataFrame]]:
    """Yield (encounter_id, events) in first-appearance order."""
    for enc, group in df.groupby("encounter_id", sort=False):
        yield enc, group
