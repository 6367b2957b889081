"""Normalization, imputation onto event and regular grids, and the patient split.

All imputation assumes values were normalized first, so a zero fill for a
physiologic or lab row is a fill with the training-set mean.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .catalog import VariableCatalog
from .errors import DataValidationError, EmptyWindowError
from .events import MeasurementEvent, as_frame  # noqa: F401  (re-export)

NORM_CSV_HEADER = ["variable", "mean", "std", "binarized"]


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormStats:
    variables: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    binarized: np.ndarray

    def __post_init__(self):
        n = len(self.variables)
        for name in ("mean", "std", "binarized"):
            if len(getattr(self, name)) != n:
                raise DataValidationError(f"NormStats.{name} has wrong length")
        if np.any(self.std <= 0):
            raise DataValidationError("NormStats.std must be positive")

    def index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.variables)}

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(NORM_CSV_HEADER) + "\n")
            for v, m, s, b in zip(self.variables, self.mean, self.std, self.binarized):
                fh.write(f"{v},{float(m)!r},{float(s)!r},{int(b)}\n")

    @classmethod
    def from_csv(cls, path) -> "NormStats":
        df = pd.read_csv(path, dtype={"variable": str}, keep_default_na=False, float_precision="round_trip")
        if list(df.columns) != NORM_CSV_HEADER:
            raise DataValidationError(f"{path}: expected header {','.join(NORM_CSV_HEADER)}")
        return cls(
            tuple(df["variable"]),
            df["mean"].to_numpy(dtype=float),
            df["std"].to_numpy(dtype=float),
            df["binarized"].to_numpy(dtype=int).astype(bool),
        )


def fit_norm_stats(train_events, catalog: VariableCatalog) -> NormStats:
    """Per-variable mean and population std over the observed training values.

    Drugs and interventions are binarized and keep (0, 1). Variables never
    observed in training, or constant ones, get std 1.
    """
    df = as_frame(train_events)
    unknown = set(df["variable"].unique()) - set(catalog.canonical)
    if unknown:
        raise DataValidationError(f"non-canonical variables in training events: {sorted(unknown)[:5]}")
    n = len(catalog)
    mean = np.zeros(n)
    std = np.ones(n)
    binarized = catalog.binarized_mask()
    grouped = {v: g.to_numpy(dtype=float) for v, g in df.groupby("variable", sort=False)["value"]}
    for i, name in enumerate(catalog.canonical):
        vals = grouped.get(name)
        if binarized[i] or vals is None or len(vals) == 0:
            continue
        # sort first so the fold does not depend on event order
        vals = np.sort(vals)
        m = math.fsum(vals) / len(vals)
        s = math.sqrt(math.fsum((vals - m) ** 2) / len(vals))
        mean[i] = m
        std[i] = s if s > 0 else 1.0
    return NormStats(tuple(catalog.canonical), mean, std, binarized)


def apply_norm(events, stats: NormStats) -> pd.DataFrame:
    df = as_frame(events)
    idx = stats.index()
    unknown = set(df["variable"].unique()) - idx.keys()
    if unknown:
        raise DataValidationError(f"variables without normalization stats: {sorted(unknown)[:5]}")
    rows = df["variable"].map(idx).to_numpy(dtype=int)
    values = df["value"].to_numpy(dtype=float)
    binarized = stats.binarized[rows]
    out = df.copy()
    out["value"] = np.where(binarized, 1.0, (values - stats.mean[rows]) / stats.std[rows])
    return out


# ---------------------------------------------------------------------------
# event grid


@dataclass
class EncounterMatrix:
    """Variables x measurement-times matrix of one encounter.

    Columns are the distinct times at which anything was measured; ``values``
    holds actual and imputed entries, ``observed_mask`` flags the actual ones.
    """

    encounter_id: str
    patient_id: str
    row_vars: tuple[str, ...]
    times: np.ndarray
    values: np.ndarray
    observed_mask: np.ndarray
    survived: bool
    binarized: np.ndarray | None = None  # per-row flag, set from the catalog

    def __post_init__(self):
        if self.binarized is not None:
            self.binarized = np.asarray(self.binarized, dtype=bool)
            if self.binarized.shape != (len(self.row_vars),):
                raise DataValidationError(f"encounter {self.encounter_id}: binarized flags do not match rows")
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.observed_mask = np.asarray(self.observed_mask, dtype=bool)
        shape = (len(self.row_vars), len(self.times))
        if self.values.shape != shape or self.observed_mask.shape != shape:
            raise DataValidationError(
                f"encounter {self.encounter_id}: matrix shape {self.values.shape} != {shape}"
            )
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise DataValidationError(f"encounter {self.encounter_id}: times not strictly increasing")

    @property
    def n_cols(self) -> int:
        return len(self.times)

    @property
    def died(self) -> bool:
        return not self.survived

    def columns_until(self, minutes: float) -> int:
        """Number of columns with time <= minutes."""
        return int(np.searchsorted(self.times, minutes, side="right"))


def _forward_fill(obs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    n_rows, n_cols = obs.shape
    last = np.where(mask, np.arange(n_cols)[None, :], -1)
    last = np.maximum.accumulate(last, axis=1)
    filled = np.take_along_axis(obs, np.maximum(last, 0), axis=1)
    return np.where(last >= 0, filled, 0.0)


def build_event_grid(
    events,
    catalog: VariableCatalog,
    survived: bool,
    encounter_id: str | None = None,
    patient_id: str | None = None,
) -> EncounterMatrix:
    """Lay one encounter's normalized events on the grid of its measurement times.

    Imputation: drugs/interventions are 0 when not recorded; physiologic and
    lab rows carry their last reading forward and are 0 before the first one
    (and everywhere when never observed). Duplicate (variable, time) pairs
    resolve to the last one in input order.
    """
    df = as_frame(events)
    if len(df) == 0:
        raise DataValidationError("an encounter without measurements has no columns")
    encs = df["encounter_id"].unique()
    if len(encs) != 1:
        raise DataValidationError(f"events span {len(encs)} encounters")
    if encounter_id is None:
        encounter_id = str(encs[0])
    if patient_id is None:
        patient_id = str(df["patient_id"].iloc[0])
    row_index = catalog.row_index
    unknown = set(df["variable"].unique()) - row_index.keys()
    if unknown:
        raise DataValidationError(f"encounter {encounter_id}: non-canonical variables {sorted(unknown)[:5]}")

    df = df.drop_duplicates(["variable", "t"], keep="last")
    t = df["t"].to_numpy(dtype=float)
    times = np.unique(t)
    rows = df["variable"].map(row_index).to_numpy(dtype=int)
    cols = np.searchsorted(times, t)

    obs = np.zeros((len(catalog), len(times)))
    mask = np.zeros_like(obs, dtype=bool)
    obs[rows, cols] = df["value"].to_numpy(dtype=float)
    mask[rows, cols] = True

    binarized = catalog.binarized_mask()
    values = _forward_fill(obs, mask)
    values[binarized] = np.where(mask[binarized], obs[binarized], 0.0)
    return EncounterMatrix(
        encounter_id=str(encounter_id),
        patient_id=str(patient_id),
        row_vars=tuple(catalog.canonical),
        times=times,
        values=values,
        observed_mask=mask,
        survived=bool(survived),
        binarized=binarized,
    )


# ---------------------------------------------------------------------------
# regular-grid snapshots


@dataclass
class PatientSnapshot:
    row_vars: tuple[str, ...]
    grid_step: float
    n_cols: int
    values: np.ndarray
    encounter_id: str = ""

    @property
    def times(self) -> np.ndarray:
        return self.grid_step * np.arange(1, self.n_cols + 1)

    @property
    def window(self) -> float:
        return self.grid_step * self.n_cols


def build_snapshot(
    matrix: EncounterMatrix,
    window_minutes: float = 720.0,
    step_minutes: float = 5.0,
    binarized: Sequence[bool] | None = None,
) -> PatientSnapshot:
    """Resample an event grid onto ``step, 2*step, ..., window`` minutes.

    Continuous rows take the forward-filled value as of each grid time. A
    binarized row is 1 in a cell when it was recorded in ``(g - step, g]``
    (administrations at t=0 count toward the first cell).
    """
    if step_minutes <= 0 or window_minutes <= 0:
        raise DataValidationError("window and step must be positive")
    ratio = window_minutes / step_minutes
    n_cols = int(round(ratio))
    if abs(ratio - n_cols) > 1e-9:
        raise DataValidationError(f"window {window_minutes} is not divisible by step {step_minutes}")
    if matrix.n_cols == 0 or matrix.times[0] > window_minutes:
        raise EmptyWindowError(f"encounter {matrix.encounter_id}: no measurement before {window_minutes} min")
    if binarized is None:
        binarized = matrix.binarized if matrix.binarized is not None else np.zeros(len(matrix.row_vars), bool)
    binarized = np.asarray(binarized, dtype=bool)
    if binarized.shape != (len(matrix.row_vars),):
        raise DataValidationError("binarized flags do not match the matrix rows")

    grid = step_minutes * np.arange(1, n_cols + 1)
    last = np.searchsorted(matrix.times, grid, side="right") - 1
    out = np.where(last[None, :] >= 0, matrix.values[:, np.maximum(last, 0)], 0.0)

    bins = np.maximum(np.ceil(matrix.times / step_minutes).astype(int) - 1, 0)
    in_window = matrix.times <= window_minutes
    for r in np.flatnonzero(binarized):
        row = np.zeros(n_cols)
        hit = matrix.observed_mask[r] & in_window
        np.maximum.at(row, bins[hit], matrix.values[r, hit])
        out[r] = row
    return PatientSnapshot(matrix.row_vars, float(step_minutes), n_cols, out, matrix.encounter_id)


# ---------------------------------------------------------------------------
# patient-level split


@dataclass(frozen=True)
class SplitAssignment:
    sides: Mapping[str, str]  # patient_id -> "train" | "holdout"
    seed: int
    train_fraction: float

    def patients(self, side: str) -> list[str]:
        return [p for p, s in self.sides.items() if s == side]

    def side_of(self, patient_id: str) -> str:
        return self.sides[patient_id]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("patient_id,side\n")
            for p in sorted(self.sides):
                fh.write(f"{p},{self.sides[p]}\n")

    @classmethod
    def from_csv(cls, path, seed: int = -1, train_fraction: float = float("nan")) -> "SplitAssignment":
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
        if list(df.columns) != ["patient_id", "side"]:
            raise DataValidationError(f"{path}: expected header patient_id,side")
        bad = set(df["side"]) - {"train", "holdout"}
        if bad:
            raise DataValidationError(f"{path}: unknown sides {sorted(bad)}")
        return cls(dict(zip(df["patient_id"], df["side"])), seed, train_fraction)


def n_train(n_patients: int, train_fraction: float) -> int:
    """round(fraction * N) with halves rounded up."""
    return int(math.floor(train_fraction * n_patients + 0.5))


def split_patients(patient_ids: Iterable[str], train_fraction: float = 0.75, seed: int = 0) -> SplitAssignment:
    """Seeded shuffle of the sorted patient ids; the first round(f*N) train."""
    if not 0.0 < train_fraction < 1.0:
        raise DataValidationError(f"train fraction must lie in (0, 1), got {train_fraction}")
    ids = sorted(set(str(p) for p in patient_ids))
    if not ids:
        raise DataValidationError("no patients to split")
    order = np.random.default_rng(seed).permutation(len(ids))
    k = n_train(len(ids), train_fraction)
    sides = {}
    for rank, i in enumerate(order):
        sides[ids[i]] = "train" if rank < k else "holdout"
    return SplitAssignment(dict(sorted(sides.items())), int(seed), float(train_fraction))


# ---------------------------------------------------------------------------
# matrix export


def _write_grid(path, row_vars, times, body, fmt) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable"] + [repr(float(t)) for t in times])
        for name, row in zip(row_vars, body):
            w.writerow([name] + [fmt(x) for x in row])


def write_matrix_csv(matrix: EncounterMatrix, path, mask_path=None) -> None:
    _write_grid(path, matrix.row_vars, matrix.times, matrix.values, lambda x: repr(float(x)))
    if mask_path is not None:
        _write_grid(mask_path, matrix.row_vars, matrix.times, matrix.observed_mask, lambda x: str(int(x)))


def write_snapshot_csv(snapshot: PatientSnapshot, path) -> None:
    _write_grid(path, snapshot.row_vars, snapshot.times, snapshot.values, lambda x: repr(float(x)))


def _read_grid(path) -> tuple[tuple[str, ...], np.ndarray, list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "variable":
        raise DataValidationError(f"{path}: not a matrix file")
    times = np.array([float(x) for x in rows[0][1:]])
    names = tuple(r[0] for r in rows[1:])
    return names, times, [r[1:] for r in rows[1:]]


def read_matrix_csv(
    path, mask_path, encounter_id: str, patient_id: str, survived: bool, binarized=None
) -> EncounterMatrix:
    names, times, body = _read_grid(path)
    values = np.array(body, dtype=float).reshape(len(names), len(times))
    m_names, m_times, m_body = _read_grid(mask_path)
    if m_names != names or not np.array_equal(m_times, times):
        raise DataValidationError(f"{mask_path}: mask does not match {path}")
    mask = np.array(m_body, dtype=int).reshape(len(names), len(times)).astype(bool)
    return EncounterMatrix(encounter_id, patient_id, names, times, values, mask, survived, binarized)
