"""Discrimination metrics: ROC/AUC, paired-bootstrap AUC comparison, and
AUC as a function of observation time."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataValidationError, SingleClassError
from .model import ModelParams, predict_many
from .preprocess import EncounterMatrix

METRICS_HEADER = ["model", "observe_hours", "delta_t_hours", "auc", "n", "p_vs_baseline"]
ROC_HEADER = ["model", "threshold", "fpr", "tpr"]
SWEEP_HEADER = ["observe_hours", "auc", "n_encounters"]


@dataclass
class RocResult:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # score at which each point (after the origin) is reached
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise DataValidationError("scores and labels must be 1-D and of equal length")
    if not np.all((y == 0) | (y == 1)):
        raise DataValidationError("labels must be 0 or 1")
    y = y.astype(int)
    if y.min() == y.max():
        raise SingleClassError("ROC needs at least one positive and one negative")
    if not np.all(np.isfinite(s)):
        raise DataValidationError("scores must be finite")
    return s, y


def roc_auc(scores, labels) -> RocResult:
    """ROC curve over distinct score thresholds and its trapezoidal area.

    Tied scores move the curve diagonally, which credits tied pairs 1/2, so
    the area equals the Mann-Whitney statistic.
    """
    s, y = _check_binary(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.r_[0, np.cumsum(y)[last_of_run]]
    fp = np.r_[0, np.cumsum(1 - y)[last_of_run]]
    P, N = int(tp[-1]), int(fp[-1])
    # integer trapezoid sum, one rounding at the end
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return RocResult(fp / N, tp / P, s[last_of_run], twice_area / (2 * P * N))


def _mann_whitney_auc(scores: np.ndarray, n_pos: int) -> np.ndarray:
    """Row-wise AUC when the first ``n_pos`` columns are the positives."""
    ranks = rankdata(scores, axis=-1)
    n_neg = scores.shape[-1] - n_pos
    return (ranks[..., :n_pos].sum(axis=-1) - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def auc_pvalue(scores_a, scores_b, labels, n_boot: int = 2000, seed: int = 0) -> float:
    """Two-sided paired-bootstrap p-value for AUC(a) == AUC(b).

    Positives and negatives are resampled separately (same indices for both
    models) so every replicate keeps both classes.
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape:
        raise DataValidationError("paired scores must have equal length")
    a, y = _check_binary(a, labels)
    b, _ = _check_binary(b, labels)
    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    rng = np.random.default_rng(seed)
    diffs = np.empty(n_boot)
    chunk = 250
    for start in range(0, n_boot, chunk):
        k = min(chunk, n_boot - start)
        idx = np.hstack([rng.choice(pos, (k, len(pos))), rng.choice(neg, (k, len(neg)))])
        diffs[start : start + k] = _mann_whitney_auc(a[idx], len(pos)) - _mann_whitney_auc(b[idx], len(pos))
    below = (np.count_nonzero(diffs <= 0) + 1) / (n_boot + 1)
    above = (np.count_nonzero(diffs >= 0) + 1) / (n_boot + 1)
    return float(min(1.0, 2.0 * min(below, above)))


@dataclass
class SweepResult:
    rows: list[tuple[float, float, int]] = field(default_factory=list)  # (observe_hours, auc, n)
    n_excluded: int = 0
    delta_t: float = float("nan")

    @property
    def hours(self) -> list[float]:
        return [r[0] for r in self.rows]

    @property
    def aucs(self) -> list[float]:
        return [r[1] for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_HEADER)
            for h, auc, n in self.rows:
                w.writerow([repr(float(h)), repr(float(auc)), int(n)])


def eligible(matrices: Sequence[EncounterMatrix], min_hours: float) -> list[EncounterMatrix]:
    """Encounters whose data extend to at least ``min_hours``."""
    return [m for m in matrices if m.n_cols and m.times[-1] >= min_hours * 60.0]


def observation_sweep(
    params: ModelParams,
    matrices: Sequence[EncounterMatrix],
    hours: Sequence[float],
    delta_t: float = 12.0,
) -> SweepResult:
    """Holdout AUC of the recurrent model after each observation length.

    Only encounters lasting at least ``max(hours)`` enter, so every row
    scores the same population.
    """
    hours = [float(h) for h in hours]
    if not hours or any(b <= a for a, b in zip(hours, hours[1:])):
        raise DataValidationError("observation hours must be non-empty and strictly increasing")
    kept = eligible(matrices, hours[-1])
    if not kept:
        raise DataValidationError(f"no encounter has {hours[-1]} h of data")
    labels = np.array([0 if m.survived else 1 for m in kept])
    risks = predict_many(kept, [h * 60.0 for h in hours], delta_t, params)
    rows = [(h, roc_auc(risks[:, j], labels).auc, len(kept)) for j, h in enumerate(hours)]
    return SweepResult(rows, len(matrices) - len(kept), float(delta_t))


def write_metrics_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            p = r.get("p_vs_baseline")
            w.writerow(
                [
                    r["model"],
                    repr(float(r["observe_hours"])),
                    repr(float(r["delta_t_hours"])),
                    repr(float(r["auc"])),
                    int(r["n"]),
                    "" if p is None else repr(float(p)),
                ]
            )


def write_roc_csv(curves: dict[str, RocResult], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROC_HEADER)
        for name, roc in curves.items():
            thresholds = np.r_[np.inf, roc.thresholds]
            for thr, f, t in zip(thresholds, roc.fpr, roc.tpr):
                w.writerow([name, repr(float(thr)), repr(float(f)), repr(float(t))])
