import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import pair_count_auc

from icudyn.errors import DataValidationError, SingleClassError
from icudyn.evaluation import (
    METRICS_HEADER,
    ROC_HEADER,
    SWEEP_HEADER,
    auc_pvalue,
    eligible,
    observation_sweep,
    roc_auc,
    write_metrics_csv,
    write_roc_csv,
)
from icudyn.model import init_params, predict_at
from icudyn.preprocess import EncounterMatrix


def test_perfect_and_inverted_rankings():
    assert roc_auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]).auc == 1.0
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]).auc == 0.0


def test_all_tied_scores_give_one_half():
    r = roc_auc([0.5] * 6, [1, 0, 1, 0, 0, 0])
    assert r.auc == 0.5
    assert r.points == [(0.0, 0.0), (1.0, 1.0)]


def test_random_instances_match_pair_counting():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(2, 80))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = rng.integers(0, 12, n) / 4.0  # plenty of ties
        assert abs(roc_auc(s, y).auc - pair_count_auc(s, y)) <= 1e-12


labeled = st.integers(3, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(-20, 20), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda y: 0 < sum(y) < len(y)),
    )
)


@settings(max_examples=80, deadline=None)
@given(labeled)
def test_invariant_under_monotone_transform(case):
    s, y = np.array(case[0], float), case[1]
    assert roc_auc(np.exp(s / 5.0) * 3 - 1, y).auc == roc_auc(s, y).auc


@settings(max_examples=80, deadline=None)
@given(labeled)
def test_negated_scores_complement(case):
    s, y = np.array(case[0], float), case[1]
    assert roc_auc(s, y).auc + roc_auc(-s, y).auc == 1.0


@settings(max_examples=80, deadline=None)
@given(labeled)
def test_curve_shape_and_area(case):
    s, y = np.array(case[0], float), case[1]
    r = roc_auc(s, y)
    assert r.points[0] == (0.0, 0.0) and r.points[-1] == (1.0, 1.0)
    assert np.all(np.diff(r.fpr) >= 0) and np.all(np.diff(r.tpr) >= 0)
    trapezoid = float(np.sum(np.diff(r.fpr) * (r.tpr[1:] + r.tpr[:-1]) / 2))
    assert abs(trapezoid - r.auc) <= 1e-12
    assert abs(r.auc - pair_count_auc(s, y)) <= 1e-12


def test_bad_inputs():
    with pytest.raises(SingleClassError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(DataValidationError):
        roc_auc([0.1, 0.2, 0.3], [1, 0])
    with pytest.raises(DataValidationError):
        roc_auc([0.1, np.nan], [1, 0])
    with pytest.raises(DataValidationError):
        roc_auc([0.1, 0.2], [1, 2])


def test_pvalue_identical_scores_is_one():
    rng = np.random.default_rng(0)
    s = rng.random(30)
    y = np.arange(30) % 3 == 0
    assert auc_pvalue(s, s, y.astype(int), n_boot=500, seed=1) == 1.0


def test_pvalue_perfect_against_inverted():
    y = np.r_[np.ones(20), np.zeros(20)].astype(int)
    good = np.linspace(1, 0, 40)
    assert auc_pvalue(good, -good, y, n_boot=2000, seed=0) <= 0.01


def test_pvalue_is_deterministic_and_bounded():
    rng = np.random.default_rng(4)
    y = (rng.random(60) < 0.3).astype(int)
    y[:2] = [0, 1]
    a, b = rng.random(60) + 0.3 * y, rng.random(60)
    p1 = auc_pvalue(a, b, y, n_boot=300, seed=9)
    assert p1 == auc_pvalue(a, b, y, n_boot=300, seed=9)
    assert 0.0 <= p1 <= 1.0


def test_pvalue_length_mismatch():
    with pytest.raises(DataValidationError):
        auc_pvalue([0.1, 0.2, 0.3], [0.1, 0.2], [0, 1, 0])


# -- sweep ---------------------------------------------------------------------


def _matrices(n=24, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        last = 600 + 60 * int(rng.integers(0, 8))  # some end before 12 h
        times = np.r_[0.0, np.sort(rng.choice(np.arange(5, last, 5), 30, replace=False)), float(last)]
        times = np.unique(times)
        vals = rng.normal(size=(3, len(times)))
        out.append(EncounterMatrix(f"e{i:02d}", f"p{i}", ("a", "b", "c"), times, vals,
                                   np.ones(vals.shape, bool), bool(i % 3)))
    return out


PARAMS = init_params(4, (5, 5), seed=2)


def test_sweep_keeps_one_population():
    mats = _matrices()
    res = observation_sweep(PARAMS, mats, [3, 6, 9, 12])
    assert res.hours == [3.0, 6.0, 9.0, 12.0]
    assert len({n for _, _, n in res.rows}) == 1
    assert res.rows[0][2] + res.n_excluded == len(mats)
    assert res.n_excluded > 0


def test_single_hour_sweep_matches_direct_evaluation():
    mats = _matrices(seed=3)
    res = observation_sweep(PARAMS, mats, [12], delta_t=6.0)
    kept = eligible(mats, 12)
    direct = roc_auc([predict_at(m, 720, 6.0, PARAMS) for m in kept], [0 if m.survived else 1 for m in kept])
    assert res.rows == [(12.0, direct.auc, len(kept))]


def test_sweep_rejects_bad_requests():
    with pytest.raises(DataValidationError):
        observation_sweep(PARAMS, _matrices(), [6, 3])
    with pytest.raises(DataValidationError):
        observation_sweep(PARAMS, _matrices(), [100])


def _header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def test_csv_outputs(tmp_path):
    r = roc_auc([0.2, 0.9, 0.4], [0, 1, 0])
    write_metrics_csv([{"model": "rnn", "observe_hours": 12, "delta_t_hours": 12, "auc": r.auc, "n": 3,
                        "p_vs_baseline": None}], tmp_path / "m.csv")
    write_roc_csv({"rnn": r}, tmp_path / "roc.csv")
    observation_sweep(PARAMS, _matrices(), [1, 12]).to_csv(tmp_path / "s.csv")
    assert _header(tmp_path / "m.csv") == METRICS_HEADER
    assert _header(tmp_path / "roc.csv") == ROC_HEADER
    assert _header(tmp_path / "s.csv") == SWEEP_HEADER
    with open(tmp_path / "m.csv", newline="") as fh:
        row = list(csv.DictReader(fh))[0]
    assert row["auc"] == "1.0" and row["p_vs_baseline"] == ""
    with open(tmp_path / "s.csv") as fh:
        assert len(fh.read().splitlines()) == 3
