import io
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_grid, brute_force_snapshot

from icudyn.catalog import parse_catalog
from icudyn.errors import DataValidationError, EmptyWindowError
from icudyn.events import MeasurementEvent, as_frame
from icudyn.pipeline import prepare, read_prepared, write_prepared
from icudyn.preprocess import (
    NormStats,
    SplitAssignment,
    apply_norm,
    build_event_grid,
    build_snapshot,
    fit_norm_stats,
    n_train,
    read_matrix_csv,
    split_patients,
    write_matrix_csv,
)

CAT = parse_catalog(
    io.StringIO(
        "raw_name,canonical_name,kind,unit_scale,unit_offset\n"
        "hr,heart_rate,physiologic,,\n"
        "lac,lactate,lab,,\n"
        "epi,epinephrine,drug,,\n"
        "xr,chest_xray,intervention,,\n"
    )
)
ROWS = CAT.canonical
BIN = CAT.binarized_mask()


def events(rows, enc="e1", pat="p1"):
    return as_frame([MeasurementEvent(pat, enc, v, float(t), float(x)) for v, t, x in rows])


# -- normalization -------------------------------------------------------------


def test_population_std_of_one_two_three():
    stats = fit_norm_stats(events([("heart_rate", 0, 1), ("heart_rate", 1, 2), ("heart_rate", 2, 3)]), CAT)
    i = stats.index()["heart_rate"]
    assert stats.mean[i] == 2.0
    assert stats.std[i] == pytest.approx(math.sqrt(2 / 3), rel=1e-15)


def test_drug_is_binarized_with_unit_stats():
    stats = fit_norm_stats(events([("epinephrine", 0, 40), ("epinephrine", 3, 10)]), CAT)
    i = stats.index()["epinephrine"]
    assert stats.binarized[i] and stats.mean[i] == 0 and stats.std[i] == 1


def test_unobserved_and_constant_variables_get_unit_std():
    stats = fit_norm_stats(events([("lactate", 0, 4.0), ("lactate", 5, 4.0)]), CAT)
    idx = stats.index()
    assert (stats.mean[idx["heart_rate"]], stats.std[idx["heart_rate"]]) == (0.0, 1.0)
    assert (stats.mean[idx["lactate"]], stats.std[idx["lactate"]]) == (4.0, 1.0)


def test_binarized_flags_follow_kinds():
    stats = fit_norm_stats(events([("heart_rate", 0, 1)]), CAT)
    assert list(stats.binarized) == [False, False, True, True]


def test_apply_norm_examples():
    stats = fit_norm_stats(events([("heart_rate", 0, 1), ("heart_rate", 1, 2), ("heart_rate", 2, 3)]), CAT)
    out = apply_norm(events([("heart_rate", 0, 3), ("heart_rate", 1, 2), ("epinephrine", 1, 40)]), stats)
    assert out["value"].iloc[0] == pytest.approx(1.2247, abs=1e-4)
    assert out["value"].iloc[1] == 0.0
    assert out["value"].iloc[2] == 1.0


def test_apply_norm_rejects_unknown_variable():
    stats = fit_norm_stats(events([("heart_rate", 0, 1)]), CAT)
    with pytest.raises(DataValidationError, match="glucose"):
        apply_norm(events([("glucose", 0, 5)]), stats)


def test_norm_stats_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    rows = [("heart_rate", t, x) for t, x in enumerate(rng.normal(90, 20, 50))]
    stats = fit_norm_stats(events(rows), CAT)
    stats.to_csv(tmp_path / "s.csv")
    back = NormStats.from_csv(tmp_path / "s.csv")
    assert back.variables == stats.variables
    assert np.array_equal(back.mean, stats.mean) and np.array_equal(back.std, stats.std)
    assert np.array_equal(back.binarized, stats.binarized)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "variable,mean,std,binarized"


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=2, max_size=60), st.randoms(use_true_random=False))
def test_fit_is_independent_of_event_order(values, rnd):
    rows = [("lactate", i, v) for i, v in enumerate(values)]
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    a, b = fit_norm_stats(events(rows), CAT), fit_norm_stats(events(shuffled), CAT)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)


# -- event grid ----------------------------------------------------------------


def test_forward_fill_example():
    m = build_event_grid(
        events([("heart_rate", 0, 1.5), ("lactate", 10, 0.2), ("heart_rate", 30, -0.5)]), CAT, survived=True
    )
    assert list(m.times) == [0.0, 10.0, 30.0]
    assert list(m.values[ROWS.index("heart_rate")]) == [1.5, 1.5, -0.5]
    assert list(m.observed_mask[ROWS.index("heart_rate")]) == [True, False, True]


def test_never_given_drug_row_is_zero():
    m = build_event_grid(events([("heart_rate", 0, 1.0), ("heart_rate", 60, 2.0)]), CAT, survived=False)
    assert not m.values[ROWS.index("epinephrine")].any()
    assert not m.values[ROWS.index("lactate")].any()
    assert m.died


def test_single_event_gives_one_column():
    m = build_event_grid(events([("lactate", 7, 0.3)]), CAT, survived=True)
    assert m.values.shape == (len(ROWS), 1)
    assert m.values[ROWS.index("lactate"), 0] == 0.3 and m.observed_mask[ROWS.index("lactate"), 0]
    assert m.observed_mask.sum() == 1


def test_empty_encounter_rejected():
    with pytest.raises(DataValidationError):
        build_event_grid(events([]), CAT, survived=True)


def test_duplicates_last_one_wins():
    m = build_event_grid(events([("heart_rate", 5, 1.0), ("heart_rate", 5, 2.0)]), CAT, survived=True)
    assert m.values[ROWS.index("heart_rate"), 0] == 2.0


def test_columns_until():
    m = build_event_grid(events([("heart_rate", t, 0.0) for t in (0, 300, 700, 800)]), CAT, survived=True)
    assert m.columns_until(720) == 3
    assert m.columns_until(-1) == 0


sparse_rows = st.lists(
    st.tuples(st.sampled_from(ROWS), st.integers(0, 900).map(float), st.floats(-3, 3, allow_nan=False)),
    min_size=1,
    max_size=30,
)


@settings(max_examples=150, deadline=None)
@given(sparse_rows)
def test_event_grid_matches_brute_force(rows):
    m = build_event_grid(events(rows), CAT, survived=True)
    times, values, mask = brute_force_grid(rows, ROWS, BIN)
    assert list(m.times) == times
    assert m.values.tolist() == values
    assert m.observed_mask.tolist() == mask
    # every column holds at least one actual measurement
    assert m.observed_mask.any(axis=0).all()


# -- snapshots -------------------------------------------------------------------


def test_default_snapshot_geometry():
    m = build_event_grid(events([("heart_rate", 0, 1.0)]), CAT, survived=True)
    s = build_snapshot(m)
    assert s.n_cols == 144 and s.values.shape == (len(ROWS), 144)
    assert np.all(np.diff(s.times) == 5.0) and s.times[0] == 5.0 and s.times[-1] == 720.0
    assert s.window == 720.0


def test_constant_row_gives_constant_snapshot():
    m = build_event_grid(events([("heart_rate", t, 0.7) for t in (0, 50, 400)]), CAT, survived=True)
    assert np.all(build_snapshot(m).values[ROWS.index("heart_rate")] == 0.7)


def test_row_first_seen_at_100():
    m = build_event_grid(events([("lactate", 100, 2.0), ("heart_rate", 0, 0.0)]), CAT, survived=True)
    s = build_snapshot(m)
    row = s.values[ROWS.index("lactate")]
    assert np.all(row[s.times < 100] == 0.0) and np.all(row[s.times >= 100] == 2.0)


def test_snapshot_errors():
    m = build_event_grid(events([("heart_rate", 800, 0.0)]), CAT, survived=True)
    with pytest.raises(EmptyWindowError):
        build_snapshot(m)
    with pytest.raises(DataValidationError, match="divisible"):
        build_snapshot(build_event_grid(events([("heart_rate", 0, 0.0)]), CAT, True), 720, 7)


@settings(max_examples=100, deadline=None)
@given(sparse_rows)
def test_snapshot_matches_brute_force(rows):
    normed = [(v, t, 1.0 if BIN[ROWS.index(v)] else x) for v, t, x in rows]
    m = build_event_grid(events(normed), CAT, survived=True)
    if m.times[0] > 720:
        return
    assert build_snapshot(m).values.tolist() == brute_force_snapshot(normed, ROWS, BIN)


@settings(max_examples=80, deadline=None)
@given(sparse_rows, st.data())
def test_snapshot_invariant_to_duplicated_events(rows, data):
    k = data.draw(st.integers(0, len(rows) - 1))
    with_dup = rows[: k + 1] + [rows[k]] + rows[k + 1 :]
    a = build_event_grid(events(rows), CAT, True)
    b = build_event_grid(events(with_dup), CAT, True)
    if a.times[0] > 720:
        return
    assert np.array_equal(build_snapshot(a).values, build_snapshot(b).values)


# -- split ---------------------------------------------------------------------


def test_four_patients_three_train():
    s = split_patients(["a", "b", "c", "d"], 0.75, seed=1)
    assert len(s.patients("train")) == 3 and len(s.patients("holdout")) == 1


def test_split_is_deterministic_and_validates_fraction():
    ids = [f"p{i}" for i in range(50)]
    assert split_patients(ids, 0.75, 9) == split_patients(list(reversed(ids)), 0.75, 9)
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(DataValidationError):
            split_patients(ids, bad, 0)


def test_n_train_rounds_halves_up():
    assert [n_train(n, 0.75) for n in (1, 2, 4, 6, 10)] == [1, 2, 3, 5, 8]


def test_split_csv_roundtrip(tmp_path):
    s = split_patients([f"p{i}" for i in range(7)], 0.75, 3)
    s.to_csv(tmp_path / "split.csv")
    assert SplitAssignment.from_csv(tmp_path / "split.csv").sides == s.sides


def test_patient_encounters_share_a_side():
    rows = []
    for p in range(20):
        for e in range(3):
            rows.append(MeasurementEvent(f"p{p}", f"p{p}e{e}", "heart_rate", 0.0, float(p)))
    labels = {r.encounter_id: True for r in rows}
    data = prepare(as_frame(rows), labels, CAT.with_self_aliases(), seed=4)
    sides = {}
    for side, mats in (("train", data.train), ("holdout", data.holdout)):
        for m in mats:
            sides.setdefault(m.patient_id, set()).add(side)
    assert all(len(v) == 1 for v in sides.values())
    assert sum(1 for m in data.train) == 3 * len(data.split.patients("train"))


# -- pipeline and export -------------------------------------------------------


def test_prepare_fits_stats_on_train_only():
    cat = CAT.with_self_aliases()
    rows = [MeasurementEvent(f"p{p}", f"e{p}", "heart_rate", 0.0, float(p)) for p in range(8)]
    labels = {f"e{p}": p % 2 == 0 for p in range(8)}
    data = prepare(as_frame(rows), labels, cat, seed=0)
    train_vals = [float(m.patient_id[1:]) for m in data.train]
    i = data.stats.index()["heart_rate"]
    assert data.stats.mean[i] == pytest.approx(np.mean(train_vals), abs=1e-12)


def test_unlabeled_encounters_excluded():
    rows = [MeasurementEvent("p1", "e1", "hr", 0.0, 1.0), MeasurementEvent("p2", "e2", "hr", 0.0, 2.0)]
    data = prepare(as_frame(rows), {"e1": True}, CAT, seed=0)
    assert data.n_unlabeled == 1
    assert [m.encounter_id for m in data.train + data.holdout] == ["e1"]


def test_matrix_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    rows = [(rng.choice(ROWS), float(t), float(rng.normal())) for t in rng.integers(0, 500, 40)]
    m = build_event_grid(events(rows), CAT, survived=False, patient_id="p1")
    write_matrix_csv(m, tmp_path / "m.csv", tmp_path / "m.mask.csv")
    back = read_matrix_csv(tmp_path / "m.csv", tmp_path / "m.mask.csv", m.encounter_id, "p1", False)
    assert np.array_equal(back.values, m.values) and np.array_equal(back.times, m.times)
    assert np.array_equal(back.observed_mask, m.observed_mask) and back.row_vars == m.row_vars
    header = (tmp_path / "m.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "variable" and len(header) == m.n_cols + 1


def test_prepared_directory_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    rows = []
    for p in range(12):
        for t in range(0, 800, 40):
            rows.append(MeasurementEvent(f"p{p}", f"e{p}", str(rng.choice(["hr", "lac", "epi"])), float(t), float(rng.normal())))
    labels = {f"e{p}": bool(p % 3) for p in range(12)}
    data = prepare(as_frame(rows), labels, CAT, seed=5)
    write_prepared(data, tmp_path, snapshot=True)
    back = read_prepared(tmp_path, "train")
    assert [m.encounter_id for m in back] == [m.encounter_id for m in data.train]
    for a, b in zip(back, data.train):
        assert np.array_equal(a.values, b.values) and a.survived == b.survived
        assert np.array_equal(a.binarized, b.binarized)
    assert len(list((tmp_path / "snapshots" / "holdout").glob("*.csv"))) == len(data.holdout)
    index = pd.read_csv(tmp_path / "encounters.csv")
    assert len(index) == 12
