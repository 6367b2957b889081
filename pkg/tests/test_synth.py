import dataclasses
import json

import numpy as np
import pandas as pd
import pytest

from icudyn.catalog import VariableKind, load_demo_catalog
from icudyn.errors import DataValidationError, SingleClassError, UnstableDynamicsError
from icudyn.events import read_events_csv, read_labels_csv
from icudyn.synth import (
    TRUTH_HEADER,
    SynthConfig,
    expected_mortality,
    generate_cohort,
    generate_patient,
    mortality_fraction,
    oracle_auc_bound,
    resolved_base_hazard,
    write_cohort,
)

CATALOG = load_demo_catalog()
VITALS = {raw for raw, e in CATALOG.entries.items() if e.kind is VariableKind.PHYSIOLOGIC and e.canonical != "age"}


@pytest.fixture(scope="module")
def cohort():
    # about 2000 encounters at the default 5% target
    return generate_cohort(SynthConfig(n_patients=1450, seed=0), CATALOG)


def test_cohort_size(cohort):
    assert len(cohort) >= 2000


def test_mortality_near_target(cohort):
    cfg = SynthConfig(n_patients=1450, seed=0)
    analytic = expected_mortality(cfg, resolved_base_hazard(cfg))
    assert abs(analytic - 0.05) < 1e-9
    assert abs(mortality_fraction(cohort) - analytic) <= 0.03


def test_zero_hazard_everyone_survives():
    cfg = SynthConfig(n_patients=40, hazard_state_weight=0.0, hazard_deriv_weight=0.0, seed=5)
    small = generate_cohort(cfg, CATALOG)
    assert all(e.survived for e in small)
    assert all(np.all(e.truth_risk == 0) for e in small)


def test_bitwise_determinism():
    cfg = SynthConfig(n_patients=15, seed=7)
    a, b = generate_cohort(cfg, CATALOG), generate_cohort(cfg, CATALOG)
    for x, y in zip(a, b, strict=True):
        pd.testing.assert_frame_equal(x.events, y.events, check_exact=True)
        assert x.survived == y.survived and np.array_equal(x.truth_risk, y.truth_risk)


def test_patients_generate_independently():
    cfg = SynthConfig(n_patients=12, seed=3)
    whole = generate_cohort(cfg, CATALOG)
    pieces = [e for p in reversed(range(12)) for e in generate_patient(cfg, p, CATALOG)]
    pieces.sort(key=lambda e: e.encounter_id)
    for x, y in zip(whole, pieces, strict=True):
        assert x.encounter_id == y.encounter_id
        pd.testing.assert_frame_equal(x.events, y.events, check_exact=True)


def test_encounter_count_per_patient(cohort):
    counts = pd.Series([e.patient_id for e in cohort]).value_counts()
    assert counts.min() >= 1 and counts.max() <= 3


def test_truth_risk_is_a_nondecreasing_probability(cohort):
    for e in cohort[:300]:
        assert e.truth_risk[0] == 0.0
        assert np.all((e.truth_risk >= 0) & (e.truth_risk <= 1))
        assert np.all(np.diff(e.truth_risk) >= 0)


def _vitals_times(e):
    return np.unique(e.events.loc[e.events["variable"].isin(VITALS), "t"].to_numpy())


def test_sampling_respects_bounds(cohort):
    lo, hi = SynthConfig().vitals_interval_minutes
    for e in cohort[:300]:
        gaps = np.diff(_vitals_times(e))
        assert np.all(gaps >= lo - 1e-9) and np.all(gaps <= hi + 1e-9)
        assert e.events["t"].max() <= e.duration_minutes


def test_non_survivors_are_sampled_more_often(cohort):
    means = {True: [], False: []}
    for e in cohort:
        t = _vitals_times(e)
        if len(t) > 1:
            means[e.survived].append(np.diff(t).mean())
    assert np.mean(means[False]) < np.mean(means[True])


def test_oracle_perfect_for_threshold_labels(cohort):
    long = [e for e in cohort if e.duration_minutes >= 720]
    cut = np.median([e.risk_at(720) for e in long])
    relabeled = [dataclasses.replace(e, survived=bool(e.risk_at(720) <= cut)) for e in long]
    assert oracle_auc_bound(relabeled) == 1.0


def test_oracle_near_chance_for_random_labels(cohort):
    rng = np.random.default_rng(0)
    long = [e for e in cohort if e.duration_minutes >= 720]
    assert len(long) >= 500
    relabeled = [dataclasses.replace(e, survived=bool(rng.random() < 0.5)) for e in long]
    assert 0.45 <= oracle_auc_bound(relabeled) <= 0.55


def test_oracle_beats_chance_on_real_labels(cohort):
    assert oracle_auc_bound(cohort) > 0.7


def test_oracle_single_class():
    small = generate_cohort(SynthConfig(n_patients=5, hazard_state_weight=0.0, hazard_deriv_weight=0.0), CATALOG)
    with pytest.raises(SingleClassError):
        oracle_auc_bound(small)


def test_unstable_drift_names_eigenvalue():
    with pytest.raises(UnstableDynamicsError, match="0.25"):
        SynthConfig(drift=[[0.25, 0.0], [0.0, -1.0]])


def test_stiff_drift_overflows_with_eigenvalue():
    cfg = SynthConfig(n_patients=1, drift=[[-400.0, 0.0], [0.0, -1.0]], base_hazard=0.0)
    with pytest.raises(UnstableDynamicsError, match="eigenvalue"):
        generate_cohort(cfg, CATALOG)


@pytest.mark.parametrize(
    "field, value",
    [("vitals_interval_minutes", (0.0, 10.0)), ("vitals_interval_minutes", (20.0, 10.0)),
     ("duration_hours", (5.0, 1.0)), ("step_minutes", 2.0), ("encounter_count_probs", (0.5, 0.2))],
)
def test_invalid_configs(field, value):
    with pytest.raises(DataValidationError):
        SynthConfig(**{field: value})


def test_config_json_roundtrip(tmp_path):
    cfg = SynthConfig(n_patients=9, oscillator_periods_hours=(4.0, 7.0), seed=12)
    path = tmp_path / "synth.json"
    path.write_text(cfg.to_json())
    assert SynthConfig.from_json(path) == cfg
    with pytest.raises(DataValidationError, match="unknown"):
        SynthConfig.from_dict({**json.loads(cfg.to_json()), "bogus": 1})


def test_write_cohort(tmp_path):
    small = generate_cohort(SynthConfig(n_patients=6, seed=1), CATALOG)
    paths = write_cohort(small, tmp_path)
    assert paths["truth"].parent.name == "truth"
    events = read_events_csv(paths["events"])
    assert len(events) == sum(len(e.events) for e in small)
    assert set(events["variable"]) <= set(CATALOG.entries)
    assert read_labels_csv(paths["labels"]) == {e.encounter_id: e.survived for e in small}
    truth = pd.read_csv(paths["truth"])
    assert list(truth.columns) == TRUTH_HEADER
    assert len(truth) == sum(len(e.truth_t) for e in small)
