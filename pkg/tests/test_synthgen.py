import io
import json

import numpy as np
import pytest

from writeoff.spell_data import Resolution, serialize_panel
from writeoff.survival_core import km_survivor, life_table_from_arrays
from writeoff.synthgen import (
    CategoricalCovariate,
    GeneratorError,
    GeneratorSpec,
    NumericCovariate,
    simulate,
    true_survivor_sets,
    truth_to_csv,
)


def logit(p):
    return float(np.log(p / (1 - p)))


def flat_spec(**overrides):
    base = dict(n_loans=400, seed=7, baseline_logit=(logit(0.1),),
                horizon=80, calendar_months=400)
    base.update(overrides)
    return GeneratorSpec(**base)


def test_same_seed_reproduces_identical_panels():
    panel_a, _ = simulate(flat_spec())
    panel_b, _ = simulate(flat_spec())
    buf_a, buf_b = io.StringIO(), io.StringIO()
    serialize_panel(panel_a, buf_a)
    serialize_panel(panel_b, buf_b)
    assert buf_a.getvalue() == buf_b.getvalue()


def test_different_seeds_differ():
    panel_a, _ = simulate(flat_spec())
    panel_b, _ = simulate(flat_spec(seed=8))
    buf_a, buf_b = io.StringIO(), io.StringIO()
    serialize_panel(panel_a, buf_a)
    serialize_panel(panel_b, buf_b)
    assert buf_a.getvalue() != buf_b.getvalue()


def test_negligible_hazard_leaves_everything_censored():
    spec = flat_spec(baseline_logit=(-30.0,), horizon=12, n_loans=150)
    panel, truth = simulate(spec)
    frame = panel.spell_frame()
    assert np.all(frame["resolution"] == int(Resolution.CENSORED))
    assert frame["stop"].max() == 12  # early starters run to the horizon


def test_event_chronology_by_construction():
    panel, _ = simulate(flat_spec(n_loans=200))
    for start, end in panel._spell_slices():
        flags = panel.event[start:end].tolist()
        res = Resolution(int(panel.resolution[start]))
        if res == Resolution.WRITE_OFF:
            assert flags == [0] * (len(flags) - 1) + [1]
        else:
            assert not any(flags)


def test_km_on_uncensored_data_equals_survivor_fraction():
    spec = flat_spec(n_loans=800, horizon=300, calendar_months=1200)
    panel, _ = simulate(spec)
    frame = panel.spell_frame()
    assert np.all(frame["event"] == 1)  # horizon long enough: no censoring
    table = life_table_from_arrays(frame["duration"], frame["event"])
    durations = frame["duration"]
    for t in range(0, 26):
        assert km_survivor(table, t) == pytest.approx(
            float(np.mean(durations > t)), abs=1e-12)


def test_geometric_term_structure_recovery_small_scale():
    spec = flat_spec(n_loans=20_000, horizon=300, calendar_months=1200)
    panel, _ = simulate(spec)
    frame = panel.spell_frame()
    n = len(frame["duration"])
    table = life_table_from_arrays(frame["duration"], frame["event"])
    for t in range(1, 13):
        expected = 0.9 ** (t - 1) * 0.1
        se = np.sqrt(expected * (1 - expected) / n)
        observed = table.event_prob_at(t)
        assert abs(observed - expected) <= 3 * se


def test_truth_aligned_with_panel():
    spec = flat_spec(
        n_loans=300,
        covariates=(NumericCovariate("x", dist="normal"),),
        effects={"x": 0.7},
        cure_hazard=0.05,
        censor_hazard=0.02,
        recurrence_probability=0.4,
        truncation_probability=0.2,
        truncation_max_offset=5,
        horizon=48,
        calendar_months=120,
    )
    panel, truth = simulate(spec)
    frame = panel.spell_frame()
    keys = {(str(l), int(s))
            for l, s in zip(frame["loan_id"], frame["spell_num"])}
    assert keys == set(truth.spells)

    for key in list(truth.spells)[:50]:
        record = truth.spells[key]
        assert record.times[0] == record.entry + 1
        assert record.times[-1] == record.stop
        prev = np.concatenate(([1.0], record.survivor[:-1]))
        np.testing.assert_allclose(record.event_prob,
                                   prev * record.hazard, atol=1e-12)
        sel = (frame["loan_id"] == key[0]) & (frame["spell_num"] == key[1])
        i = int(np.flatnonzero(sel)[0])
        x = frame["covariates"]["x"][i]
        np.testing.assert_allclose(
            record.hazard,
            spec.true_hazard({"x": x}, record.times), atol=1e-15)


def test_truncation_and_recurrence_present():
    spec = flat_spec(
        n_loans=500, truncation_probability=0.5, truncation_max_offset=6,
        cure_hazard=0.15, recurrence_probability=0.8, horizon=36,
        calendar_months=200)
    panel, _ = simulate(spec)
    frame = panel.spell_frame()
    assert np.any(frame["entry"] > 0)
    counts = {}
    for loan in frame["loan_id"]:
        counts[loan] = counts.get(loan, 0) + 1
    assert max(counts.values()) > 1
    # truncated spells start mid-history
    truncated = frame["entry"] > 0
    first_periods = frame["entry"][truncated] + 1
    assert np.all(first_periods > 1)


def test_categorical_effects_shift_hazard():
    spec = flat_spec(
        n_loans=10,
        covariates=(CategoricalCovariate("grp", levels=("a", "b"),
                                         probs=(0.5, 0.5)),),
        effects={"grp": {"b": 1.5}})
    low = spec.true_hazard({"grp": "a"}, [1])[0]
    high = spec.true_hazard({"grp": "b"}, [1])[0]
    assert low == pytest.approx(0.1, abs=1e-12)
    assert high > low


def test_spec_json_round_trip():
    spec = flat_spec(
        covariates=(NumericCovariate("x", dist="uniform", lo=0, hi=2),
                    CategoricalCovariate("grp", ("a", "b"), (0.7, 0.3))),
        effects={"x": 0.5, "grp": {"b": -0.4}},
        cure_hazard=0.03)
    payload = json.loads(json.dumps(spec.to_json()))
    again = GeneratorSpec.from_json(payload)
    assert again == spec


def test_invalid_specs_rejected():
    with pytest.raises(GeneratorError):
        flat_spec(n_loans=0)
    with pytest.raises(GeneratorError):
        flat_spec(censor_hazard=1.0)
    with pytest.raises(GeneratorError):
        GeneratorSpec(n_loans=5, seed=1, baseline_logit=())


def test_true_survivor_sets_match_at_risk_counts():
    spec = flat_spec(n_loans=300, cure_hazard=0.08, horizon=24,
                     calendar_months=100)
    panel, truth = simulate(spec)
    frame = panel.spell_frame()
    sets = true_survivor_sets(truth)
    for t in (1, 3, 6):
        at_risk = int(np.sum((frame["entry"] < t) & (t <= frame["stop"])))
        assert len(sets[t]) == at_risk


def test_truth_csv_layout():
    panel, truth = simulate(flat_spec(n_loans=20))
    buf = io.StringIO()
    truth_to_csv(truth, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == ("loan_id,spell_num,spell_period,true_hazard,"
                        "true_survivor,true_event_prob")
    assert len(lines) == 1 + len(panel)
