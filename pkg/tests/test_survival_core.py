import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import km_oracle, km_oracle_direct_risk_sets
from writeoff.survival_core import (
    SurvivalError,
    TermStructureKind,
    build_life_table,
    empirical_term_structure,
    km_survivor,
    life_table_to_csv,
    life_table_to_json,
    term_structure_to_csv,
)

HAND_SPELLS = [(1, 1), (2, 0), (3, 1), (3, 0)]


def test_hand_example_survivor_and_pmf():
    table = build_life_table(HAND_SPELLS)
    assert table.times.tolist() == [1, 3]
    assert km_survivor(table, 1) == pytest.approx(0.75, abs=1e-15)
    assert km_survivor(table, 2) == pytest.approx(0.75, abs=1e-15)
    assert km_survivor(table, 3) == pytest.approx(0.375, abs=1e-15)
    assert table.event_prob_at(3) == pytest.approx(0.375, abs=1e-15)
    assert table.event_prob_at(2) == 0.0


def test_survivor_at_zero_is_one():
    table = build_life_table(HAND_SPELLS)
    assert km_survivor(table, 0) == 1.0


def test_single_spell_event_gives_zero_survivor():
    table = build_life_table([(1, 1)])
    assert km_survivor(table, 1) == 0.0


def test_all_events_reduce_to_ecdf_complement():
    rng = np.random.default_rng(7)
    durations = rng.integers(1, 15, size=60)
    table = build_life_table([(int(t), 1) for t in durations])
    for t in range(0, 16):
        expected = float(np.mean(durations > t))
        assert km_survivor(table, t) == pytest.approx(expected, abs=1e-12)


def test_no_events_is_vacuous():
    table = build_life_table([(3, 0), (5, 0)])
    assert table.times.size == 0
    assert km_survivor(table, 10) == 1.0
    ts = empirical_term_structure(table)
    assert ts.times.size == 0
    assert ts.value_at(4) == 0.0


def test_empty_input_rejected():
    with pytest.raises(SurvivalError):
        build_life_table([])


def test_zero_exposure_rejected():
    with pytest.raises(SurvivalError):
        build_life_table([(0, 1)])


def test_delayed_entry_excluded_from_early_risk_sets():
    # late entrant must not inflate the risk set at t=1
    spells = [(1, 1, 0), (1, 1, 0), (2, 0, 0), (1, 1, 5)]
    table = build_life_table(spells)
    assert table.times.tolist() == [1, 6]
    k1 = list(table.times).index(1)
    assert table.at_risk[k1] == 3.0
    k6 = list(table.times).index(6)
    assert table.at_risk[k6] == 1.0
    assert table.hazard[k6] == 1.0


def test_weighted_counts_match_expansion():
    spells = [(2, 1), (4, 0), (5, 1)]
    weighted = build_life_table(spells, weights=[3, 2, 1])
    expanded = build_life_table([(2, 1)] * 3 + [(4, 0)] * 2 + [(5, 1)])
    assert np.array_equal(weighted.times, expanded.times)
    assert np.array_equal(weighted.at_risk, expanded.at_risk)
    assert np.array_equal(weighted.survivor, expanded.survivor)


def _random_spell_sets(max_size=12):
    duration = st.integers(min_value=1, max_value=10)
    event = st.integers(min_value=0, max_value=1)
    spells = st.lists(st.tuples(duration, event), min_size=1,
                      max_size=max_size)
    return spells.filter(lambda s: any(e for _, e in s))


@settings(max_examples=120, deadline=None)
@given(_random_spell_sets())
def test_matches_brute_force_oracle(spells):
    table = build_life_table(spells)
    oracle = km_oracle(spells)
    assert table.times.tolist() == oracle["times"]
    assert table.events.tolist() == [float(v) for v in oracle["f"]]
    assert table.censored.tolist() == [float(v) for v in oracle["c"]]
    assert table.at_risk.tolist() == [float(v) for v in oracle["n"]]
    np.testing.assert_allclose(table.survivor, oracle["survivor"],
                               atol=1e-12, rtol=0)
    np.testing.assert_allclose(table.hazard, oracle["hazard"],
                               atol=1e-12, rtol=0)
    np.testing.assert_allclose(table.event_prob, oracle["event_prob"],
                               atol=1e-12, rtol=0)


@settings(max_examples=120, deadline=None)
@given(_random_spell_sets())
def test_summation_risk_sets_equal_direct_counts(spells):
    table = build_life_table(spells)
    assert table.at_risk.tolist() == [
        float(v) for v in km_oracle_direct_risk_sets(spells)]


@settings(max_examples=120, deadline=None)
@given(_random_spell_sets(max_size=20))
def test_life_table_invariants(spells):
    table = build_life_table(spells)
    assert np.all(table.hazard >= 0) and np.all(table.hazard <= 1)
    assert np.all(np.diff(table.survivor) <= 1e-15)
    # telescoping and the hazard/pmf equivalence
    assert abs(table.event_prob.sum() - (1.0 - table.survivor[-1])) <= 1e-12
    prev = np.concatenate(([1.0], table.survivor[:-1]))
    np.testing.assert_allclose(table.event_prob, prev * table.hazard,
                               atol=1e-12, rtol=0)


@settings(max_examples=60, deadline=None)
@given(_random_spell_sets())
def test_late_censored_spell_only_widens_risk_sets(spells):
    base = build_life_table(spells)
    longest = max(t for t, _ in spells) + 3
    grown = build_life_table(spells + [(longest, 0)])
    assert np.array_equal(base.times, grown.times)
    assert np.array_equal(base.events, grown.events)
    assert np.all(grown.at_risk >= base.at_risk)


def test_term_structure_sums_to_one_minus_tail():
    table = build_life_table(HAND_SPELLS)
    ts = empirical_term_structure(table)
    assert ts.kind is TermStructureKind.EMPIRICAL_EVENT_PROB
    total = sum(ts.values) + km_survivor(table, int(table.times[-1]))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_csv_and_json_exports():
    table = build_life_table(HAND_SPELLS)
    buf = io.StringIO()
    life_table_to_csv(table, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "t,f,c,n,hazard,survivor,event_prob"
    assert len(lines) == 1 + len(table.times)

    payload = life_table_to_json(table, small_risk_threshold=5)
    assert json.dumps(payload)  # serialisable
    assert payload["small_risk_times"] == [1, 3]

    buf = io.StringIO()
    term_structure_to_csv(empirical_term_structure(table), buf)
    assert buf.getvalue().splitlines()[0] == "t,value"


def test_small_risk_reporting_never_truncates():
    table = build_life_table(HAND_SPELLS)
    assert table.small_risk_times(threshold=3) == [3]
    assert len(table.times) == 2
