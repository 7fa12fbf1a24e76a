import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import auc_pair_counting
from writeoff.diagnostics import (
    DiagnosticsError,
    auc_over_time,
    brier,
    compare_distributions,
    ibs,
    roc,
    tbs,
    tbs_series,
    troc,
)


# -- roc / brier -------------------------------------------------------------


def test_uninformative_scores_give_half_auc():
    labels = np.array([1, 0, 1, 0, 0])
    assert roc(labels, np.full(5, 0.3)).auc == pytest.approx(0.5, abs=1e-12)


def test_perfect_scores_give_unit_auc():
    labels = np.array([1, 1, 0, 0])
    assert roc(labels, np.array([0.9, 0.8, 0.2, 0.1])).auc == 1.0


def test_hand_computed_auc():
    labels = np.array([1, 0, 1, 0])
    scores = np.array([0.9, 0.8, 0.7, 0.1])
    assert roc(labels, scores).auc == pytest.approx(0.75, abs=1e-12)


def test_single_class_rejected():
    with pytest.raises(DiagnosticsError):
        roc(np.ones(4), np.linspace(0, 1, 4))


def test_roc_points_monotone_and_anchored():
    rng = np.random.default_rng(1)
    labels = (rng.random(300) < 0.4).astype(int)
    scores = np.round(rng.random(300), 2)  # force plenty of ties
    curve = roc(labels, scores)
    assert curve.fpr[0] == curve.tpr[0] == 0.0
    assert curve.fpr[-1] == curve.tpr[-1] == 1.0
    assert np.all(np.diff(curve.fpr) >= 0)
    assert np.all(np.diff(curve.tpr) >= 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1),
                          st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.7, 1.0])),
                min_size=4, max_size=60))
def test_auc_equals_pair_counting(pairs):
    labels = np.array([l for l, _ in pairs])
    scores = np.array([s for _, s in pairs])
    if labels.sum() in (0, len(labels)):
        labels[0] = 1 - labels[0]
    assert roc(labels, scores).auc == pytest.approx(
        auc_pair_counting(labels, scores), abs=1e-12)


def test_brier_values():
    assert brier(np.array([1, 0]), np.array([1.0, 0.0])) == 0.0
    assert brier(np.array([1, 0, 1]), np.full(3, 0.5)) == 0.25
    assert brier(np.array([1, 0]), np.array([0.8, 0.4])) == pytest.approx(
        0.1, abs=1e-12)


# -- troc ---------------------------------------------------------------------


def _uncensored_sample(rng, n=300):
    durations = rng.integers(1, 30, size=n).astype(np.int64)
    events = np.ones(n, dtype=np.int64)
    markers = rng.random(n)
    return durations, events, markers


def test_troc_reduces_to_roc_without_censoring():
    rng = np.random.default_rng(4)
    durations, events, markers = _uncensored_sample(rng)
    for t in (3, 8, 15):
        labels = (durations <= t).astype(int)
        if labels.sum() in (0, len(labels)):
            continue
        classic = roc(labels, markers)
        timed = troc(durations, events, markers, t)
        np.testing.assert_array_equal(timed.fpr, classic.fpr)
        np.testing.assert_array_equal(timed.tpr, classic.tpr)
        assert timed.auc == classic.auc


def test_troc_null_markers_centre_on_half():
    rng = np.random.default_rng(11)
    n = 2000
    u = rng.random((n, 60))
    hit = u < 0.08
    latent = np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, 60)
    censor = rng.geometric(0.035, size=n)
    durations = np.minimum(latent, censor).astype(np.int64)
    events = (latent <= censor).astype(np.int64)
    markers = rng.random(n)
    aucs = [troc(durations, events, markers, t).auc for t in (6, 12)]
    se = math.sqrt(1.0 / (4 * 300))  # loose binomial-style bound
    for a in aucs:
        assert abs(a - 0.5) < 3 * se + 0.03


def test_troc_informative_markers_beat_half_and_track_oracle():
    rng = np.random.default_rng(21)
    n = 2000
    risk = rng.random(n)
    hazard = 0.02 + 0.25 * risk
    u = rng.random((n, 60))
    hit = u < hazard[:, None]
    latent = np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, 60)

    censor = rng.geometric(0.03, size=n)
    durations = np.minimum(latent, censor).astype(np.int64)
    events = (latent <= censor).astype(np.int64)

    censored_auc = troc(durations, events, risk, 12).auc
    oracle_auc = troc(latent.astype(np.int64), np.ones(n, dtype=np.int64),
                      risk, 12).auc
    assert censored_auc > 0.6
    assert abs(censored_auc - oracle_auc) < 0.02


def test_troc_needs_comparable_pairs():
    durations = np.array([1, 2, 3], dtype=np.int64)
    events = np.array([1, 1, 1], dtype=np.int64)
    with pytest.raises(DiagnosticsError):
        troc(durations, events, np.array([0.1, 0.5, 0.9]), 10)


def test_troc_excludes_late_entries():
    durations = np.array([5, 5, 2, 2], dtype=np.int64)
    events = np.array([0, 0, 1, 1], dtype=np.int64)
    entries = np.array([0, 0, 0, 10], dtype=np.int64)
    curve = troc(durations, events, np.array([0.1, 0.2, 0.9, 0.5]), 3,
                 entries=entries)
    assert curve.n_cases == 1.0  # the late entrant never became comparable


# -- tbs / ibs -------------------------------------------------------------------


def test_tbs_constant_half_predictor_quarter():
    rng = np.random.default_rng(5)
    durations, events, _ = _uncensored_sample(rng, n=120)
    for t in (2, 7, 13):
        assert tbs(durations, events, np.full(120, 0.5), t) == 0.25


def test_tbs_equals_brier_without_censoring():
    rng = np.random.default_rng(6)
    durations, events, _ = _uncensored_sample(rng, n=200)
    surv = rng.random(200)
    for t in (4, 9):
        labels = (durations <= t).astype(float)
        assert tbs(durations, events, surv, t) == brier(labels, 1.0 - surv)


def test_tbs_oracle_indicators_zero_error():
    rng = np.random.default_rng(7)
    durations, events, _ = _uncensored_sample(rng, n=150)
    t = 10
    surv = (durations > t).astype(float)
    assert tbs(durations, events, surv, t) == 0.0


def test_ibs_constant_half_is_quarter_for_any_horizon():
    rng = np.random.default_rng(8)
    durations, events, _ = _uncensored_sample(rng, n=100)
    for t_max in (1, 5, 17):
        surv = np.full((100, t_max), 0.5)
        assert ibs(durations, events, surv, t_max) == 0.25


def test_ibs_orders_true_model_above_flat_model():
    rng = np.random.default_rng(9)
    wins = 0
    n_seeds = 40
    for _ in range(n_seeds):
        n = 400
        risk = rng.random(n) < 0.5
        hazard = np.where(risk, 0.25, 0.05)
        u = rng.random((n, 40))
        hit = u < hazard[:, None]
        latent = np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, 40)
        censor = rng.geometric(0.05, size=n)
        durations = np.minimum(latent, censor).astype(np.int64)
        events = (latent <= censor).astype(np.int64)

        t_max = 12
        grid = np.arange(1, t_max + 1)
        true_surv = (1 - hazard[:, None]) ** grid[None, :]
        flat = np.full((n, t_max), 0.5)
        if (ibs(durations, events, true_surv, t_max)
                < ibs(durations, events, flat, t_max)):
            wins += 1
    assert wins >= int(0.95 * n_seeds)


def test_tbs_series_reports_effective_sizes():
    rng = np.random.default_rng(10)
    durations, events, _ = _uncensored_sample(rng, n=80)
    surv = np.full((80, 6), 0.5)
    series = tbs_series(durations, events, surv, times=[1, 3, 6])
    assert series.times == (1, 3, 6)
    assert all(v == 0.25 for v in series.values)
    assert all(ne == 80 for ne in series.n_effective)
    assert series.value_at(3) == 0.25


# -- auc over calendar time ---------------------------------------------------------


def test_auc_over_time_flat_composition():
    labels, scores, months = [], [], []
    for month in ("2020-01", "2020-02", "2020-03"):
        labels += [1, 1, 0, 0]
        scores += [0.9, 0.4, 0.6, 0.1]
        months += [month] * 4
    out = auc_over_time(months, labels, scores)
    pooled = roc(np.array(labels), np.array(scores)).auc
    assert all(a == pooled for a in out.aucs)
    assert out.ttc_mean == pytest.approx(pooled, abs=1e-12)
    assert out.skipped_months == ()


def test_auc_over_time_ttc_mean_is_unweighted():
    months = ["a"] * 4 + ["b"] * 8
    labels = [1, 1, 0, 0] + [1, 0, 0, 0, 1, 0, 0, 0]
    scores = [0.9, 0.8, 0.2, 0.1] + [0.9, 0.95, 0.1, 0.2] * 2
    out = auc_over_time(months, labels, scores)
    assert out.ttc_mean == pytest.approx(sum(out.aucs) / 2, abs=1e-12)


def test_auc_over_time_skips_single_class_months():
    months = ["a", "a", "b", "b", "b", "b"]
    labels = [1, 1, 1, 0, 1, 0]
    scores = [0.5, 0.6, 0.9, 0.1, 0.8, 0.3]
    out = auc_over_time(months, labels, scores)
    assert out.skipped_months == ("a",)
    assert out.months == ("b",)


# -- distribution comparison ----------------------------------------------------------


def test_identical_samples_are_indistinguishable():
    rng = np.random.default_rng(12)
    x = rng.random(500)
    out = compare_distributions(x, x.copy())
    assert (out.ks, out.kl, out.js) == (0.0, 0.0, 0.0)


def test_shuffled_sample_is_identical():
    rng = np.random.default_rng(13)
    x = rng.random(300)
    out = compare_distributions(x, rng.permutation(x))
    assert (out.ks, out.kl, out.js) == (0.0, 0.0, 0.0)


def test_disjoint_supports_maximal():
    zeros = np.zeros(50)
    ones = np.ones(50)
    out = compare_distributions(zeros, ones)
    assert out.ks == 1.0
    assert out.js == pytest.approx(math.log(2), abs=1e-6)
    assert out.kl > 10  # smoothing keeps it finite


def test_clipping_reported():
    out = compare_distributions(np.array([0.5, 1.02]), np.array([0.4, 0.6]))
    assert out.clipped_actual == 1
    assert out.clipped_predicted == 0
    with pytest.raises(DiagnosticsError):
        compare_distributions(np.array([-0.1]), np.array([0.5]))


def test_ks_invariant_under_monotone_transform():
    rng = np.random.default_rng(14)
    a = rng.random(200) * 0.5
    b = rng.random(200) * 0.5
    base = compare_distributions(a, b).ks
    warped = compare_distributions(a ** 2, b ** 2).ks  # [0,1] -> [0,1]
    assert warped == pytest.approx(base, abs=1e-12)


def test_js_symmetric():
    rng = np.random.default_rng(15)
    a = rng.random(150)
    b = np.clip(rng.normal(0.6, 0.2, 150), 0, 1)
    ab = compare_distributions(a, b)
    ba = compare_distributions(b, a)
    assert ab.js == pytest.approx(ba.js, abs=1e-12)
