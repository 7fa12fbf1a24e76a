"""Model evaluation battery.

Classical ROC/AUC and Brier scores; their time-dependent counterparts for
censored spells under the cumulative-case / dynamic-control convention
with inverse-probability-of-censoring weights from the reverse-role
Kaplan-Meier estimate; AUC over calendar time; term-structure MAE; and
distributional similarity (KS, KL, JS) for loss-rate outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dichotomiser import term_structure_mae  # noqa: F401  (re-exported op)
from .survival_core import LifeTable, life_table_from_arrays


class DiagnosticsError(ValueError):
    pass


# -- classical ROC / Brier ----------------------------------------------------


@dataclass(frozen=True)
class RocCurve:
    """Empirical ROC points from (0,0) to (1,1) with trapezoidal AUC."""

    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    n_cases: float
    n_controls: float
    n_dropped: int = 0


def _weighted_roc(case_scores, case_weights, control_scores, control_weights,
                  n_dropped=0) -> RocCurve:
    total_case = float(np.sum(case_weights))
    total_control = float(np.sum(control_weights))
    if total_case <= 0 or total_control <= 0:
        raise DiagnosticsError("ROC needs weighted mass in both classes")

    thresholds = np.unique(np.concatenate([case_scores, control_scores]))
    tp_group = np.zeros(len(thresholds))
    fp_group = np.zeros(len(thresholds))
    np.add.at(tp_group, np.searchsorted(thresholds, case_scores),
              case_weights)
    np.add.at(fp_group, np.searchsorted(thresholds, control_scores),
              control_weights)
    # one point per unique score, scanned from the top score down; tied
    # scores move diagonally, which prices them at half credit
    tpr = np.concatenate(([0.0], np.cumsum(tp_group[::-1]) / total_case))
    fpr = np.concatenate(([0.0], np.cumsum(fp_group[::-1]) / total_control))
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr=fpr, tpr=tpr, auc=auc, n_cases=total_case,
                    n_controls=total_control, n_dropped=n_dropped)


def roc(labels, scores) -> RocCurve:
    """Empirical ROC with score-group tie handling and trapezoidal AUC."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise DiagnosticsError("labels and scores must align")
    cases = labels == 1
    if not np.any(cases) or np.all(cases):
        raise DiagnosticsError("ROC needs both classes present")
    return _weighted_roc(scores[cases], np.ones(int(np.sum(cases))),
                         scores[~cases], np.ones(int(np.sum(~cases))))


def brier(labels, scores) -> float:
    """Mean squared difference between scores and 0/1 labels."""
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.size == 0:
        raise DiagnosticsError("empty sample")
    return float(np.mean((scores - labels) ** 2))


# -- censoring weights ---------------------------------------------------------


def censoring_survivor(durations, events, entries=None) -> LifeTable:
    """Reverse-role KM: censorings become the events."""
    events = np.asarray(events, dtype=np.int64)
    return life_table_from_arrays(durations, 1 - events, entries)


def _g_left(table: LifeTable, t: int) -> float:
    """Left limit G(t-): product over censoring times strictly before t."""
    return table.survivor_at(t - 1)


# -- time-dependent ROC ----------------------------------------------------------


def troc(durations, events, markers, t: int, entries=None) -> RocCurve:
    """Cumulative-case / dynamic-control ROC at horizon t.

    Cases are spells with T <= t ending in write-off, weighted by
    1/G(T-); controls survive past t, weighted by 1/G(t); G is the
    reverse-role KM of the censoring distribution.  Spells censored by t,
    entered at or after t, or facing a zero censoring weight drop out
    (the drop count lands on the returned curve).  With no censoring this
    reduces exactly to :func:`roc` on the binarised outcome.
    """
    durations = np.asarray(durations, dtype=np.int64)
    events = np.asarray(events, dtype=np.int64)
    markers = np.asarray(markers, dtype=np.float64)
    n = durations.shape[0]
    entries = (np.zeros(n, dtype=np.int64) if entries is None
               else np.asarray(entries, dtype=np.int64))
    stops = entries + durations

    comparable = entries < t
    case = comparable & (stops <= t) & (events == 1)
    control = comparable & (stops > t)
    if not np.any(case) or not np.any(control):
        raise DiagnosticsError(f"no comparable case/control pairs at t={t}")

    g_table = censoring_survivor(durations, events, entries)
    g_at_t = g_table.survivor_at(t)
    case_g = np.array([_g_left(g_table, int(s)) for s in stops[case]])

    dropped = int(np.sum(case_g <= 0.0)) + (int(np.sum(control))
                                            if g_at_t <= 0.0 else 0)
    if g_at_t <= 0.0:
        raise DiagnosticsError(
            f"censoring survivor vanishes at t={t}; controls unweightable")
    keep = case_g > 0.0
    case_scores = markers[case][keep]
    case_weights = 1.0 / case_g[keep]
    control_scores = markers[control]
    control_weights = np.full(control_scores.shape[0], 1.0 / g_at_t)
    return _weighted_roc(case_scores, case_weights, control_scores,
                         control_weights, n_dropped=dropped)


# -- time-dependent Brier --------------------------------------------------------


@dataclass(frozen=True)
class TimeDependentScore:
    """Per-time diagnostic values with effective sample bookkeeping."""

    times: tuple
    values: tuple
    n_effective: tuple
    n_dropped: tuple

    def value_at(self, t: int) -> float:
        return self.values[self.times.index(t)]


def tbs(durations, events, survival_pred, t: int, entries=None) -> float:
    """IPCW Brier score of the survival prediction at horizon t.

    survival_pred holds each spell's predicted S(t | x).  Residuals use
    the event-probability form (1 - S) against the binarised outcome, so
    the uncensored case equals :func:`brier` bit for bit.
    """
    value, _, _ = _tbs_parts(durations, events, survival_pred, t, entries)
    return value


def _tbs_parts(durations, events, survival_pred, t, entries):
    durations = np.asarray(durations, dtype=np.int64)
    events = np.asarray(events, dtype=np.int64)
    pred = np.asarray(survival_pred, dtype=np.float64)
    n = durations.shape[0]
    entries = (np.zeros(n, dtype=np.int64) if entries is None
               else np.asarray(entries, dtype=np.int64))
    stops = entries + durations

    comparable = entries < t
    case = comparable & (stops <= t) & (events == 1)
    control = comparable & (stops > t)

    g_table = censoring_survivor(durations, events, entries)
    g_at_t = g_table.survivor_at(t)
    if np.any(control) and g_at_t <= 0.0:
        raise DiagnosticsError(
            f"censoring survivor vanishes at t={t}; controls unweightable")

    contributions = np.zeros(n, dtype=np.float64)
    weights = np.zeros(n, dtype=np.float64)
    dropped = 0
    event_prob = 1.0 - pred
    for i in np.flatnonzero(case):
        g = _g_left(g_table, int(stops[i]))
        if g <= 0.0:
            dropped += 1
            continue
        contributions[i] = (event_prob[i] - 1.0) ** 2
        weights[i] = 1.0 / g
    contributions[control] = (event_prob[control] - 0.0) ** 2
    weights[control] = 1.0 / g_at_t if np.any(control) else 0.0

    n_comparable = int(np.sum(comparable)) - dropped
    if n_comparable <= 0:
        raise DiagnosticsError(f"no weightable observations at t={t}")
    value = float(np.sum(contributions * weights) / n_comparable)
    return value, n_comparable, dropped


def tbs_series(durations, events, survival_matrix, times: Sequence[int],
               entries=None) -> TimeDependentScore:
    """tBS over several horizons; column t-1 of the matrix predicts S(t)."""
    survival_matrix = np.asarray(survival_matrix, dtype=np.float64)
    values, n_eff, n_drop = [], [], []
    for t in times:
        v, ne, nd = _tbs_parts(durations, events,
                               survival_matrix[:, t - 1], t, entries)
        values.append(v)
        n_eff.append(ne)
        n_drop.append(nd)
    return TimeDependentScore(times=tuple(int(t) for t in times),
                              values=tuple(values), n_effective=tuple(n_eff),
                              n_dropped=tuple(n_drop))


def ibs(durations, events, survival_matrix, t_max: int, entries=None
        ) -> float:
    """Integrated Brier score: uniform mean of tBS over t = 1..t_max."""
    if t_max < 1:
        raise DiagnosticsError("t_max must be at least 1")
    survival_matrix = np.asarray(survival_matrix, dtype=np.float64)
    if survival_matrix.shape[1] < t_max:
        raise DiagnosticsError("survival predictions must cover 1..t_max")
    series = tbs_series(durations, events, survival_matrix,
                        range(1, t_max + 1), entries)
    return float(np.sum(series.values) / t_max)


# -- AUC over calendar time --------------------------------------------------------


@dataclass(frozen=True)
class AucOverTime:
    months: tuple
    aucs: tuple
    ttc_mean: float
    skipped_months: tuple  # single-class months, reported not scored


def auc_over_time(months, labels, scores) -> AucOverTime:
    """Monthly ROC-AUC by resolution month plus the through-the-cycle mean."""
    months = np.asarray(months, dtype=object)
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)

    kept, aucs, skipped = [], [], []
    for month in sorted(set(months.tolist())):
        sel = months == month
        month_labels = labels[sel]
        if len(set(month_labels.tolist())) < 2:
            skipped.append(str(month))
            continue
        kept.append(str(month))
        aucs.append(roc(month_labels, scores[sel]).auc)
    if not kept:
        raise DiagnosticsError("no month carries both classes")
    return AucOverTime(months=tuple(kept), aucs=tuple(aucs),
                       ttc_mean=float(np.mean(aucs)),
                       skipped_months=tuple(skipped))


# -- distributional similarity -------------------------------------------------------


@dataclass(frozen=True)
class DistributionComparison:
    ks: float
    kl: float
    js: float
    n_bins: int
    clipped_actual: int
    clipped_predicted: int


def compare_distributions(actual, predicted, bins: int = 100
                          ) -> DistributionComparison:
    """KS statistic plus KL/JS divergences between two loss-rate samples.

    Loss rates may marginally exceed 1 (clipped, with counts reported);
    negatives are invalid.  KL/JS work on equal-width histogram masses
    over [0, 1] with additive smoothing 1e-10, natural logarithms.
    """
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.size == 0 or predicted.size == 0:
        raise DiagnosticsError("both samples must be nonempty")
    if np.min(actual) < 0.0 or np.min(predicted) < 0.0:
        raise DiagnosticsError("loss rates cannot be negative")
    if bins < 1:
        raise DiagnosticsError("bins must be positive")

    clipped_a = int(np.sum(actual > 1.0))
    clipped_p = int(np.sum(predicted > 1.0))
    actual = np.minimum(actual, 1.0)
    predicted = np.minimum(predicted, 1.0)

    ks = _ks_statistic(actual, predicted)
    p = _smoothed_mass(actual, bins)
    q = _smoothed_mass(predicted, bins)
    kl = _kl(p, q)
    m = (p + q) / 2.0
    js = 0.5 * _kl(p, m) + 0.5 * _kl(q, m)
    return DistributionComparison(ks=ks, kl=kl, js=js, n_bins=bins,
                                  clipped_actual=clipped_a,
                                  clipped_predicted=clipped_p)


def _ks_statistic(a, b) -> float:
    grid = np.unique(np.concatenate([a, b]))
    cdf_a = np.searchsorted(np.sort(a), grid, side="right") / a.size
    cdf_b = np.searchsorted(np.sort(b), grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def _smoothed_mass(values, bins, eps=1e-10):
    counts, _ = np.histogram(values, bins=bins, range=(0.0, 1.0))
    mass = counts / counts.sum() + eps
    return mass / mass.sum()


def _kl(p, q) -> float:
    return float(np.sum(p * np.log(p / q)))
