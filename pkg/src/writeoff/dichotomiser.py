"""Cost-weighted dichotomisation of probability scores.

The Generalised Youden Index J_a(c) = q(c) + ((1-phi)/(a*phi)) * p(c) - 1
trades sensitivity q against specificity p under a false-negative cost
multiple a.  The cut-off search is a deterministic scan over score
midpoints; the cost multiple itself is chosen by minimising the MAE
between the empirical term structure and the dichotomised expected one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .survival_core import TermStructure, TermStructureKind


class DichotomiserError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredSample:
    """Probability scores with binary outcome labels."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels.astype(np.int64))
        if scores.shape != self.labels.shape:
            raise DichotomiserError("scores and labels must align")
        if scores.size == 0:
            raise DichotomiserError("sample is empty")
        if np.min(scores) < 0.0 or np.max(scores) > 1.0:
            raise DichotomiserError("scores must lie in [0, 1]")
        if set(np.unique(self.labels)) - {0, 1}:
            raise DichotomiserError("labels must be 0/1")

    @property
    def prevalence(self) -> float:
        return float(np.mean(self.labels))

    def require_both_classes(self):
        if 0.0 < self.prevalence < 1.0:
            return
        raise DichotomiserError("cut-off search needs both classes present")


@dataclass(frozen=True)
class CutoffResult:
    c_star: float
    j_value: float
    a: float
    bounds: tuple

    def __post_init__(self):
        lo, hi = self.bounds
        if not lo <= self.c_star <= hi:
            raise DichotomiserError("cut-off escaped its search bounds")


def gyi(sample: ScoredSample, c: float, a: float) -> float:
    """Generalised Youden Index at cut-off c under cost multiple a.

    Sensitivity q(c) = P(score > c | event); specificity
    p(c) = P(score <= c | non-event); plug-in estimates throughout.
    Setting a = (1-phi)/phi recovers the classical q + p - 1.
    """
    if a <= 0.0:
        raise DichotomiserError("cost multiple a must be positive")
    sample.require_both_classes()
    phi = sample.prevalence
    events = sample.labels == 1
    q = float(np.mean(sample.scores[events] > c))
    p = float(np.mean(sample.scores[~events] <= c))
    return q + (1.0 - phi) / (a * phi) * p - 1.0


def default_bounds(sample: ScoredSample, quantile: float = 0.99) -> tuple:
    """Search bounds [0, q-th score quantile]."""
    return (0.0, float(np.quantile(sample.scores, quantile)))


def candidate_cutoffs(sample: ScoredSample, bounds: tuple,
                      resolution: Optional[int] = None) -> np.ndarray:
    """Distinct score midpoints inside the bounds plus the bounds.

    ``resolution`` optionally adds that many uniformly spaced points, for
    callers who want a denser grid than the data dictates; the midpoint
    grid alone is already exact for the piecewise-constant objective.
    """
    lo, hi = bounds
    if not (0.0 <= lo < hi <= 1.0):
        raise DichotomiserError("bounds must satisfy 0 <= lo < hi <= 1")
    distinct = np.unique(sample.scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    inside = mids[(mids > lo) & (mids < hi)]
    pieces = [np.array([lo, hi]), inside]
    if resolution is not None:
        if resolution < 2:
            raise DichotomiserError("resolution must be at least 2")
        pieces.append(np.linspace(lo, hi, resolution))
    return np.unique(np.concatenate(pieces))


def optimal_cutoff(sample: ScoredSample, a: float,
                   bounds: Optional[tuple] = None,
                   resolution: Optional[int] = None) -> CutoffResult:
    """Maximise J_a over the candidate grid; ties favour the larger cut."""
    sample.require_both_classes()
    if bounds is None:
        bounds = default_bounds(sample)
    candidates = candidate_cutoffs(sample, bounds, resolution)
    if candidates.size == 0:
        raise DichotomiserError("empty candidate set")

    best_c = None
    best_j = -np.inf
    for c in candidates:  # ascending scan: >= keeps the largest tied cut
        j = gyi(sample, float(c), a)
        if j >= best_j:
            best_j = j
            best_c = float(c)
    return CutoffResult(c_star=best_c, j_value=best_j, a=a,
                        bounds=(float(bounds[0]), float(bounds[1])))


# -- term structures from per-spell event probabilities ---------------------


def score_sets_from_predictions(predictions: Mapping) -> dict:
    """Group predicted event probabilities by spell time.

    ``predictions`` maps spell keys to objects with aligned ``times`` and
    ``event_prob`` arrays (hazard-model or tree predictions over each
    spell's at-risk periods).  Returns {t: array of f(t, x_i) for the
    spells at risk at t}.
    """
    buckets: dict = {}
    for pred in predictions.values():
        for t, f in zip(pred.times, pred.event_prob):
            buckets.setdefault(int(t), []).append(float(f))
    return {t: np.array(vals) for t, vals in sorted(buckets.items())}


def score_sets_from_curves(event_prob: np.ndarray, stops, entries=None
                           ) -> dict:
    """Survivor-set scores from an (n_spells, horizon) probability matrix."""
    event_prob = np.asarray(event_prob, dtype=np.float64)
    stops = np.asarray(stops, dtype=np.int64)
    n, horizon = event_prob.shape
    entries = (np.zeros(n, dtype=np.int64) if entries is None
               else np.asarray(entries, dtype=np.int64))
    out = {}
    for t in range(1, horizon + 1):
        at_risk = (entries < t) & (t <= stops)
        if np.any(at_risk):
            out[t] = event_prob[at_risk, t - 1]
    return out


def expected_term_structure(per_time_scores: Mapping) -> TermStructure:
    """Mean predicted event probability among the spells at risk at each t."""
    times, values = _aggregate(per_time_scores, lambda v: float(np.mean(v)))
    return TermStructure(times=times, values=values,
                         kind=TermStructureKind.EXPECTED_EVENT_PROB)


def dichotomised_term_structure(per_time_scores: Mapping,
                                c_star: float) -> TermStructure:
    """Share of at-risk spells whose predicted probability exceeds c*."""
    times, values = _aggregate(
        per_time_scores, lambda v: float(np.mean(v > c_star)))
    return TermStructure(times=times, values=values,
                         kind=TermStructureKind.EXPECTED_DICHOTOMISED)


def _aggregate(per_time_scores, fn):
    if not per_time_scores:
        raise DichotomiserError("no survivor sets to aggregate")
    times = np.array(sorted(int(t) for t in per_time_scores), dtype=np.int64)
    values = np.empty(len(times), dtype=np.float64)
    for k, t in enumerate(times):
        scores = np.asarray(per_time_scores[int(t)], dtype=np.float64)
        if scores.size == 0:
            raise DichotomiserError(f"empty survivor set at t={t}")
        values[k] = fn(scores)
    return times, values


# -- cost-multiple optimisation ------------------------------------------------


@dataclass(frozen=True)
class CostMultipleResult:
    a_star: float
    cutoff: CutoffResult
    curve: tuple  # (a, c_star, mae) triples over the full grid

    def mae(self, a: float) -> float:
        for grid_a, _, mae in self.curve:
            if grid_a == a:
                return mae
        raise KeyError(f"a={a} not on the evaluated grid")


def term_structure_mae(a: TermStructure, b: TermStructure) -> float:
    """Mean absolute difference over the shared support."""
    shared = sorted(a.support & b.support)
    if not shared:
        raise DichotomiserError("term structures share no support")
    return float(np.mean([abs(a.value_at(t) - b.value_at(t))
                          for t in shared]))


def optimise_cost_multiple(sample: ScoredSample, per_time_scores: Mapping,
                           empirical: TermStructure,
                           a_grid: Sequence[float],
                           bounds: Optional[tuple] = None,
                           resolution: Optional[int] = None
                           ) -> CostMultipleResult:
    """Choose the cost multiple whose dichotomised structure tracks reality.

    For every a on the grid: find c*(a), dichotomise, and score the MAE
    against the empirical term structure.  Returns the grid minimiser
    (ties to the smallest a) along with the full (a, c*, MAE) curve so a
    judgment-based override stays possible.
    """
    a_grid = [float(a) for a in a_grid]
    if not a_grid:
        raise DichotomiserError("empty cost-multiple grid")
    if bounds is None:
        bounds = default_bounds(sample)

    curve = []
    best = None
    for a in a_grid:
        cut = optimal_cutoff(sample, a, bounds=bounds, resolution=resolution)
        dichotomised = dichotomised_term_structure(per_time_scores,
                                                   cut.c_star)
        mae = term_structure_mae(empirical, dichotomised)
        curve.append((a, cut.c_star, mae))
        if best is None or mae < best[2]:  # strict: ties keep the smaller a
            best = (a, cut, mae)
    a_star, cutoff, _ = best
    return CostMultipleResult(a_star=a_star, cutoff=cutoff,
                              curve=tuple(curve))
