"""Nonparametric discrete-time estimation of write-off risk.

Life tables over the ordered distinct failure times, Kaplan-Meier survivor
values, discrete hazards, marginal event probabilities and the empirical
term structure, with delayed-entry (left-truncation) aware risk sets.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ._kernels import risk_counts

DEFAULT_SMALL_RISK_THRESHOLD = 30


class SurvivalError(ValueError):
    pass


class TermStructureKind(enum.Enum):
    EMPIRICAL_EVENT_PROB = "empirical_event_prob"
    EXPECTED_EVENT_PROB = "expected_event_prob"
    EXPECTED_DICHOTOMISED = "expected_dichotomised"


@dataclass(frozen=True)
class LifeTable:
    """Ordered failure times with counts, hazards and survivor values.

    ``times`` holds the distinct failure times t_(1) < ... < t_(m).  Per
    time: ``events`` (f), ``censored`` (c, censorings in [t_k, t_{k+1})),
    ``at_risk`` (n), ``hazard`` (h = f/n), ``survivor`` (S) and
    ``event_prob`` (the marginal write-off probability S_{k-1} - S_k).
    """

    times: np.ndarray
    events: np.ndarray
    censored: np.ndarray
    at_risk: np.ndarray
    hazard: np.ndarray
    survivor: np.ndarray
    event_prob: np.ndarray
    n_spells: int

    def survivor_at(self, t: float) -> float:
        """Right-continuous step evaluation of S(t); S(0) = 1."""
        if t < 0:
            raise SurvivalError("survival time must be non-negative")
        k = int(np.searchsorted(self.times, t, side="right"))
        return 1.0 if k == 0 else float(self.survivor[k - 1])

    def hazard_at(self, t: int) -> float:
        """Discrete hazard at t; zero off the failure-time grid."""
        k = int(np.searchsorted(self.times, t))
        if k < len(self.times) and self.times[k] == t:
            return float(self.hazard[k])
        return 0.0

    def event_prob_at(self, t: int) -> float:
        """Marginal event probability at t; zero off the grid."""
        k = int(np.searchsorted(self.times, t))
        if k < len(self.times) and self.times[k] == t:
            return float(self.event_prob[k])
        return 0.0

    def small_risk_times(self, threshold: int = DEFAULT_SMALL_RISK_THRESHOLD):
        """Failure times whose risk set falls below ``threshold``.

        Reporting aid only; estimates at flagged times are never truncated.
        """
        return [int(t) for t, n in zip(self.times, self.at_risk)
                if n < threshold]


@dataclass(frozen=True)
class TermStructure:
    """Event-probability values over spell time on an explicit support."""

    times: np.ndarray
    values: np.ndarray
    kind: TermStructureKind

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise SurvivalError("times and values must align")
        if len(self.values) and (np.min(self.values) < 0
                                 or np.max(self.values) > 1):
            raise SurvivalError("term-structure values must lie in [0, 1]")

    @property
    def support(self) -> frozenset:
        return frozenset(int(t) for t in self.times)

    def value_at(self, t: int) -> float:
        k = int(np.searchsorted(self.times, t))
        if k < len(self.times) and self.times[k] == t:
            return float(self.values[k])
        if self.kind is TermStructureKind.EMPIRICAL_EVENT_PROB:
            # off-grid event probability is zero by construction
            return 0.0
        raise KeyError(f"time {t} outside term-structure support")

    def as_dict(self) -> dict:
        return {int(t): float(v) for t, v in zip(self.times, self.values)}


def build_life_table(spells: Iterable[tuple], weights=None) -> LifeTable:
    """Build a life table from (duration, event, entry-offset) spells.

    ``spells`` yields tuples of (T, event, entry) or (T, event); T >= 1 is
    the observed exposure in whole months, ``entry`` a non-negative delayed
    entry offset (the spell joins the risk set only for ages > entry and
    stops at age entry + T).  ``weights`` are optional non-negative integer
    multiplicities.

    Risk sets, hazards, survivor values and event probabilities follow the
    discrete-time conventions: h_k = f_k / n_k, S as the product of
    (1 - h_s) over failure times <= t, and event_prob_k = S_{k-1} - S_k.
    """
    rows = list(spells)
    if not rows:
        raise SurvivalError("cannot build a life table from zero spells")

    durations = np.array([r[0] for r in rows], dtype=np.int64)
    events = np.array([r[1] for r in rows], dtype=np.int64)
    entries = np.array([r[2] if len(r) > 2 else 0 for r in rows],
                       dtype=np.int64)
    if np.any(durations < 1):
        raise SurvivalError("every spell needs at least one month of exposure")
    if np.any(entries < 0):
        raise SurvivalError("entry offsets must be non-negative")
    if weights is None:
        w = np.ones(len(rows), dtype=np.float64)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != durations.shape or np.any(w < 0):
            raise SurvivalError("weights must be non-negative, one per spell")
    stops = entries + durations

    return _life_table_from_arrays(stops, events, entries, w)


def life_table_from_arrays(durations, events, entries=None,
                           weights=None) -> LifeTable:
    """Array-based variant of :func:`build_life_table` for bulk callers."""
    durations = np.asarray(durations, dtype=np.int64)
    events = np.asarray(events, dtype=np.int64)
    n = durations.shape[0]
    if n == 0:
        raise SurvivalError("cannot build a life table from zero spells")
    entries = (np.zeros(n, dtype=np.int64) if entries is None
               else np.asarray(entries, dtype=np.int64))
    weights = (np.ones(n, dtype=np.float64) if weights is None
               else np.asarray(weights, dtype=np.float64))
    if np.any(durations < 1):
        raise SurvivalError("every spell needs at least one month of exposure")
    if np.any(entries < 0) or np.any(weights < 0):
        raise SurvivalError("entries and weights must be non-negative")
    return _life_table_from_arrays(entries + durations, events, entries,
                                   weights)


def _life_table_from_arrays(stops, events, entries, weights) -> LifeTable:
    """Shared life-table assembly; arrays must be pre-validated."""
    live = weights > 0
    event_stops = stops[live & (events != 0)]
    grid = np.unique(event_stops)

    n_spells = int(round(float(np.sum(weights))))
    if grid.size == 0:
        empty = np.array([], dtype=np.float64)
        return LifeTable(times=np.array([], dtype=np.int64), events=empty,
                         censored=empty, at_risk=empty, hazard=empty,
                         survivor=empty, event_prob=empty, n_spells=n_spells)

    f, c, n = risk_counts(stops, events, entries, weights, grid)
    hazard = f / n
    survivor = np.cumprod(1.0 - hazard)
    prev = np.concatenate(([1.0], survivor[:-1]))
    event_prob = prev - survivor
    return LifeTable(times=grid, events=f, censored=c, at_risk=n,
                     hazard=hazard, survivor=survivor, event_prob=event_prob,
                     n_spells=n_spells)


def km_survivor(table: LifeTable, t: float) -> float:
    """Kaplan-Meier survivor value at t (step function, S(0) = 1)."""
    return table.survivor_at(t)


def empirical_term_structure(table: LifeTable) -> TermStructure:
    """Marginal write-off probabilities over the failure-time grid."""
    return TermStructure(times=table.times.copy(),
                         values=table.event_prob.copy(),
                         kind=TermStructureKind.EMPIRICAL_EVENT_PROB)


LIFE_TABLE_COLUMNS = ("t", "f", "c", "n", "hazard", "survivor", "event_prob")


def life_table_to_csv(table: LifeTable, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(LIFE_TABLE_COLUMNS)
    for k in range(len(table.times)):
        writer.writerow([
            int(table.times[k]),
            repr(float(table.events[k])),
            repr(float(table.censored[k])),
            repr(float(table.at_risk[k])),
            repr(float(table.hazard[k])),
            repr(float(table.survivor[k])),
            repr(float(table.event_prob[k])),
        ])


def life_table_to_json(table: LifeTable,
                       small_risk_threshold: int = DEFAULT_SMALL_RISK_THRESHOLD
                       ) -> dict:
    return {
        "n_spells": table.n_spells,
        "times": [int(t) for t in table.times],
        "events": [float(v) for v in table.events],
        "censored": [float(v) for v in table.censored],
        "at_risk": [float(v) for v in table.at_risk],
        "hazard": [float(v) for v in table.hazard],
        "survivor": [float(v) for v in table.survivor],
        "event_prob": [float(v) for v in table.event_prob],
        "small_risk_threshold": small_risk_threshold,
        "small_risk_times": table.small_risk_times(small_risk_threshold),
    }


def life_table_from_json(payload: Mapping) -> LifeTable:
    return LifeTable(
        times=np.array(payload["times"], dtype=np.int64),
        events=np.array(payload["events"], dtype=np.float64),
        censored=np.array(payload["censored"], dtype=np.float64),
        at_risk=np.array(payload["at_risk"], dtype=np.float64),
        hazard=np.array(payload["hazard"], dtype=np.float64),
        survivor=np.array(payload["survivor"], dtype=np.float64),
        event_prob=np.array(payload["event_prob"], dtype=np.float64),
        n_spells=int(payload["n_spells"]),
    )


def term_structure_to_csv(ts: TermStructure, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("t", "value"))
    for t, v in zip(ts.times, ts.values):
        writer.writerow([int(t), repr(float(v))])


def term_structure_to_json(ts: TermStructure) -> dict:
    return {
        "kind": ts.kind.value,
        "times": [int(t) for t in ts.times],
        "values": [float(v) for v in ts.values],
    }


def term_structure_from_mapping(values: Mapping[int, float],
                                kind: TermStructureKind) -> TermStructure:
    times = np.array(sorted(values), dtype=np.int64)
    vals = np.array([values[int(t)] for t in times], dtype=np.float64)
    return TermStructure(times=times, values=vals, kind=kind)
