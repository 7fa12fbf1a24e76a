"""Synthetic default-spell portfolios with fully known ground truth.

Loans draw covariate-dependent discrete write-off hazards (baseline curve
plus multiplicative effects on the logit scale), face independent
censoring and a competing cure hazard (emitted as the cured outcome but
treated as censoring by every estimator), may enter left-truncated, and
can re-default after curing.  Per-loan counter-based RNG streams keep the
draws order-independent, so generation parallelises without changing the
output.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .spell_data import CovariateSchema, Resolution, SpellPanel


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class NumericCovariate:
    name: str
    dist: str = "normal"  # "normal" | "uniform" | "grid"
    mu: float = 0.0
    sd: float = 1.0
    lo: float = 0.0
    hi: float = 1.0
    step: float = 0.01  # grid resolution for dist="grid"

    def draw(self, rng) -> float:
        if self.dist == "normal":
            return float(rng.normal(self.mu, self.sd))
        if self.dist == "uniform":
            return float(rng.uniform(self.lo, self.hi))
        if self.dist == "grid":
            n_steps = int(round((self.hi - self.lo) / self.step))
            return float(self.lo + self.step * rng.integers(0, n_steps + 1))
        raise GeneratorError(f"unknown numeric distribution {self.dist!r}")


@dataclass(frozen=True)
class CategoricalCovariate:
    name: str
    levels: tuple
    probs: tuple

    def draw(self, rng) -> str:
        u = rng.random()
        acc = 0.0
        for level, p in zip(self.levels, self.probs):
            acc += p
            if u < acc:
                return level
        return self.levels[-1]


@dataclass(frozen=True)
class GeneratorSpec:
    """Reproducible description of a synthetic portfolio."""

    n_loans: int
    seed: int
    baseline_logit: tuple  # per spell period; the last value extends
    covariates: tuple = ()
    effects: Mapping = field(default_factory=dict)
    censor_hazard: float = 0.0
    cure_hazard: float = 0.0
    truncation_probability: float = 0.0
    truncation_max_offset: int = 0
    recurrence_probability: float = 0.0
    recurrence_max_gap: int = 6
    horizon: int = 60
    calendar_months: int = 120
    base_year: int = 2015

    def __post_init__(self):
        if self.n_loans < 1:
            raise GeneratorError("n_loans must be positive")
        if not self.baseline_logit:
            raise GeneratorError("baseline_logit must not be empty")
        for h in (self.censor_hazard, self.cure_hazard):
            if not 0.0 <= h < 1.0:
                raise GeneratorError("competing hazards must lie in [0, 1)")
        if not 0.0 <= self.truncation_probability <= 1.0 \
                or not 0.0 <= self.recurrence_probability <= 1.0:
            raise GeneratorError("probabilities must lie in [0, 1]")
        if self.horizon < 1 or self.calendar_months < 2:
            raise GeneratorError("horizon/calendar window too small")
        for h in self.true_hazard({c.name: _neutral(c)
                                   for c in self.covariates},
                                  range(1, len(self.baseline_logit) + 1)):
            if not 0.0 < h < 1.0:
                raise GeneratorError("event hazards must lie in (0, 1)")

    def schema(self) -> CovariateSchema:
        numeric = tuple(c.name for c in self.covariates
                        if isinstance(c, NumericCovariate))
        categorical = {c.name: tuple(c.levels) for c in self.covariates
                       if isinstance(c, CategoricalCovariate)}
        return CovariateSchema(numeric=numeric, categorical=categorical)

    def logit_effect(self, covariates: Mapping) -> float:
        total = 0.0
        for name, effect in self.effects.items():
            value = covariates[name]
            if isinstance(effect, Mapping):
                total += float(effect.get(str(value), 0.0))
            else:
                total += float(effect) * float(value)
        return total

    def true_hazard(self, covariates: Mapping, times) -> np.ndarray:
        """h(t, x) = expit(baseline_logit[t] + effects(x))."""
        shift = self.logit_effect(covariates)
        base = np.asarray(self.baseline_logit, dtype=np.float64)
        idx = np.minimum(np.asarray(list(times), dtype=np.int64) - 1,
                         len(base) - 1)
        return 1.0 / (1.0 + np.exp(-(base[idx] + shift)))

    def to_json(self) -> dict:
        covs = []
        for c in self.covariates:
            if isinstance(c, NumericCovariate):
                covs.append({"name": c.name, "kind": "numeric",
                             "dist": c.dist, "mu": c.mu, "sd": c.sd,
                             "lo": c.lo, "hi": c.hi, "step": c.step})
            else:
                covs.append({"name": c.name, "kind": "categorical",
                             "levels": list(c.levels),
                             "probs": list(c.probs)})
        return {
            "n_loans": self.n_loans, "seed": self.seed,
            "baseline_logit": list(self.baseline_logit),
            "covariates": covs, "effects": dict(self.effects),
            "censor_hazard": self.censor_hazard,
            "cure_hazard": self.cure_hazard,
            "truncation_probability": self.truncation_probability,
            "truncation_max_offset": self.truncation_max_offset,
            "recurrence_probability": self.recurrence_probability,
            "recurrence_max_gap": self.recurrence_max_gap,
            "horizon": self.horizon,
            "calendar_months": self.calendar_months,
            "base_year": self.base_year,
        }

    @classmethod
    def from_json(cls, payload: Mapping) -> "GeneratorSpec":
        covs = []
        for raw in payload.get("covariates", ()):
            if raw["kind"] == "numeric":
                covs.append(NumericCovariate(
                    name=raw["name"], dist=raw.get("dist", "normal"),
                    mu=raw.get("mu", 0.0), sd=raw.get("sd", 1.0),
                    lo=raw.get("lo", 0.0), hi=raw.get("hi", 1.0),
                    step=raw.get("step", 0.01)))
            elif raw["kind"] == "categorical":
                covs.append(CategoricalCovariate(
                    name=raw["name"], levels=tuple(raw["levels"]),
                    probs=tuple(raw["probs"])))
            else:
                raise GeneratorError(f"unknown covariate kind {raw['kind']!r}")
        keys = ("censor_hazard", "cure_hazard", "truncation_probability",
                "truncation_max_offset", "recurrence_probability",
                "recurrence_max_gap", "horizon", "calendar_months",
                "base_year")
        extra = {k: payload[k] for k in keys if k in payload}
        return cls(n_loans=payload["n_loans"], seed=payload["seed"],
                   baseline_logit=tuple(payload["baseline_logit"]),
                   covariates=tuple(covs),
                   effects=payload.get("effects", {}), **extra)


def _neutral(covariate):
    if isinstance(covariate, NumericCovariate):
        return 0.0
    return covariate.levels[0]


@dataclass(frozen=True)
class TruthRecord:
    """True per-period law for one generated spell."""

    entry: int
    stop: int
    resolution: Resolution
    times: np.ndarray
    hazard: np.ndarray
    survivor: np.ndarray  # conditional on entry
    event_prob: np.ndarray


@dataclass(frozen=True)
class GroundTruth:
    spells: Mapping  # (loan_id, spell_num) -> TruthRecord

    def __len__(self):
        return len(self.spells)


def _loan_rng(seed: int, loan_index: int):
    # counter-based key -> independent stream per loan, order-free
    key = np.array([seed, loan_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def simulate(spec: GeneratorSpec) -> tuple:
    """Draw a panel and its ground truth from the generator spec.

    Per period the write-off hazard fires first, then the cure hazard,
    then independent censoring; reaching the horizon or the calendar
    window end censors administratively.  Identical seeds reproduce
    identical panels.
    """
    schema = spec.schema()
    spells = {name: [] for name in
              ("loan_id", "spell_num", "entry", "stop", "resolution",
               "loan_age", "calendar")}
    spell_covs = {name: [] for name in schema.names}
    truth: dict = {}

    # the first spell always fits the horizon inside the window; later
    # (recurrent) spells may still hit the window end and censor there
    first_start_cap = max(2, spec.calendar_months - spec.horizon + 1)
    for loan_index in range(spec.n_loans):
        rng = _loan_rng(spec.seed, loan_index)
        loan_id = f"L{loan_index + 1:07d}"
        calendar = int(rng.integers(1, first_start_cap))
        loan_age = int(rng.integers(1, 61))
        spell_num = 0
        while calendar < spec.calendar_months:
            spell_num += 1
            entry = 0
            if spell_num == 1 and spec.truncation_probability > 0.0 \
                    and rng.random() < spec.truncation_probability:
                entry = int(rng.integers(1, spec.truncation_max_offset + 1))
            covariates = {c.name: c.draw(rng) for c in spec.covariates}

            outcome = _draw_spell(spec, rng, covariates, entry, calendar)
            if outcome is None:
                break
            stop, resolution, hazard_path = outcome
            times = np.arange(entry + 1, stop + 1, dtype=np.int64)
            survivor = np.cumprod(1.0 - hazard_path)
            prev = np.concatenate(([1.0], survivor[:-1]))
            truth[(loan_id, spell_num)] = TruthRecord(
                entry=entry, stop=stop, resolution=resolution, times=times,
                hazard=hazard_path, survivor=survivor,
                event_prob=prev * hazard_path)

            spells["loan_id"].append(loan_id)
            spells["spell_num"].append(spell_num)
            spells["entry"].append(entry)
            spells["stop"].append(stop)
            spells["resolution"].append(int(resolution))
            spells["loan_age"].append(loan_age)
            spells["calendar"].append(calendar)
            for name in schema.names:
                spell_covs[name].append(covariates[name])

            n_periods = stop - entry
            calendar += n_periods
            loan_age += n_periods
            if resolution != Resolution.CURED \
                    or rng.random() >= spec.recurrence_probability:
                break
            gap = int(rng.integers(1, spec.recurrence_max_gap + 1))
            calendar += gap
            loan_age += gap

    cols, cov_cols = _expand_rows(spec, schema, spells, spell_covs)
    panel = SpellPanel._from_columns(cols, cov_cols, schema)
    return panel, GroundTruth(spells=truth)


def _expand_rows(spec, schema, spells, spell_covs):
    """Vectorised expansion of per-spell summaries into month-end rows."""
    entry = np.array(spells["entry"], dtype=np.int64)
    stop = np.array(spells["stop"], dtype=np.int64)
    resolution = np.array(spells["resolution"], dtype=np.int64)
    lengths = stop - entry
    total = int(lengths.sum())
    rep = np.repeat(np.arange(len(lengths)), lengths)
    offsets = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    within = np.arange(total) - offsets[rep]

    calendar = np.array(spells["calendar"], dtype=np.int64)[rep] + within
    max_cal = int(calendar.max()) if total else 1
    labels = np.array([_month_label(spec.base_year, i)
                       for i in range(max_cal + 1)], dtype=object)

    cols = {
        "loan_id": np.array(spells["loan_id"], dtype=object)[rep],
        "period": np.array(spells["loan_age"], dtype=np.int64)[rep] + within,
        "spell_num": np.array(spells["spell_num"], dtype=np.int64)[rep],
        "spell_period": entry[rep] + 1 + within,
        "entry_time": entry[rep],
        "stop_time": stop[rep],
        "resolution": resolution[rep],
        "spell_age": lengths[rep],
        "event": ((within == lengths[rep] - 1)
                  & (resolution[rep] == int(Resolution.WRITE_OFF))
                  ).astype(np.int64),
        "reporting_month": labels[calendar],
    }
    cov_cols = {}
    for name in schema.names:
        if schema.kind(name) == "numeric":
            values = np.array(spell_covs[name], dtype=np.float64)
        else:
            values = np.array(spell_covs[name], dtype=object)
        cov_cols[name] = values[rep]
    return cols, cov_cols


def _draw_spell(spec, rng, covariates, entry, calendar):
    """One spell forward from its entry; None when no month is observable."""
    months_left = spec.calendar_months - calendar
    max_len = min(spec.horizon - entry, months_left)
    if max_len < 1:
        return None
    times = np.arange(entry + 1, entry + max_len + 1)
    hazard = spec.true_hazard(covariates, times)
    draws = rng.random((max_len, 3))

    for k in range(max_len):
        t = entry + 1 + k
        if draws[k, 0] < hazard[k]:
            return t, Resolution.WRITE_OFF, hazard[:k + 1]
        if spec.cure_hazard > 0.0 and draws[k, 1] < spec.cure_hazard:
            return t, Resolution.CURED, hazard[:k + 1]
        if spec.censor_hazard > 0.0 and draws[k, 2] < spec.censor_hazard:
            return t, Resolution.CENSORED, hazard[:k + 1]
    return entry + max_len, Resolution.CENSORED, hazard


def _month_label(base_year: int, index: int) -> str:
    year, month = divmod(index - 1, 12)
    return f"{base_year + year}-{month + 1:02d}"


def truth_to_csv(truth: GroundTruth, stream) -> None:
    """Sidecar layout: one row per (spell, period) with the true law."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("loan_id", "spell_num", "spell_period", "true_hazard",
                     "true_survivor", "true_event_prob"))
    for (loan_id, spell_num), record in truth.spells.items():
        for k, t in enumerate(record.times):
            writer.writerow([
                loan_id, spell_num, int(t),
                repr(float(record.hazard[k])),
                repr(float(record.survivor[k])),
                repr(float(record.event_prob[k])),
            ])


def true_survivor_sets(truth: GroundTruth) -> dict:
    """{t: array of true f(t, x_i) over the spells at risk at t}.

    The oracle twin of a model's expected term structure: the same
    survivor-set aggregation, evaluated on the generating law.
    """
    buckets: dict = {}
    for record in truth.spells.values():
        for t, f in zip(record.times, record.event_prob):
            buckets.setdefault(int(t), []).append(float(f))
    return {t: np.array(v) for t, v in sorted(buckets.items())}
