"""Counting-process data model for recurrent default spells.

One panel row per (loan, spell, month-end period).  The module validates
spell structure on ingest, performs loan-clustered train/validation
resampling, and computes resolution-rate representativeness diagnostics.
"""

from __future__ import annotations

import csv
import enum
import io
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

_MONTH_RE = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")

PANEL_BASE_COLUMNS = (
    "loan_id", "period", "spell_num", "spell_period", "entry_time",
    "stop_time", "resolution", "spell_age", "event", "reporting_month",
)


class PanelError(ValueError):
    """Structural violation in a spell panel, reported with its row."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class Resolution(enum.IntEnum):
    WRITE_OFF = 1
    CURED = 2
    CENSORED = 3


_RESOLUTION_CODES = {"WOFF": Resolution.WRITE_OFF, "CURE": Resolution.CURED,
                     "CENS": Resolution.CENSORED}
_RESOLUTION_NAMES = {v: k for k, v in _RESOLUTION_CODES.items()}

CovariateValue = Union[float, str, None]


@dataclass(frozen=True)
class SpellRecord:
    """One month-end observation of a default spell."""

    loan_id: str
    period: int                 # loan age t_i
    spell_num: int
    spell_period: int           # months since (possibly truncated) entry
    entry_time: int
    stop_time: int
    resolution: Resolution
    spell_age: int              # stop_time - entry_time
    event: int                  # write-off flag for this period
    reporting_month: str        # YYYY-MM
    covariates: Mapping[str, CovariateValue] = field(default_factory=dict)


@dataclass(frozen=True)
class CovariateSchema:
    """Declares each covariate as numeric or categorical-with-levels."""

    numeric: tuple = ()
    categorical: Mapping[str, tuple] = field(default_factory=dict)
    numeric_missing_ok: tuple = ()

    @property
    def names(self) -> tuple:
        return tuple(self.numeric) + tuple(self.categorical)

    def kind(self, name: str) -> str:
        if name in self.numeric:
            return "numeric"
        if name in self.categorical:
            return "categorical"
        raise KeyError(f"unknown covariate {name!r}")


class SpellPanel:
    """Validated, immutable collection of spell records.

    Stored columnar for bulk work; ``records`` materialises row objects on
    demand.  All spell invariants are enforced at construction.
    """

    def __init__(self, records: Sequence[SpellRecord],
                 schema: Optional[CovariateSchema] = None):
        schema = schema or CovariateSchema()
        cols = {name: [] for name in PANEL_BASE_COLUMNS}
        cov_cols = {name: [] for name in schema.names}
        for rec in records:
            cols["loan_id"].append(rec.loan_id)
            cols["period"].append(rec.period)
            cols["spell_num"].append(rec.spell_num)
            cols["spell_period"].append(rec.spell_period)
            cols["entry_time"].append(rec.entry_time)
            cols["stop_time"].append(rec.stop_time)
            cols["resolution"].append(int(rec.resolution))
            cols["spell_age"].append(rec.spell_age)
            cols["event"].append(rec.event)
            cols["reporting_month"].append(rec.reporting_month)
            for name in schema.names:
                cov_cols[name].append(rec.covariates.get(name))
        self._init_columnar(cols, cov_cols, schema)

    @classmethod
    def _from_columns(cls, cols, cov_cols, schema) -> "SpellPanel":
        panel = cls.__new__(cls)
        panel._init_columnar(cols, cov_cols, schema)
        return panel

    def _init_columnar(self, cols, cov_cols, schema):
        self.schema = schema
        self.loan_id = np.array(cols["loan_id"], dtype=object)
        for name in ("period", "spell_num", "spell_period", "entry_time",
                     "stop_time", "resolution", "spell_age", "event"):
            setattr(self, name, np.array(cols[name], dtype=np.int64))
        self.reporting_month = np.array(cols["reporting_month"], dtype=object)
        self.covariates = {}
        for name in schema.names:
            vals = cov_cols[name]
            if schema.kind(name) == "numeric":
                if isinstance(vals, np.ndarray) and vals.dtype == np.float64:
                    arr = vals.copy()
                else:
                    arr = np.array(
                        [np.nan if v is None else float(v) for v in vals],
                        dtype=np.float64)
            else:
                arr = np.array(vals, dtype=object)
            self.covariates[name] = arr
        self._validate()
        self._records_cache = None

    # -- structure -----------------------------------------------------

    def __len__(self) -> int:
        return len(self.loan_id)

    @property
    def n_loans(self) -> int:
        return len(set(self.loan_id.tolist()))

    @property
    def n_spells(self) -> int:
        return len(self._spell_slices())

    @property
    def records(self) -> list:
        if self._records_cache is None:
            self._records_cache = list(self.iter_records())
        return self._records_cache

    def iter_records(self):
        for i in range(len(self)):
            yield SpellRecord(
                loan_id=str(self.loan_id[i]),
                period=int(self.period[i]),
                spell_num=int(self.spell_num[i]),
                spell_period=int(self.spell_period[i]),
                entry_time=int(self.entry_time[i]),
                stop_time=int(self.stop_time[i]),
                resolution=Resolution(int(self.resolution[i])),
                spell_age=int(self.spell_age[i]),
                event=int(self.event[i]),
                reporting_month=str(self.reporting_month[i]),
                covariates={n: _scalar(self.covariates[n][i])
                            for n in self.schema.names},
            )

    def _spell_boundaries(self):
        """Start/end row indices of the contiguous (loan, spell) runs."""
        n = len(self)
        if n == 0:
            return (np.array([], dtype=np.int64), np.array([], dtype=np.int64))
        same = ((self.loan_id[1:] == self.loan_id[:-1])
                & (self.spell_num[1:] == self.spell_num[:-1]))
        starts = np.flatnonzero(np.concatenate(([True], ~same)))
        ends = np.append(starts[1:], n)
        return starts, ends

    def _spell_slices(self):
        starts, ends = self._spell_boundaries()
        return list(zip(starts.tolist(), ends.tolist()))

    def spell_frame(self) -> dict:
        """One entry per spell: keys, exposure, outcome and the covariates
        observed at the spell's first period (cross-sectional view)."""
        slices = self._spell_slices()
        first = np.array([s for s, _ in slices], dtype=np.int64)
        last = np.array([e - 1 for _, e in slices], dtype=np.int64)
        out = {
            "loan_id": self.loan_id[first],
            "spell_num": self.spell_num[first],
            "entry": self.entry_time[first],
            "stop": self.stop_time[first],
            "duration": self.spell_age[first],
            "resolution": self.resolution[first],
            "event": (self.resolution[first] == int(Resolution.WRITE_OFF)
                      ).astype(np.int64),
            "final_month": self.reporting_month[last],
            "covariates": {n: self.covariates[n][first]
                           for n in self.schema.names},
        }
        return out

    # -- validation ----------------------------------------------------

    def _validate(self):
        n = len(self)
        if n == 0:
            return

        def first_bad(mask, message):
            idx = np.flatnonzero(mask)
            if idx.size:
                raise PanelError(message, row=int(idx[0]) + 1)

        first_bad(self.spell_num < 1, "spell_num must be positive")
        first_bad(self.spell_period < 1, "spell_period must be positive")
        first_bad((self.entry_time < 0) | (self.stop_time < 0),
                  "entry/stop times must be non-negative")
        first_bad((self.event != 0) & (self.event != 1),
                  "event flag must be 0 or 1")
        first_bad(self.spell_age != self.stop_time - self.entry_time,
                  "spell_age must equal stop_time - entry_time")

        for month in sorted({str(m) for m in self.reporting_month.tolist()}):
            if not _MONTH_RE.match(month):
                bad = np.flatnonzero(self.reporting_month == month)
                raise PanelError(
                    f"reporting_month {month!r} is not YYYY-MM",
                    row=int(bad[0]) + 1)

        starts, ends = self._spell_boundaries()
        has_prev = np.ones(n, dtype=bool)
        has_prev[starts] = False  # rows preceded by a row of the same spell

        def prev_change(values):
            diff = np.zeros(n, dtype=bool)
            diff[1:] = values[1:] != values[:-1]
            return has_prev & diff

        first_bad(prev_change(self.resolution),
                  "resolution type changes within a spell")
        first_bad(prev_change(self.entry_time)
                  | prev_change(self.stop_time),
                  "entry/stop times change within a spell")

        step = np.zeros(n, dtype=np.int64)
        step[1:] = self.spell_period[1:] - self.spell_period[:-1]
        broken = np.flatnonzero(has_prev & (step != 1))
        if broken.size:
            i = int(broken[0])
            if step[i] == 0:
                key = (str(self.loan_id[i]), int(self.spell_num[i]),
                       int(self.spell_period[i]))
                raise PanelError(f"duplicate composite key {key}", row=i + 1)
            raise PanelError("non-contiguous spell periods", row=i + 1)

        bad_first = starts[self.spell_period[starts]
                           != self.entry_time[starts] + 1]
        if bad_first.size:
            i = int(bad_first[0])
            raise PanelError(
                f"first spell period {int(self.spell_period[i])} must equal "
                "entry_time + 1", row=i + 1)

        last = ends - 1
        resolved = ((self.resolution[last] == int(Resolution.WRITE_OFF))
                    | (self.resolution[last] == int(Resolution.CURED)))
        bad_end = last[resolved
                       & (self.spell_period[last] != self.stop_time[last])]
        if bad_end.size:
            raise PanelError("resolved spell must end at its stop time",
                             row=int(bad_end[0]) + 1)
        overrun = last[self.spell_period[last] > self.stop_time[last]]
        if overrun.size:
            raise PanelError("spell periods run past the stop time",
                             row=int(overrun[0]) + 1)

        is_last = np.zeros(n, dtype=bool)
        is_last[last] = True
        woff = self.resolution == int(Resolution.WRITE_OFF)
        flagged = self.event == 1
        first_bad(flagged & woff & ~is_last, "event flag before final period")
        first_bad(flagged & ~woff,
                  "event flag inconsistent with resolution type")
        first_bad(woff & is_last & ~flagged,
                  "written-off spell must flag the event in its final period")

        seen = set()
        for i in starts.tolist():
            key = (str(self.loan_id[i]), int(self.spell_num[i]))
            if key in seen:
                raise PanelError(
                    f"rows of spell {key} are not contiguous in the panel "
                    "(duplicate composite keys or interleaved spells)",
                    row=i + 1)
            seen.add(key)

        for name in self.schema.names:
            self._validate_covariate(name)

    def _validate_covariate(self, name: str):
        kind = self.schema.kind(name)
        arr = self.covariates[name]
        if kind == "numeric":
            if (name not in self.schema.numeric_missing_ok
                    and np.any(np.isnan(arr))):
                i = int(np.flatnonzero(np.isnan(arr))[0])
                raise PanelError(
                    f"missing value in numeric covariate {name!r} "
                    "(schema does not allow missing)", row=i + 1)
        else:
            levels = set(self.schema.categorical[name])
            observed = {v for v in set(arr.tolist()) if v is not None}
            for v in sorted(observed - levels, key=str):
                bad = np.flatnonzero(arr == v)
                raise PanelError(
                    f"value {v!r} outside declared levels of {name!r}",
                    row=int(bad[0]) + 1)


def _scalar(v):
    if v is None:
        return None
    if isinstance(v, float) and np.isnan(v):
        return None
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


# -- ingest / serialise ------------------------------------------------


def ingest_panel(stream, schema: CovariateSchema) -> SpellPanel:
    """Parse and validate a panel CSV (see module docs for the layout).

    Accepts a text or UTF-8 byte stream.  Covariate columns must match the
    schema exactly; empty cells mark missing values.  Every structural
    violation raises ``PanelError`` with the offending data row number
    (header excluded).
    """
    if isinstance(stream, (str, bytes)):
        raise TypeError("pass an open stream, not a path or a blob")
    if isinstance(stream, (io.RawIOBase, io.BufferedIOBase)):
        stream = io.TextIOWrapper(stream, encoding="utf-8", newline="")
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise PanelError("missing header row") from None
    expected = list(PANEL_BASE_COLUMNS) + list(schema.names)
    if header != expected:
        unknown = [c for c in header if c not in expected]
        if unknown:
            raise PanelError(f"unknown covariate column(s) {unknown}")
        raise PanelError(
            f"header mismatch: expected {expected}, found {header}")

    cols = {name: [] for name in PANEL_BASE_COLUMNS}
    cov_cols = {name: [] for name in schema.names}
    for rownum, raw in enumerate(reader, start=1):
        if len(raw) != len(expected):
            raise PanelError(
                f"expected {len(expected)} cells, found {len(raw)}",
                row=rownum)
        base = dict(zip(PANEL_BASE_COLUMNS, raw[:len(PANEL_BASE_COLUMNS)]))
        cols["loan_id"].append(base["loan_id"])
        for name in ("period", "spell_num", "spell_period", "entry_time",
                     "stop_time", "spell_age", "event"):
            cols[name].append(_parse_int(base[name], name, rownum))
        code = base["resolution"]
        if code not in _RESOLUTION_CODES:
            raise PanelError(f"unparsable resolution code {code!r}",
                             row=rownum)
        cols["resolution"].append(int(_RESOLUTION_CODES[code]))
        cols["reporting_month"].append(base["reporting_month"])
        for name, cell in zip(schema.names, raw[len(PANEL_BASE_COLUMNS):]):
            if cell == "":
                cov_cols[name].append(None)
            elif schema.kind(name) == "numeric":
                try:
                    cov_cols[name].append(float(cell))
                except ValueError:
                    raise PanelError(
                        f"unparsable numeric cell {cell!r} in {name!r}",
                        row=rownum) from None
            else:
                cov_cols[name].append(cell)

    return SpellPanel._from_columns(cols, cov_cols, schema)


def _parse_int(cell: str, name: str, rownum: int) -> int:
    try:
        return int(cell)
    except ValueError:
        raise PanelError(f"unparsable integer cell {cell!r} in {name!r}",
                         row=rownum) from None


def serialize_panel(panel: SpellPanel, stream) -> None:
    """Write a panel back to the canonical CSV layout (ingest round-trips)."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(list(PANEL_BASE_COLUMNS) + list(panel.schema.names))
    for i in range(len(panel)):
        row = [
            str(panel.loan_id[i]),
            int(panel.period[i]),
            int(panel.spell_num[i]),
            int(panel.spell_period[i]),
            int(panel.entry_time[i]),
            int(panel.stop_time[i]),
            _RESOLUTION_NAMES[Resolution(int(panel.resolution[i]))],
            int(panel.spell_age[i]),
            int(panel.event[i]),
            str(panel.reporting_month[i]),
        ]
        for name in panel.schema.names:
            v = panel.covariates[name][i]
            if v is None or (isinstance(v, float) and np.isnan(v)):
                row.append("")
            elif panel.schema.kind(name) == "numeric":
                row.append(repr(float(v)))
            else:
                row.append(str(v))
        writer.writerow(row)


# -- clustered resampling ----------------------------------------------


def clustered_split(panel: SpellPanel, train_fraction: float,
                    seed: int) -> tuple:
    """Split a panel into train/validation sets along whole loans.

    Every loan's full history lands in exactly one side; the train side
    receives round(train_fraction * n_loans) loans (half away from zero).
    Deterministic given the seed.
    """
    if not 0.0 < train_fraction < 1.0:
        raise PanelError("train_fraction must lie strictly inside (0, 1)")
    if len(panel) == 0:
        raise PanelError("cannot split an empty panel")

    loans = sorted(set(panel.loan_id.tolist()))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(loans))
    n_train = int(np.floor(train_fraction * len(loans) + 0.5))
    train_loans = {loans[i] for i in order[:n_train]}

    in_train = np.array([lid in train_loans for lid in panel.loan_id],
                        dtype=bool)
    return (_subset(panel, in_train), _subset(panel, ~in_train))


def _subset(panel: SpellPanel, mask: np.ndarray) -> SpellPanel:
    cols = {
        "loan_id": panel.loan_id[mask].tolist(),
        "period": panel.period[mask].tolist(),
        "spell_num": panel.spell_num[mask].tolist(),
        "spell_period": panel.spell_period[mask].tolist(),
        "entry_time": panel.entry_time[mask].tolist(),
        "stop_time": panel.stop_time[mask].tolist(),
        "resolution": panel.resolution[mask].tolist(),
        "spell_age": panel.spell_age[mask].tolist(),
        "event": panel.event[mask].tolist(),
        "reporting_month": panel.reporting_month[mask].tolist(),
    }
    cov_cols = {n: panel.covariates[n][mask].tolist()
                for n in panel.schema.names}
    return SpellPanel._from_columns(cols, cov_cols, panel.schema)


# -- resolution rates ---------------------------------------------------


@dataclass(frozen=True)
class ResolutionRateSeries:
    """Per calendar month: cohort size and the rate of each outcome type.

    Cohorts key on the month a spell stops (resolution/censoring date);
    months without any stopping spell are absent, never zero-filled.
    """

    months: tuple
    sizes: Mapping[str, int]
    rates: Mapping[str, tuple]  # month -> (write-off, cured, censored)

    def rate(self, month: str, resolution: Resolution) -> float:
        return self.rates[month][int(resolution) - 1]


def resolution_rates(panel: SpellPanel) -> ResolutionRateSeries:
    """Monthly resolution rates r_psi, keyed on each spell's final month."""
    frame = panel.spell_frame()
    tallies: dict = {}
    for month, res in zip(frame["final_month"], frame["resolution"]):
        month = str(month)
        counts = tallies.setdefault(month, [0, 0, 0])
        counts[int(res) - 1] += 1
    months = tuple(sorted(tallies))
    sizes = {m: sum(tallies[m]) for m in months}
    rates = {m: tuple(cnt / sizes[m] for cnt in tallies[m]) for m in months}
    return ResolutionRateSeries(months=months, sizes=sizes, rates=rates)


def average_discrepancy(a: ResolutionRateSeries, b: ResolutionRateSeries,
                        resolution: Resolution) -> float:
    """MAE between two series' rates of one type over their shared months."""
    shared = sorted(set(a.months) & set(b.months))
    if not shared:
        raise PanelError("resolution-rate series share no months")
    idx = int(resolution) - 1
    diffs = [abs(a.rates[m][idx] - b.rates[m][idx]) for m in shared]
    return float(np.mean(diffs))


def month_overlap(a: ResolutionRateSeries, b: ResolutionRateSeries) -> dict:
    """Shared-month bookkeeping behind the AD measure.

    Months present on one side only are skipped by the MAE; their counts
    are what this reports.
    """
    shared = set(a.months) & set(b.months)
    return {"shared": len(shared),
            "only_first": len(set(a.months) - shared),
            "only_second": len(set(b.months) - shared)}
