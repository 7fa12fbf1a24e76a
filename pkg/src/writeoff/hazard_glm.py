"""Logit-link GLM engine for write-off risk.

One fitting core drives two model families: the cross-sectional model
(one row per spell, response = written-off) and the discrete-time hazard
model (one row per spell-period, response = the period event flag, with
period indicators carrying the baseline hazard).  Fitting is full-Newton
iteratively reweighted least squares with step halving.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

PERIOD_COLUMN = "spell_period"
ETA_CLAMP = 35.0


class GlmError(ValueError):
    pass


class SeparationError(GlmError):
    """Coefficients diverged: (quasi-)separated design."""


class SingularError(GlmError):
    """Weighted normal equations are singular."""


# -- schema -----------------------------------------------------------------


@dataclass(frozen=True)
class NumericTerm:
    name: str


@dataclass(frozen=True)
class CategoricalTerm:
    name: str
    ref: Optional[str] = None
    levels: Optional[tuple] = None  # bound at fit; excludes the reference


@dataclass(frozen=True)
class PeriodTerm:
    periods: Optional[tuple] = None  # bound at fit


@dataclass(frozen=True)
class InteractionTerm:
    left: Union[NumericTerm, CategoricalTerm]
    right: Union[NumericTerm, CategoricalTerm]


Term = Union[NumericTerm, CategoricalTerm, PeriodTerm, InteractionTerm]


@dataclass(frozen=True)
class DesignSchema:
    """Ordered design terms; period block and intercept are exclusive."""

    response: str
    mode: str  # "hazard" | "crosssection"
    terms: tuple
    intercept: bool = True

    def __post_init__(self):
        has_period = any(isinstance(t, PeriodTerm) for t in self.terms)
        if has_period and self.intercept:
            raise GlmError(
                "period-indicator block and intercept are mutually exclusive")
        if has_period and self.mode != "hazard":
            raise GlmError("period() only applies to the hazard model")
        if self.mode not in ("hazard", "crosssection"):
            raise GlmError(f"unknown design mode {self.mode!r}")


def parse_formula(formula: str,
                  covariate_schema: Optional[Mapping] = None) -> DesignSchema:
    """Parse ``response ~ term + ...`` into an unbound design schema.

    The response name selects the mode: ``event`` fits the discrete-time
    hazard on spell-period rows, ``writeoff`` the cross-sectional model on
    one row per spell.  Terms: bare column names, ``period()``,
    ``C(name)`` / ``C(name, ref=LEVEL)``, products ``a:b``, and the
    literals ``1``/``0`` to force or drop the intercept.
    """
    if "~" not in formula:
        raise GlmError("formula needs the form 'response ~ terms'")
    lhs, rhs = formula.split("~", 1)
    response = lhs.strip()
    if response == "event":
        mode = "hazard"
    elif response == "writeoff":
        mode = "crosssection"
    else:
        raise GlmError(
            f"response must be 'event' or 'writeoff', not {response!r}")

    terms = []
    intercept: Optional[bool] = None
    has_period = False
    for token in (tok.strip() for tok in rhs.split("+")):
        if not token:
            raise GlmError("empty term in formula")
        if token == "1":
            intercept = True
        elif token == "0":
            intercept = False
        elif token == "period()":
            has_period = True
            terms.append(PeriodTerm())
        elif ":" in token:
            left, right = (s.strip() for s in token.split(":", 1))
            terms.append(InteractionTerm(
                left=_parse_simple_term(left, covariate_schema),
                right=_parse_simple_term(right, covariate_schema)))
        else:
            terms.append(_parse_simple_term(token, covariate_schema))

    if has_period:
        if intercept:
            raise GlmError(
                "period-indicator block and intercept are mutually exclusive")
        intercept = False
    if intercept is None:
        intercept = True
    return DesignSchema(response=response, mode=mode, terms=tuple(terms),
                        intercept=intercept)


def _parse_simple_term(token: str, covariate_schema):
    if token.startswith("C(") and token.endswith(")"):
        inner = token[2:-1]
        parts = [p.strip() for p in inner.split(",")]
        name = parts[0]
        ref = None
        for extra in parts[1:]:
            if extra.startswith("ref="):
                ref = extra[4:].strip()
            else:
                raise GlmError(f"unsupported C() argument {extra!r}")
        return CategoricalTerm(name=name, ref=ref)
    if "(" in token or ")" in token:
        raise GlmError(f"unparsable term {token!r}")
    kind = _schema_kind(token, covariate_schema)
    if kind == "categorical":
        return CategoricalTerm(name=token)
    return NumericTerm(name=token)


def _schema_kind(name, covariate_schema):
    if covariate_schema is None:
        return "numeric"
    try:
        kind = covariate_schema.kind(name)  # spell_data.CovariateSchema
    except AttributeError:
        kind = covariate_schema.get(name, "numeric")
    except KeyError:
        return "numeric"
    return kind


# -- design construction ------------------------------------------------------


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    columns: tuple
    schema: DesignSchema  # bound
    extrapolated_rows: int = 0


def build_design(data: Mapping[str, np.ndarray], schema: DesignSchema,
                 bind: bool = False) -> DesignMatrix:
    """Assemble the dense design matrix in deterministic column order.

    ``bind=True`` binds categorical levels (reference level dropped) and
    the observed period block from the data; a bound schema afterwards
    rejects unseen categorical levels and maps periods past the fitted
    block onto the final period's indicator (counted in
    ``extrapolated_rows``).
    """
    n = _data_length(data)
    blocks = []
    names = []
    bound_terms = []
    extrapolated = 0
    if schema.intercept:
        blocks.append(np.ones((n, 1)))
        names.append("intercept")
    for term in schema.terms:
        bound = _bind_term(term, data, bind)
        bound_terms.append(bound)
        cols, labels, extra = _encode_term(bound, data, n)
        blocks.append(cols)
        names.extend(labels)
        extrapolated += extra
    x = np.hstack(blocks) if blocks else np.empty((n, 0))
    if bind:  # rank matters only where normal equations get solved
        _reject_duplicate_columns(x, names)
    bound_schema = DesignSchema(response=schema.response, mode=schema.mode,
                                terms=tuple(bound_terms),
                                intercept=schema.intercept)
    return DesignMatrix(values=x, columns=tuple(names), schema=bound_schema,
                        extrapolated_rows=extrapolated)


def _data_length(data) -> int:
    for v in data.values():
        return len(np.asarray(v))
    raise GlmError("design data has no columns")


def _column(data, name, n) -> np.ndarray:
    if name not in data:
        raise GlmError(f"design column {name!r} missing from data")
    arr = np.asarray(data[name])
    if len(arr) != n:
        raise GlmError(f"column {name!r} length mismatch")
    return arr


def _bind_term(term: Term, data, bind: bool) -> Term:
    if isinstance(term, CategoricalTerm) and (bind or term.levels is None):
        if not bind:
            raise GlmError(f"term {term.name!r} is unbound; fit first")
        values = _column(data, term.name, _data_length(data))
        observed = sorted({str(v) for v in values.tolist() if v is not None})
        if not observed:
            raise GlmError(f"categorical {term.name!r} has no observed levels")
        ref = term.ref if term.ref is not None else observed[0]
        if ref not in observed and term.ref is not None:
            observed = [ref] + observed
        levels = tuple(lvl for lvl in observed if lvl != ref)
        return CategoricalTerm(name=term.name, ref=ref, levels=levels)
    if isinstance(term, PeriodTerm) and (bind or term.periods is None):
        if not bind:
            raise GlmError("period block is unbound; fit first")
        periods = _column(data, PERIOD_COLUMN, _data_length(data))
        return PeriodTerm(periods=tuple(
            int(p) for p in np.unique(np.asarray(periods, dtype=np.int64))))
    if isinstance(term, InteractionTerm):
        return InteractionTerm(left=_bind_term(term.left, data, bind),
                               right=_bind_term(term.right, data, bind))
    return term


def _encode_term(term: Term, data, n):
    if isinstance(term, NumericTerm):
        values = _column(data, term.name, n)
        col = np.asarray(
            [np.nan if v is None else float(v) for v in values.tolist()],
            dtype=np.float64)
        if np.any(np.isnan(col)):
            raise GlmError(f"missing value in numeric design column "
                           f"{term.name!r}")
        return col.reshape(-1, 1), [term.name], 0
    if isinstance(term, CategoricalTerm):
        values = _column(data, term.name, n)
        known = set(term.levels) | {term.ref}
        cols = np.zeros((n, len(term.levels)))
        index = {lvl: j for j, lvl in enumerate(term.levels)}
        for i, v in enumerate(values.tolist()):
            if v is None:
                raise GlmError(
                    f"missing value in categorical design column "
                    f"{term.name!r}; encode an explicit missing level")
            label = str(v)
            if label not in known:
                raise GlmError(
                    f"unseen level {label!r} of {term.name!r} at predict time")
            j = index.get(label)
            if j is not None:
                cols[i, j] = 1.0
        labels = [f"{term.name}[{lvl}]" for lvl in term.levels]
        return cols, labels, 0
    if isinstance(term, PeriodTerm):
        raw = np.asarray(_column(data, PERIOD_COLUMN, n), dtype=np.int64)
        periods = np.asarray(term.periods, dtype=np.int64)
        cols = np.zeros((n, len(periods)))
        extrapolated = 0
        last = len(periods) - 1
        pos = {int(p): j for j, p in enumerate(periods)}
        for i, p in enumerate(raw.tolist()):
            j = pos.get(int(p))
            if j is None:
                if p > periods[-1]:
                    # beyond the fitted block: reuse the final period's
                    # coefficient and count the extrapolation
                    j = last
                    extrapolated += 1
                else:
                    raise GlmError(
                        f"spell period {p} unseen in the fitted block")
            cols[i, j] = 1.0
        labels = [f"period[{int(p)}]" for p in periods]
        return cols, labels, extrapolated
    if isinstance(term, InteractionTerm):
        left_cols, left_names, e1 = _encode_term(term.left, data, n)
        right_cols, right_names, e2 = _encode_term(term.right, data, n)
        blocks = []
        labels = []
        for i, ln in enumerate(left_names):
            for j, rn in enumerate(right_names):
                blocks.append((left_cols[:, i] * right_cols[:, j])
                              .reshape(-1, 1))
                labels.append(f"{ln}:{rn}")
        return np.hstack(blocks), labels, e1 + e2
    raise GlmError(f"unknown term {term!r}")


def _reject_duplicate_columns(x, names):
    seen = {}
    for j in range(x.shape[1]):
        key = x[:, j].tobytes()
        if key in seen:
            raise GlmError(
                f"design is rank deficient: column {names[j]!r} duplicates "
                f"{names[seen[key]]!r}")
        seen[key] = j


# -- panel adapters ------------------------------------------------------------


def hazard_rows(panel) -> tuple:
    """Counting-process rows: every panel record, response = event flag."""
    data = {PERIOD_COLUMN: panel.spell_period.copy()}
    for name in panel.schema.names:
        data[name] = panel.covariates[name]
    return data, panel.event.astype(np.float64)


def crosssection_rows(panel) -> tuple:
    """One row per spell with first-period covariates; response = write-off."""
    frame = panel.spell_frame()
    data = dict(frame["covariates"])
    return data, frame["event"].astype(np.float64)


# -- fitting --------------------------------------------------------------------


@dataclass(frozen=True)
class Convergence:
    converged: bool
    iterations: int
    deviance: float
    gradient_max_norm: float
    deviance_trace: tuple


@dataclass(frozen=True)
class GlmModel:
    schema: DesignSchema
    columns: tuple
    coefficients: np.ndarray
    convergence: Convergence
    n_rows: int
    n_events: int


def _expit(eta):
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -ETA_CLAMP, ETA_CLAMP)))


def _deviance(x, y, beta):
    eta = x @ beta
    loglik = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    return -2.0 * loglik


def fit_irls(design: Union[DesignMatrix, np.ndarray], response,
             tol: float = 1e-8, max_iter: int = 100,
             schema: Optional[DesignSchema] = None,
             columns: Optional[Sequence[str]] = None) -> GlmModel:
    """Maximise the Bernoulli log-likelihood by Newton IRLS.

    Stops when the gradient max-norm drops below ``tol`` or the relative
    deviance change falls under 1e-10.  Separation (diverging coefficients
    at the iteration cap) raises :class:`SeparationError`; plain
    non-convergence returns a model flagged ``converged=False``.
    """
    if isinstance(design, DesignMatrix):
        x = design.values
        schema = design.schema
        columns = design.columns
    else:
        x = np.asarray(design, dtype=np.float64)
        if schema is None:
            schema = DesignSchema(response="event", mode="hazard", terms=(),
                                  intercept=False)
        columns = tuple(columns or (f"x{j}" for j in range(x.shape[1])))
    y = np.asarray(response, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise GlmError("design and response lengths differ")
    n_events = int(np.sum(y == 1.0))
    if n_events == 0 or n_events == y.shape[0]:
        raise GlmError("response needs at least one event and one non-event")

    p = x.shape[1]
    beta = np.zeros(p)
    deviance = _deviance(x, y, beta)
    trace = [deviance]
    grad_norm = math.inf
    converged = False
    iteration = 0

    while iteration < max_iter:
        iteration += 1
        mu = _expit(x @ beta)
        grad = x.T @ (y - mu)
        grad_norm = float(np.max(np.abs(grad))) if p else 0.0
        if grad_norm < tol:
            converged = True
            break
        w = mu * (1.0 - mu)
        hessian = x.T @ (x * w[:, None])
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            raise SingularError(
                "singular weighted normal equations") from None

        candidate = beta + step
        new_dev = _deviance(x, y, candidate)
        halvings = 0
        while new_dev > deviance + 1e-12 and halvings < 30:
            step = step / 2.0
            candidate = beta + step
            new_dev = _deviance(x, y, candidate)
            halvings += 1
        if new_dev > deviance + 1e-12:
            break  # no descent direction left at working precision
        beta = candidate
        rel_change = abs(deviance - new_dev) / (abs(deviance) + 1e-300)
        deviance = new_dev
        trace.append(deviance)
        if rel_change < 1e-10:
            mu = _expit(x @ beta)
            grad_norm = float(np.max(np.abs(x.T @ (y - mu)))) if p else 0.0
            converged = True
            break

    # a separated design either exhausts max_iter with runaway coefficients
    # or "converges" onto a saturated fit; with both classes present no
    # finite-coefficient model reaches deviance ~ 0
    scale = x.std(axis=0)
    scaled = np.abs(beta) * np.where(scale > 0, scale, 0.0)
    if scaled.size and float(np.max(scaled)) > 30.0:
        worst = columns[int(np.argmax(scaled))]
        raise SeparationError(
            f"coefficients diverged (|beta| > 30 on standardised column "
            f"{worst!r}); the design is (quasi-)separated")
    if deviance < 1e-4:
        raise SeparationError(
            "fit is saturated (deviance ~ 0): the design perfectly "
            "separates the response")

    return GlmModel(schema=schema, columns=tuple(columns),
                    coefficients=beta,
                    convergence=Convergence(
                        converged=converged, iterations=iteration,
                        deviance=deviance, gradient_max_norm=grad_norm,
                        deviance_trace=tuple(trace)),
                    n_rows=x.shape[0], n_events=n_events)


def fit_glm(panel, formula: str, tol: float = 1e-8,
            max_iter: int = 100) -> GlmModel:
    """Formula-driven fit on a spell panel (mode follows the response)."""
    schema = parse_formula(formula, panel.schema)
    data, y = (hazard_rows(panel) if schema.mode == "hazard"
               else crosssection_rows(panel))
    design = build_design(data, schema, bind=True)
    return fit_irls(design, y, tol=tol, max_iter=max_iter)


# -- prediction -------------------------------------------------------------------


@dataclass(frozen=True)
class HazardPrediction:
    """Per-spell hazard path with derived survivor and event probability.

    survivor[k] = prod_{u<=t_k} (1 - hazard[u]) conditional on entry;
    event_prob[k] = survivor[k-1] * hazard[k].
    """

    times: np.ndarray
    hazard: np.ndarray
    survivor: np.ndarray
    event_prob: np.ndarray
    extrapolated: int = 0

    def event_prob_at(self, t: int) -> float:
        k = int(np.searchsorted(self.times, t))
        if k < len(self.times) and self.times[k] == t:
            return float(self.event_prob[k])
        raise KeyError(f"time {t} outside predicted path")


def _compose_prediction(times, hazard, extrapolated=0) -> HazardPrediction:
    survivor = np.cumprod(1.0 - hazard)
    prev = np.concatenate(([1.0], survivor[:-1]))
    return HazardPrediction(times=np.asarray(times, dtype=np.int64),
                            hazard=hazard, survivor=survivor,
                            event_prob=prev * hazard,
                            extrapolated=extrapolated)


def predict_hazard(model: GlmModel, path: Mapping, horizon: int
                   ) -> HazardPrediction:
    """Hazard/survivor/event-probability curves over t = 1..horizon.

    ``path`` maps covariate names to scalars (time-fixed) or length-
    ``horizon`` sequences (time-varying).  Periods beyond the fitted
    indicator block reuse the final period's coefficient and are counted
    in ``extrapolated``.
    """
    if model.schema.mode != "hazard":
        raise GlmError("predict_hazard needs a hazard-mode model")
    if horizon < 1:
        raise GlmError("horizon must be at least 1")
    times = np.arange(1, horizon + 1, dtype=np.int64)
    data = {PERIOD_COLUMN: times}
    for name, value in path.items():
        arr = np.asarray(value, dtype=object)
        if arr.ndim == 0:
            arr = np.full(horizon, arr[()], dtype=object)
        elif len(arr) != horizon:
            raise GlmError(
                f"covariate path {name!r} must cover 1..{horizon}")
        data[name] = arr
    design = build_design(data, model.schema, bind=False)
    hazard = _expit(design.values @ model.coefficients)
    return _compose_prediction(times, hazard, design.extrapolated_rows)


def predict_hazard_panel(model: GlmModel, panel) -> dict:
    """Observed-path predictions for every spell in a panel.

    Returns (loan_id, spell_num) -> HazardPrediction over the spell's
    observed periods; survival is conditional on the spell's entry, so a
    left-truncated spell starts from S(entry) = 1.
    """
    if model.schema.mode != "hazard":
        raise GlmError("predict_hazard_panel needs a hazard-mode model")
    data, _ = hazard_rows(panel)
    design = build_design(data, model.schema, bind=False)
    hazard = _expit(design.values @ model.coefficients)

    out = {}
    for start, end in panel._spell_slices():
        key = (str(panel.loan_id[start]), int(panel.spell_num[start]))
        out[key] = _compose_prediction(
            panel.spell_period[start:end], hazard[start:end])
    return out


def predict_crosssection(model: GlmModel, covariates: Mapping) -> np.ndarray:
    """Write-off probabilities for spell-level covariates."""
    if model.schema.mode != "crosssection":
        raise GlmError("predict_crosssection needs a crosssection-mode model")
    design = build_design(dict(covariates), model.schema, bind=False)
    return _expit(design.values @ model.coefficients)


# -- serialisation -----------------------------------------------------------------


def _term_to_json(term: Term) -> dict:
    if isinstance(term, NumericTerm):
        return {"type": "numeric", "name": term.name}
    if isinstance(term, CategoricalTerm):
        return {"type": "categorical", "name": term.name, "ref": term.ref,
                "levels": list(term.levels or ())}
    if isinstance(term, PeriodTerm):
        return {"type": "period", "periods": list(term.periods or ())}
    if isinstance(term, InteractionTerm):
        return {"type": "interaction", "left": _term_to_json(term.left),
                "right": _term_to_json(term.right)}
    raise GlmError(f"unknown term {term!r}")


def _term_from_json(payload) -> Term:
    kind = payload["type"]
    if kind == "numeric":
        return NumericTerm(name=payload["name"])
    if kind == "categorical":
        return CategoricalTerm(name=payload["name"], ref=payload["ref"],
                               levels=tuple(payload["levels"]))
    if kind == "period":
        return PeriodTerm(periods=tuple(payload["periods"]))
    if kind == "interaction":
        return InteractionTerm(left=_term_from_json(payload["left"]),
                               right=_term_from_json(payload["right"]))
    raise GlmError(f"unknown term payload {payload!r}")


def model_to_json(model: GlmModel) -> dict:
    return {
        "kind": "glm",
        "mode": model.schema.mode,
        "response": model.schema.response,
        "intercept": model.schema.intercept,
        "terms": [_term_to_json(t) for t in model.schema.terms],
        "columns": list(model.columns),
        "coefficients": [float(b) for b in model.coefficients],
        "convergence": {
            "converged": model.convergence.converged,
            "iterations": model.convergence.iterations,
            "deviance": model.convergence.deviance,
            "gradient_max_norm": model.convergence.gradient_max_norm,
            "deviance_trace": list(model.convergence.deviance_trace),
        },
        "n_rows": model.n_rows,
        "n_events": model.n_events,
    }


def model_from_json(payload: Mapping) -> GlmModel:
    schema = DesignSchema(
        response=payload["response"], mode=payload["mode"],
        terms=tuple(_term_from_json(t) for t in payload["terms"]),
        intercept=payload["intercept"])
    conv = payload["convergence"]
    return GlmModel(
        schema=schema, columns=tuple(payload["columns"]),
        coefficients=np.array(payload["coefficients"], dtype=np.float64),
        convergence=Convergence(
            converged=conv["converged"], iterations=conv["iterations"],
            deviance=conv["deviance"],
            gradient_max_norm=conv["gradient_max_norm"],
            deviance_trace=tuple(conv["deviance_trace"])),
        n_rows=payload["n_rows"], n_events=payload["n_events"])
