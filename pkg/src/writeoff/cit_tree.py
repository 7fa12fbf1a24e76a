"""Conditional-inference survival tree.

Recursive binary partitioning on right-censored spell data where variable
selection is separated from split search: each candidate input is tested
against the survival response through a standardised linear statistic of
log-rank scores under permutation-test moments, with Bonferroni adjustment
across candidates.  The winning variable's admissible splits are then
scanned for the most extreme standardised two-sample statistic.  Each leaf
carries a node-local life table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from ._kernels import split_scan_numeric, subset_scan
from .survival_core import (
    LifeTable,
    life_table_from_arrays,
    life_table_from_json,
    life_table_to_json,
)

MAX_CATEGORICAL_LEVELS = 20


class TreeError(ValueError):
    pass


class StopSignal:
    """Returned by variable selection when no candidate clears the test."""

    def __repr__(self):
        return "StopSignal()"

    def __eq__(self, other):
        return isinstance(other, StopSignal)

    def __hash__(self):
        return hash(StopSignal)


STOP = StopSignal()


@dataclass(frozen=True)
class TreeControls:
    """Hyperparameters; a split needs p <= 1 - mincriterion."""

    mincriterion: float = 0.99
    minsplit: int = 1000
    minbucket: int = 50
    maxdepth: int = 4
    multiplicity: str = "bonferroni"  # or "none"

    @property
    def alpha(self) -> float:
        return 1.0 - self.mincriterion

    def __post_init__(self):
        if not 0.0 <= self.mincriterion < 1.0:
            raise TreeError("mincriterion must lie in [0, 1)")
        if self.minbucket < 1 or self.minsplit < 1 or self.maxdepth < 0:
            raise TreeError("minsplit/minbucket must be >= 1, maxdepth >= 0")
        if self.multiplicity not in ("bonferroni", "none"):
            raise TreeError("multiplicity must be 'bonferroni' or 'none'")


@dataclass(frozen=True)
class LogRankScores:
    """Per-observation observed-minus-expected event contributions."""

    scores: np.ndarray
    table: LifeTable  # the node-local pooled life table the scores used


@dataclass(frozen=True)
class Selection:
    variable: str
    p_value: float  # multiplicity-adjusted
    statistic: float  # |Z| of the winning variable


@dataclass(frozen=True)
class Split:
    variable: str
    kind: str  # "numeric" | "categorical"
    p_value: float
    statistic: float  # signed Z of the chosen subset
    cut: Optional[float] = None
    left_levels: tuple = ()
    right_levels: tuple = ()
    missing_left: bool = True

    def describe(self) -> str:
        if self.kind == "numeric":
            return f"{self.variable} <= {self.cut:g}"
        left = ", ".join(str(v) for v in self.left_levels)
        return f"{self.variable} in {{{left}}}"


@dataclass
class CitNode:
    node_id: int
    weight: float
    depth: int
    split: Optional[Split] = None
    children: Optional[tuple] = None
    table: Optional[LifeTable] = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass
class CitTree:
    root: CitNode
    controls: TreeControls
    schema: dict  # name -> ("numeric", None) | ("categorical", levels)

    def leaves(self):
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend(reversed(node.children))
        return out

    def depth(self) -> int:
        return max(leaf.depth for leaf in self.leaves())


# -- scores and statistics ----------------------------------------------


def log_rank_scores(durations, events, weights=None, entries=None
                    ) -> LogRankScores:
    """Log-rank scores from the node-local pooled life table.

    score_k = delta_k - sum of hazard contributions d_s/n_s over the
    failure times inside the observation's own at-risk window, which makes
    the weighted score total vanish (also under delayed entry).
    """
    durations = np.asarray(durations, dtype=np.int64)
    events = np.asarray(events, dtype=np.int64)
    n = durations.shape[0]
    entries = (np.zeros(n, dtype=np.int64) if entries is None
               else np.asarray(entries, dtype=np.int64))
    if weights is None:
        weights = np.ones(n, dtype=np.float64)
    else:
        weights = np.asarray(weights, dtype=np.float64)
    if n == 0 or not np.any(weights > 0):
        raise TreeError("log-rank scores need at least one positive weight")

    table = life_table_from_arrays(durations, events, entries, weights)
    stops = entries + durations
    if table.times.size == 0:
        return LogRankScores(scores=np.zeros(n, dtype=np.float64),
                             table=table)

    cum_haz = np.concatenate(([0.0], np.cumsum(table.hazard)))
    at_stop = cum_haz[np.searchsorted(table.times, stops, side="right")]
    at_entry = cum_haz[np.searchsorted(table.times, entries, side="right")]
    scores = events.astype(np.float64) - (at_stop - at_entry)
    return LogRankScores(scores=scores, table=table)


def linear_statistic(scores: Union[LogRankScores, np.ndarray], g, weights
                     ) -> float:
    """Weighted covariation sum T = sum_k w_k g_k h_k."""
    h = scores.scores if isinstance(scores, LogRankScores) else scores
    return float(np.sum(np.asarray(weights, dtype=np.float64)
                        * np.asarray(g, dtype=np.float64)
                        * np.asarray(h, dtype=np.float64)))


def permutation_moments(scores, g, weights) -> tuple:
    """Mean and variance of the linear statistic under score permutation.

    Closed form for a univariate transformed input; matches the exhaustive
    enumeration over all rearrangements of the scores against (g, w).
    """
    h = scores.scores if isinstance(scores, LogRankScores) else scores
    h = np.asarray(h, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    total_w = float(np.sum(w))
    if total_w < 2.0:
        raise TreeError("permutation moments need effective sample >= 2")

    h_mean = float(np.sum(w * h)) / total_w
    h_var = float(np.sum(w * (h - h_mean) ** 2)) / total_w
    sg = float(np.sum(w * g))
    sg2 = float(np.sum(w * g * g))
    mu = sg * h_mean
    term1 = total_w / (total_w - 1.0) * sg2
    term2 = sg * sg / (total_w - 1.0)
    sigma2 = h_var * (term1 - term2)
    # constant g collapses the bracket to rounding noise
    if sigma2 <= 1e-12 * h_var * max(abs(term1), abs(term2)):
        sigma2 = 0.0
    return mu, max(sigma2, 0.0)


def _normal_two_sided_p(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


# -- covariate encoding -------------------------------------------------


@dataclass(frozen=True)
class _Column:
    name: str
    kind: str
    values: np.ndarray          # float64 with NaN, or int64 codes (-1 missing)
    levels: tuple = ()


def _encode_covariates(covariates: Mapping, schema: Optional[Mapping]) -> list:
    columns = []
    for name, raw in covariates.items():
        arr = np.asarray(raw)
        declared = None if schema is None else schema.get(name)
        if declared is not None:
            kind = declared[0] if isinstance(declared, tuple) else declared
        else:
            kind = ("numeric" if np.issubdtype(arr.dtype, np.number)
                    else "categorical")
        if kind == "numeric":
            values = np.array(
                [np.nan if v is None else float(v) for v in arr.tolist()],
                dtype=np.float64)
            columns.append(_Column(name=name, kind="numeric", values=values))
        elif kind == "categorical":
            if isinstance(declared, tuple) and len(declared) > 1:
                levels = tuple(declared[1])
            else:
                levels = tuple(sorted({str(v) for v in arr.tolist()
                                       if v is not None}))
            if len(levels) > MAX_CATEGORICAL_LEVELS:
                raise TreeError(
                    f"categorical {name!r} has {len(levels)} levels; the "
                    f"subset-enumeration ceiling is {MAX_CATEGORICAL_LEVELS}")
            index = {lvl: i for i, lvl in enumerate(levels)}
            codes = np.empty(len(arr), dtype=np.int64)
            for i, v in enumerate(arr.tolist()):
                if v is None:
                    codes[i] = -1
                else:
                    try:
                        codes[i] = index[str(v)]
                    except KeyError:
                        raise TreeError(
                            f"value {v!r} outside declared levels of {name!r}"
                        ) from None
            columns.append(_Column(name=name, kind="categorical",
                                   values=codes, levels=levels))
        else:
            raise TreeError(f"unknown covariate kind {kind!r} for {name!r}")
    return columns


# -- variable selection --------------------------------------------------


def _test_column(column: _Column, scores: np.ndarray, weights: np.ndarray):
    """Raw two-sided p and |Z| for one candidate, or None if untestable.

    Observations missing this variable drop out of its statistic; the
    permutation null then conditions on the remaining subsample.
    """
    if column.kind == "numeric":
        present = ~np.isnan(column.values)
    else:
        present = column.values >= 0
    present = present & (weights > 0)
    if np.count_nonzero(present) < 2:
        return None
    w = weights[present]
    h = scores[present]
    if float(np.sum(w)) < 2.0:
        return None

    if column.kind == "numeric":
        g = column.values[present]
        t_stat = linear_statistic(h, g, w)
        mu, sigma2 = permutation_moments(h, g, w)
        if sigma2 <= 0.0:
            return None
        z = (t_stat - mu) / math.sqrt(sigma2)
        return _normal_two_sided_p(z), abs(z)

    codes = column.values[present]
    best_abs_z = None
    n_tested = 0
    for lvl in range(len(column.levels)):
        g = (codes == lvl).astype(np.float64)
        t_stat = linear_statistic(h, g, w)
        mu, sigma2 = permutation_moments(h, g, w)
        if sigma2 <= 0.0:
            continue
        n_tested += 1
        z = abs((t_stat - mu) / math.sqrt(sigma2))
        if best_abs_z is None or z > best_abs_z:
            best_abs_z = z
    if best_abs_z is None:
        return None
    # level-wise maximum gets its own Bonferroni correction over the
    # distinct tests; with exactly two testable levels the indicators are
    # complements and carry identical |Z|, so only one test exists
    m_levels = 1 if n_tested == 2 else n_tested
    return min(1.0, m_levels * _normal_two_sided_p(best_abs_z)), best_abs_z


def select_variable(scores, covariates: Mapping, weights,
                    controls: Optional[TreeControls] = None,
                    schema: Optional[Mapping] = None):
    """Pick the candidate with the smallest adjusted p-value.

    Returns a :class:`Selection`, or :data:`STOP` when no variable is
    testable or the winner misses the significance threshold.  Ties in the
    adjusted p-value resolve by the larger |Z|, then by declaration order
    of ``covariates``.
    """
    controls = controls or TreeControls()
    h = scores.scores if isinstance(scores, LogRankScores) else scores
    h = np.asarray(h, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    columns = _encode_covariates(covariates, schema)
    return _select_encoded(h, columns, w, controls)


def _select_encoded(scores, columns, weights, controls):
    tested = []
    for column in columns:
        result = _test_column(column, scores, weights)
        if result is not None:
            tested.append((column, result[0], result[1]))
    if not tested:
        return STOP
    m_eff = len(tested)
    best = None
    for column, p_raw, abs_z in tested:
        p_adj = (min(1.0, m_eff * p_raw)
                 if controls.multiplicity == "bonferroni" else p_raw)
        # ties in p (cap at 1, underflow at 0) resolve by the honest
        # statistic before falling back to declaration order
        if best is None or p_adj < best[1] \
                or (p_adj == best[1] and abs_z > best[2]):
            best = (column, p_adj, abs_z)
    column, p_adj, abs_z = best
    if p_adj > controls.alpha:
        return STOP
    return Selection(variable=column.name, p_value=p_adj, statistic=abs_z)


# -- split search ---------------------------------------------------------


def best_split(scores, values, weights, kind: str = "numeric",
               minbucket: int = 1, levels: Optional[Sequence] = None,
               variable: str = "x", p_value: float = float("nan")
               ) -> Optional[Split]:
    """Most extreme standardised two-sample statistic over admissible splits.

    Numeric inputs scan thresholds between distinct observed values;
    categorical inputs enumerate every nonempty proper level subset up to
    complement symmetry.  Both children must keep at least ``minbucket``
    weight.  Returns None when nothing is admissible.
    """
    h = scores.scores if isinstance(scores, LogRankScores) else scores
    h = np.asarray(h, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if kind == "numeric":
        column = _Column(name=variable, kind="numeric",
                         values=np.asarray(values, dtype=np.float64))
    else:
        if levels is None:
            levels = tuple(sorted({str(v) for v in values if v is not None}))
        column = _encode_covariates({variable: np.asarray(values, dtype=object)},
                                    {variable: ("categorical", tuple(levels))})[0]
    return _split_encoded(h, column, w, minbucket, p_value)


def _split_encoded(scores, column, weights, minbucket, p_value):
    if column.kind == "numeric":
        present = ~np.isnan(column.values)
    else:
        present = column.values >= 0
    present = present & (weights > 0)
    idx = np.flatnonzero(present)
    if idx.size < 2:
        return None
    w = weights[idx]
    h = scores[idx]
    total_w = float(np.sum(w))
    if total_w < 2.0:
        return None
    h_mean = float(np.sum(w * h)) / total_w
    h_var = float(np.sum(w * (h - h_mean) ** 2)) / total_w

    if column.kind == "numeric":
        x = column.values[idx]
        order = np.argsort(x, kind="stable")
        cut, z, _, n_adm = split_scan_numeric(
            x[order], h[order], w[order], total_w, h_mean, h_var,
            float(minbucket))
        if n_adm == 0 or not np.isfinite(cut):
            return None
        return Split(variable=column.name, kind="numeric", cut=float(cut),
                     p_value=p_value, statistic=float(z))

    codes = column.values[idx]
    node_levels = np.unique(codes)
    k = node_levels.shape[0]
    if k < 2:
        return None
    level_t = np.zeros(k, dtype=np.float64)
    level_w = np.zeros(k, dtype=np.float64)
    for j, lvl in enumerate(node_levels):
        sel = codes == lvl
        level_t[j] = float(np.sum(w[sel] * h[sel]))
        level_w[j] = float(np.sum(w[sel]))
    mask, z, _, n_adm = subset_scan(level_t, level_w, total_w, h_mean, h_var,
                                    float(minbucket))
    if n_adm == 0 or mask == 0:
        return None
    left = tuple(column.levels[int(node_levels[j])]
                 for j in range(1, k) if (mask >> (j - 1)) & 1)
    right = tuple(column.levels[int(node_levels[j])]
                  for j in range(k)
                  if not (j >= 1 and (mask >> (j - 1)) & 1))
    return Split(variable=column.name, kind="categorical", p_value=p_value,
                 statistic=float(z), left_levels=left, right_levels=right)


# -- fitting ---------------------------------------------------------------


def fit_tree(durations, events, covariates: Mapping,
             controls: Optional[TreeControls] = None,
             schema: Optional[Mapping] = None,
             entries=None, weights=None) -> CitTree:
    """Grow a survival tree by recursive selection and split search.

    ``covariates`` maps names to per-spell arrays (numeric float arrays
    with NaN/None missing; categorical object arrays).  ``weights`` are
    non-negative integer case multiplicities.  Every leaf carries its own
    life table, from which survivor, hazard and event-probability
    predictions derive.
    """
    controls = controls or TreeControls()
    durations = np.asarray(durations, dtype=np.int64)
    events = np.asarray(events, dtype=np.int64)
    n = durations.shape[0]
    entries = (np.zeros(n, dtype=np.int64) if entries is None
               else np.asarray(entries, dtype=np.int64))
    if weights is None:
        weights = np.ones(n, dtype=np.float64)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if np.any(weights < 0) or np.any(weights != np.floor(weights)):
            raise TreeError("case weights must be non-negative integers")
    if n == 0 or float(np.sum(weights)) < controls.minbucket:
        raise TreeError("not enough observations to grow a tree")

    columns = _encode_covariates(covariates, schema)
    counter = [0]
    root = _fit_node(durations, events, entries, weights, columns,
                     controls, depth=0, counter=counter)
    tree_schema = {c.name: (c.kind, c.levels if c.kind == "categorical"
                            else None) for c in columns}
    return CitTree(root=root, controls=controls, schema=tree_schema)


def _fit_node(durations, events, entries, weights, columns, controls,
              depth, counter) -> CitNode:
    counter[0] += 1
    node_id = counter[0]
    total_w = float(np.sum(weights))

    def leaf():
        table = life_table_from_arrays(durations, events, entries, weights)
        return CitNode(node_id=node_id, weight=total_w, depth=depth,
                       table=table)

    if depth >= controls.maxdepth or total_w < controls.minsplit:
        return leaf()

    scores = log_rank_scores(durations, events, weights, entries).scores
    selection = _select_encoded(scores, columns, weights, controls)
    if isinstance(selection, StopSignal):
        return leaf()
    column = next(c for c in columns if c.name == selection.variable)
    split = _split_encoded(scores, column, weights, controls.minbucket,
                           selection.p_value)
    if split is None:
        return leaf()

    go_left, missing_left = _route_fit(column, split, weights)
    split = Split(variable=split.variable, kind=split.kind,
                  p_value=split.p_value, statistic=split.statistic,
                  cut=split.cut, left_levels=split.left_levels,
                  right_levels=split.right_levels, missing_left=missing_left)

    live = weights > 0
    left_sel = live & go_left
    right_sel = live & ~go_left
    children = []
    for sel in (left_sel, right_sel):
        children.append(_fit_node(
            durations[sel], events[sel], entries[sel], weights[sel],
            [_Column(c.name, c.kind, c.values[sel], c.levels)
             for c in columns],
            controls, depth + 1, counter))
    node = CitNode(node_id=node_id, weight=total_w, depth=depth,
                   split=split, children=tuple(children))
    return node


def _route_fit(column, split, weights):
    """Fit-time routing mask; missing values follow the heavier child."""
    if column.kind == "numeric":
        present = ~np.isnan(column.values)
        left_known = present & (column.values <= split.cut)
    else:
        left_codes = {i for i, lvl in enumerate(column.levels)
                      if lvl in split.left_levels}
        present = column.values >= 0
        left_known = present & np.isin(
            column.values, np.array(sorted(left_codes), dtype=np.int64))
    w_left = float(np.sum(weights[present & left_known]))
    w_right = float(np.sum(weights[present & ~left_known]))
    missing_left = w_left >= w_right
    go_left = np.where(present, left_known, missing_left)
    return go_left, bool(missing_left)


# -- prediction -------------------------------------------------------------


def route(tree: CitTree, x: Mapping) -> CitNode:
    """Walk one covariate mapping down to its leaf."""
    node = tree.root
    while not node.is_leaf:
        split = node.split
        value = x.get(split.variable)
        node = node.children[0 if _goes_left(tree, split, value) else 1]
    return node


def _goes_left(tree: CitTree, split: Split, value) -> bool:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return split.missing_left
    if split.kind == "numeric":
        return float(value) <= split.cut
    value = str(value)
    kind, levels = tree.schema[split.variable]
    if value not in levels:
        raise TreeError(
            f"value {value!r} outside fitted levels of {split.variable!r}")
    if value in split.left_levels:
        return True
    if value in split.right_levels:
        return False
    return split.missing_left  # schema level unseen at this node


def predict_tree(tree: CitTree, x: Mapping, t: int) -> tuple:
    """(survivor, hazard, event probability) at spell time t for inputs x."""
    if t < 0:
        raise TreeError("prediction time must be non-negative")
    leaf = route(tree, x)
    table = leaf.table
    return (table.survivor_at(t), table.hazard_at(t), table.event_prob_at(t))


def predict_curves(tree: CitTree, covariates: Mapping, horizon: int) -> tuple:
    """Leaf-table curves for many observations at once.

    Returns (survivor, hazard, event_prob) arrays of shape (n, horizon)
    over spell times 1..horizon.
    """
    names = list(tree.schema)
    n = len(np.asarray(covariates[names[0]])) if names else 0
    rows = [{name: _value_at(covariates[name], i) for name in names}
            for i in range(n)]
    leaf_ids = np.array([route(tree, row).node_id for row in rows])

    surv = np.empty((n, horizon), dtype=np.float64)
    haz = np.empty((n, horizon), dtype=np.float64)
    prob = np.empty((n, horizon), dtype=np.float64)
    for leaf in tree.leaves():
        sel = leaf_ids == leaf.node_id
        if not np.any(sel):
            continue
        s = np.array([leaf.table.survivor_at(t)
                      for t in range(1, horizon + 1)])
        h = np.array([leaf.table.hazard_at(t) for t in range(1, horizon + 1)])
        f = np.array([leaf.table.event_prob_at(t)
                      for t in range(1, horizon + 1)])
        surv[sel] = s
        haz[sel] = h
        prob[sel] = f
    return surv, haz, prob


def _value_at(array, i):
    v = np.asarray(array, dtype=object)[i]
    if v is None:
        return None
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if math.isnan(v) else v
    if isinstance(v, (np.integer, int)):
        return float(v)
    return str(v)


# -- serialisation -----------------------------------------------------------


def tree_to_json(tree: CitTree) -> dict:
    return {
        "kind": "tree",
        "controls": {
            "mincriterion": tree.controls.mincriterion,
            "minsplit": tree.controls.minsplit,
            "minbucket": tree.controls.minbucket,
            "maxdepth": tree.controls.maxdepth,
            "multiplicity": tree.controls.multiplicity,
        },
        "schema": {name: {"kind": kind, "levels": list(levels) if levels
                          else None}
                   for name, (kind, levels) in tree.schema.items()},
        "root": _node_to_json(tree.root),
    }


def _node_to_json(node: CitNode) -> dict:
    payload = {"node_id": node.node_id, "weight": node.weight,
               "depth": node.depth}
    if node.is_leaf:
        payload["life_table"] = life_table_to_json(node.table)
    else:
        split = node.split
        payload["split"] = {
            "variable": split.variable,
            "kind": split.kind,
            "p_value": split.p_value,
            "statistic": split.statistic,
            "cut": split.cut,
            "left_levels": list(split.left_levels),
            "right_levels": list(split.right_levels),
            "missing_left": split.missing_left,
        }
        payload["children"] = [_node_to_json(c) for c in node.children]
    return payload


def tree_from_json(payload: Mapping) -> CitTree:
    controls = TreeControls(**payload["controls"])
    schema = {name: (spec["kind"],
                     tuple(spec["levels"]) if spec["levels"] else None)
              for name, spec in payload["schema"].items()}
    return CitTree(root=_node_from_json(payload["root"]), controls=controls,
                   schema=schema)


def _node_from_json(payload: Mapping) -> CitNode:
    if "life_table" in payload:
        return CitNode(node_id=payload["node_id"], weight=payload["weight"],
                       depth=payload["depth"],
                       table=life_table_from_json(payload["life_table"]))
    raw = payload["split"]
    split = Split(variable=raw["variable"], kind=raw["kind"],
                  p_value=raw["p_value"], statistic=raw["statistic"],
                  cut=raw["cut"], left_levels=tuple(raw["left_levels"]),
                  right_levels=tuple(raw["right_levels"]),
                  missing_left=raw["missing_left"])
    children = tuple(_node_from_json(c) for c in payload["children"])
    return CitNode(node_id=payload["node_id"], weight=payload["weight"],
                   depth=payload["depth"], split=split, children=children)


def render_rules(tree: CitTree) -> str:
    """Indented, human-readable rule list of the fitted tree."""
    lines = []

    def visit(node, label):
        indent = "  " * node.depth
        if node.is_leaf:
            events = float(np.sum(node.table.events))
            lines.append(f"{indent}[{node.node_id}] {label}: leaf "
                         f"(n={node.weight:g}, events={events:g})")
        else:
            split = node.split
            lines.append(
                f"{indent}[{node.node_id}] {label}: split on "
                f"{split.variable} (p={split.p_value:.4g}, "
                f"Z={split.statistic:.4g}, n={node.weight:g})")
            left_label = split.describe()
            if split.kind == "numeric":
                right_label = f"{split.variable} > {split.cut:g}"
            else:
                right = ", ".join(str(v) for v in split.right_levels)
                right_label = f"{split.variable} in {{{right}}}"
            visit(node.children[0], left_label)
            visit(node.children[1], right_label)

    visit(tree.root, "root")
    return "\n".join(lines)
