"""Command-line workbench for the write-off risk pipeline.

simulate -> ingest -> split -> fit (km | tree | glm) -> predict ->
dichotomise -> diagnose -> compare.  Every artifact-producing command
drops a ``<command>_manifest.json`` beside its outputs recording the
resolved configuration, input hashes, seed and toolkit version; the data
artifacts themselves are byte-reproducible under a fixed seed.

Exit codes: 0 success, 1 validation error, 2 numerical failure.  Errors
are mirrored as a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cit_tree import (
    TreeControls,
    TreeError,
    fit_tree,
    predict_curves,
    render_rules,
    route,
    tree_from_json,
    tree_to_json,
)
from .diagnostics import (
    DiagnosticsError,
    auc_over_time,
    brier,
    compare_distributions,
    ibs,
    roc,
    tbs_series,
    troc,
)
from .dichotomiser import (
    DichotomiserError,
    ScoredSample,
    expected_term_structure,
    optimal_cutoff,
    optimise_cost_multiple,
    score_sets_from_predictions,
)
from .hazard_glm import (
    GlmError,
    SeparationError,
    SingularError,
    fit_glm,
    model_from_json,
    model_to_json,
    predict_crosssection,
    predict_hazard,
    predict_hazard_panel,
)
from .spell_data import (
    CovariateSchema,
    PanelError,
    Resolution,
    average_discrepancy,
    clustered_split,
    ingest_panel,
    month_overlap,
    resolution_rates,
    serialize_panel,
)
from .survival_core import (
    SurvivalError,
    empirical_term_structure,
    life_table_from_arrays,
    life_table_to_csv,
    life_table_to_json,
    term_structure_to_csv,
)
from .synthgen import GeneratorError, GeneratorSpec, simulate, truth_to_csv

DEFAULT_TROC_GRID = (6, 12, 24, 48)
DEFAULT_IBS_HORIZON = 48

VALIDATION_ERRORS = (PanelError, GlmError, TreeError, DichotomiserError,
                     DiagnosticsError, GeneratorError, SurvivalError)
NUMERICAL_ERRORS = (SeparationError, SingularError)


class CliUsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliUsageError(message)


# -- shared helpers ------------------------------------------------------------


def _load_schema(path) -> CovariateSchema:
    if path is None:
        return CovariateSchema()
    payload = _load_config_file(path)
    return CovariateSchema(
        numeric=tuple(payload.get("numeric", ())),
        categorical={k: tuple(v)
                     for k, v in payload.get("categorical", {}).items()},
        numeric_missing_ok=tuple(payload.get("numeric_missing_ok", ())))


def _schema_to_json(schema: CovariateSchema) -> dict:
    return {"numeric": list(schema.numeric),
            "categorical": {k: list(v)
                            for k, v in schema.categorical.items()},
            "numeric_missing_ok": list(schema.numeric_missing_ok)}


def _infer_schema(path) -> CovariateSchema:
    """Schema fallback: every covariate column rides as numeric."""
    with open(path, newline="", encoding="utf-8") as stream:
        header = next(csv.reader(stream))
    from .spell_data import PANEL_BASE_COLUMNS
    extras = [c for c in header if c not in PANEL_BASE_COLUMNS]
    return CovariateSchema(numeric=tuple(extras))


def _read_panel(path, schema_path):
    schema = (_load_schema(schema_path) if schema_path
              else _infer_schema(path))
    with open(path, newline="", encoding="utf-8") as stream:
        return ingest_panel(stream, schema)


def _load_config_file(path) -> dict:
    text = Path(path).read_bytes()
    if str(path).endswith((".toml", ".tml")):
        try:
            import tomllib  # py >= 3.11
        except ImportError:
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    return json.loads(text.decode("utf-8"))


def _write_json(payload, path):
    with open(path, "w", encoding="utf-8") as stream:
        json.dump(payload, stream, indent=2, sort_keys=True)
        stream.write("\n")


def _sha256(path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def _write_manifest(out_dir, command, args, inputs, outputs, seed=None):
    manifest = {
        "command": command,
        "toolkit_version": __version__,
        "resolved_config": {k: v for k, v in sorted(vars(args).items())
                            if k not in ("func",)},
        "seed": seed,
        "input_hashes": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "started_utc": args._started,
        "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = Path(out_dir) / f"{command}_manifest.json"
    _write_json(manifest, path)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _float_cell(x) -> str:
    return repr(float(x))


# -- subcommand implementations ---------------------------------------------------


def _cmd_simulate(args) -> int:
    payload = _load_config_file(args.config)
    spec = GeneratorSpec.from_json(payload)
    if args.seed is not None:
        spec = GeneratorSpec.from_json({**spec.to_json(), "seed": args.seed})
    panel, truth = simulate(spec)

    out = _out_dir(args)
    panel_path = out / "panel.csv"
    truth_path = out / "truth.csv"
    schema_path = out / "schema.json"
    with open(panel_path, "w", newline="", encoding="utf-8") as stream:
        serialize_panel(panel, stream)
    with open(truth_path, "w", newline="", encoding="utf-8") as stream:
        truth_to_csv(truth, stream)
    _write_json(_schema_to_json(panel.schema), schema_path)
    _write_manifest(out, "simulate", args, [args.config],
                    [panel_path, truth_path, schema_path], seed=spec.seed)
    print(f"simulated {panel.n_loans} loans, {panel.n_spells} spells, "
          f"{len(panel)} rows -> {panel_path}")
    return 0


def _cmd_ingest(args) -> int:
    panel = _read_panel(args.input, args.schema)
    out = _out_dir(args)
    out_path = out / (args.out or "panel_validated.csv")
    with open(out_path, "w", newline="", encoding="utf-8") as stream:
        serialize_panel(panel, stream)
    _write_manifest(out, "ingest", args, [args.input], [out_path])
    print(f"validated {len(panel)} rows ({panel.n_loans} loans, "
          f"{panel.n_spells} spells) -> {out_path}")
    return 0


def _cmd_split(args) -> int:
    panel = _read_panel(args.input, args.schema)
    train, valid = clustered_split(panel, args.fraction, args.seed)
    out = _out_dir(args)
    train_path = out / "train.csv"
    valid_path = out / "valid.csv"
    for part, path in ((train, train_path), (valid, valid_path)):
        with open(path, "w", newline="", encoding="utf-8") as stream:
            serialize_panel(part, stream)

    rates = {name: resolution_rates(part)
             for name, part in (("all", panel), ("train", train),
                                ("valid", valid))}
    discrepancies = {}
    overlaps = {}
    for name in ("train", "valid"):
        discrepancies[name] = {
            res.name.lower(): average_discrepancy(rates["all"], rates[name],
                                                  res)
            for res in Resolution}
        overlaps[name] = month_overlap(rates["all"], rates[name])
    report_path = out / "split_report.json"
    _write_json({"train_loans": train.n_loans, "valid_loans": valid.n_loans,
                 "average_discrepancy_vs_full": discrepancies,
                 "month_overlap_vs_full": overlaps}, report_path)
    _write_manifest(out, "split", args, [args.input],
                    [train_path, valid_path, report_path], seed=args.seed)
    print(f"split {panel.n_loans} loans -> {train.n_loans} train / "
          f"{valid.n_loans} validation")
    return 0


def _panel_spell_arrays(panel):
    frame = panel.spell_frame()
    return frame["duration"], frame["event"], frame["entry"], frame


def _cmd_km(args) -> int:
    panel = _read_panel(args.input, args.schema)
    durations, events, entries, _ = _panel_spell_arrays(panel)
    table = life_table_from_arrays(durations, events, entries)
    out = _out_dir(args)
    table_path = out / (args.out or "lifetable.csv")
    with open(table_path, "w", newline="", encoding="utf-8") as stream:
        life_table_to_csv(table, stream)
    json_path = out / "lifetable.json"
    _write_json(life_table_to_json(table, args.small_risk_threshold),
                json_path)
    ts_path = out / "term_structure.csv"
    with open(ts_path, "w", newline="", encoding="utf-8") as stream:
        term_structure_to_csv(empirical_term_structure(table), stream)
    _write_manifest(out, "km", args, [args.input],
                    [table_path, json_path, ts_path])
    flagged = table.small_risk_times(args.small_risk_threshold)
    print(f"life table over {len(table.times)} failure times "
          f"({len(flagged)} below risk-set threshold "
          f"{args.small_risk_threshold}) -> {table_path}")
    return 0


def _tree_covariates(panel, names):
    chosen = names.split(",") if names else list(panel.schema.names)
    if not chosen:
        raise CliUsageError("tree fitting needs at least one covariate")
    frame = panel.spell_frame()
    covariates = {}
    schema = {}
    for name in chosen:
        kind = panel.schema.kind(name)
        values = frame["covariates"][name]
        if kind == "numeric":
            covariates[name] = np.asarray(values, dtype=np.float64)
            schema[name] = "numeric"
        else:
            covariates[name] = np.asarray(values, dtype=object)
            schema[name] = ("categorical",
                            tuple(panel.schema.categorical[name]))
    return covariates, schema


def _cmd_tree(args) -> int:
    if args.show:
        tree = tree_from_json(_load_config_file(args.show))
        print(render_rules(tree))
        return 0
    if not args.input:
        raise CliUsageError("tree needs --input (or --show to print)")
    out = _out_dir(args)
    panel = _read_panel(args.input, args.schema)
    durations, events, entries, _ = _panel_spell_arrays(panel)
    covariates, cov_schema = _tree_covariates(panel, args.covariates)
    controls = TreeControls(mincriterion=args.mincriterion,
                            minsplit=args.minsplit,
                            minbucket=args.minbucket,
                            maxdepth=args.maxdepth)
    tree = fit_tree(durations, events, covariates, controls,
                    schema=cov_schema, entries=entries)
    tree_path = out / (args.out or "tree.json")
    _write_json(tree_to_json(tree), tree_path)
    _write_manifest(out, "tree", args, [args.input], [tree_path])
    print(f"fitted tree with {len(tree.leaves())} leaves -> {tree_path}")
    if args.print_rules:
        print(render_rules(tree))
    return 0


def _cmd_glm(args) -> int:
    panel = _read_panel(args.input, args.schema)
    model = fit_glm(panel, args.formula, tol=args.tol,
                    max_iter=args.max_iter)
    out = _out_dir(args)
    model_path = out / (args.out or "model.json")
    _write_json(model_to_json(model), model_path)
    _write_manifest(out, "glm", args, [args.input], [model_path])
    conv = model.convergence
    status = "converged" if conv.converged else "DID NOT CONVERGE"
    print(f"{model.schema.mode} model {status} in {conv.iterations} "
          f"iterations (deviance {conv.deviance:.4f}) -> {model_path}")
    if not conv.converged:
        # distinct from an error: the model file exists, flagged unconverged
        print(json.dumps({"error": "NonConvergence",
                          "message": f"IRLS stopped after {conv.iterations} "
                                     "iterations above tolerance",
                          "exit_code": 2}), file=sys.stderr)
        return 2
    return 0


PREDICTION_COLUMNS = ("loan_id", "spell_num", "t", "hazard", "survivor",
                      "event_prob")


def _load_model(path):
    payload = _load_config_file(path)
    kind = payload.get("kind")
    if kind == "glm":
        return model_from_json(payload)
    if kind == "tree":
        return tree_from_json(payload)
    raise CliUsageError(f"model file {path} has unknown kind {kind!r}")


def _tree_panel_predictions(tree, panel) -> dict:
    """Leaf curves restricted to each spell's observed periods."""
    frame = panel.spell_frame()
    from .hazard_glm import HazardPrediction
    out = {}
    n = len(frame["duration"])
    for i in range(n):
        x = {name: _cov_value(frame["covariates"][name][i])
             for name in panel.schema.names if name in tree.schema}
        leaf = route(tree, x)
        times = np.arange(int(frame["entry"][i]) + 1,
                          int(frame["stop"][i]) + 1, dtype=np.int64)
        hazard = np.array([leaf.table.hazard_at(int(t)) for t in times])
        survivor = np.array([leaf.table.survivor_at(int(t)) for t in times])
        event_prob = np.array([leaf.table.event_prob_at(int(t))
                               for t in times])
        key = (str(frame["loan_id"][i]), int(frame["spell_num"][i]))
        out[key] = HazardPrediction(times=times, hazard=hazard,
                                    survivor=survivor,
                                    event_prob=event_prob)
    return out


def _cov_value(v):
    if v is None:
        return None
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if np.isnan(v) else v
    return str(v)


def _cmd_predict(args) -> int:
    model = _load_model(args.model)
    panel = _read_panel(args.input, args.schema)
    out = _out_dir(args)
    pred_path = out / (args.out or "predictions.csv")

    with open(pred_path, "w", newline="", encoding="utf-8") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        if hasattr(model, "root"):  # fitted tree
            predictions = _tree_panel_predictions(model, panel)
            _write_prediction_rows(writer, predictions)
        elif model.schema.mode == "hazard":
            predictions = predict_hazard_panel(model, panel)
            _write_prediction_rows(writer, predictions)
        else:
            frame = panel.spell_frame()
            scores = predict_crosssection(model, frame["covariates"])
            writer.writerow(("loan_id", "spell_num", "score"))
            for i in range(len(scores)):
                writer.writerow([str(frame["loan_id"][i]),
                                 int(frame["spell_num"][i]),
                                 _float_cell(scores[i])])
    _write_manifest(out, "predict", args, [args.model, args.input],
                    [pred_path])
    print(f"predictions -> {pred_path}")
    return 0


def _write_prediction_rows(writer, predictions):
    writer.writerow(PREDICTION_COLUMNS)
    for (loan_id, spell_num), pred in predictions.items():
        for k, t in enumerate(pred.times):
            writer.writerow([
                loan_id, spell_num, int(t),
                _float_cell(pred.hazard[k]),
                _float_cell(pred.survivor[k]),
                _float_cell(pred.event_prob[k]),
            ])


def _prediction_file_kind(path) -> str:
    with open(path, newline="", encoding="utf-8") as stream:
        header = set(next(csv.reader(stream)))
    if not set(PREDICTION_COLUMNS) - header:
        return "hazard"
    if {"loan_id", "spell_num", "score"} <= header:
        return "crosssection"
    raise CliUsageError(f"{path} is not a prediction file from `predict`")


def _read_predictions(path) -> dict:
    from .hazard_glm import HazardPrediction
    rows: dict = {}
    with open(path, newline="", encoding="utf-8") as stream:
        reader = csv.DictReader(stream)
        if set(PREDICTION_COLUMNS) - set(reader.fieldnames or ()):
            raise CliUsageError(
                f"{path} is not a hazard prediction file "
                f"(expected columns {PREDICTION_COLUMNS})")
        for row in reader:
            key = (row["loan_id"], int(row["spell_num"]))
            rows.setdefault(key, []).append(
                (int(row["t"]), float(row["hazard"]),
                 float(row["survivor"]), float(row["event_prob"])))
    out = {}
    for key, entries in rows.items():
        entries.sort()
        times = np.array([e[0] for e in entries], dtype=np.int64)
        out[key] = HazardPrediction(
            times=times,
            hazard=np.array([e[1] for e in entries]),
            survivor=np.array([e[2] for e in entries]),
            event_prob=np.array([e[3] for e in entries]))
    return out


def _scored_sample_from_panel(panel, predictions) -> ScoredSample:
    """(spell, period) rows: score = predicted event prob, label = flag."""
    scores, labels = [], []
    for start, end in panel._spell_slices():
        key = (str(panel.loan_id[start]), int(panel.spell_num[start]))
        pred = predictions.get(key)
        if pred is None:
            raise CliUsageError(f"no predictions for spell {key}")
        lookup = {int(t): float(f)
                  for t, f in zip(pred.times, pred.event_prob)}
        for i in range(start, end):
            t = int(panel.spell_period[i])
            if t not in lookup:
                raise CliUsageError(
                    f"prediction missing period {t} of spell {key}")
            scores.append(lookup[t])
            labels.append(int(panel.event[i]))
    return ScoredSample(scores=np.array(scores), labels=np.array(labels))


def _parse_grid(text) -> list:
    lo, hi, step = (float(v) for v in text.split(":"))
    if step <= 0 or hi < lo:
        raise CliUsageError("grid must be lo:hi:step with step > 0")
    out = []
    a = lo
    while a <= hi + 1e-12:
        out.append(round(a, 12))
        a += step
    return out


def _spell_level_sample(panel, path) -> ScoredSample:
    frame = panel.spell_frame()
    labels = {(str(l), int(s)): int(e)
              for l, s, e in zip(frame["loan_id"], frame["spell_num"],
                                 frame["event"])}
    scores, outcome = [], []
    with open(path, newline="", encoding="utf-8") as stream:
        for row in csv.DictReader(stream):
            key = (row["loan_id"], int(row["spell_num"]))
            if key not in labels:
                raise CliUsageError(f"scored spell {key} missing from panel")
            scores.append(float(row["score"]))
            outcome.append(labels[key])
    return ScoredSample(scores=np.array(scores), labels=np.array(outcome))


def _cmd_dichotomise(args) -> int:
    panel = _read_panel(args.panel, args.schema)
    kind = _prediction_file_kind(args.predictions)
    if kind == "hazard":
        predictions = _read_predictions(args.predictions)
        sample = _scored_sample_from_panel(panel, predictions)
    else:
        if args.a_grid:
            raise CliUsageError(
                "the cost-multiple curve needs per-period hazard "
                "predictions; spell-level scores support --a only")
        sample = _spell_level_sample(panel, args.predictions)
    bounds = None
    if args.bounds:
        lo, hi = (float(v) for v in args.bounds.split(":"))
        bounds = (lo, hi)

    out = _out_dir(args)
    outputs = []
    if args.a_grid:
        durations, events, entries, _ = _panel_spell_arrays(panel)
        empirical = empirical_term_structure(
            life_table_from_arrays(durations, events, entries))
        per_time = score_sets_from_predictions(predictions)
        result = optimise_cost_multiple(sample, per_time, empirical,
                                        _parse_grid(args.a_grid),
                                        bounds=bounds)
        curve_path = out / "mae_curve.csv"
        with open(curve_path, "w", newline="", encoding="utf-8") as stream:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(("a", "c_star", "mae"))
            for a, c_star, mae in result.curve:
                writer.writerow([_float_cell(a), _float_cell(c_star),
                                 _float_cell(mae)])
        outputs.append(curve_path)
        cutoff = result.cutoff
        payload = {"a_star": result.a_star, "c_star": cutoff.c_star,
                   "j_value": cutoff.j_value, "bounds": list(cutoff.bounds),
                   "prevalence": sample.prevalence}
        print(f"optimised cost multiple a*={result.a_star:g} with "
              f"c*={cutoff.c_star:.6f}")
    else:
        cutoff = optimal_cutoff(sample, args.a, bounds=bounds)
        payload = {"a": cutoff.a, "c_star": cutoff.c_star,
                   "j_value": cutoff.j_value, "bounds": list(cutoff.bounds),
                   "prevalence": sample.prevalence}
        print(f"optimal cut-off c*={cutoff.c_star:.6f} at a={cutoff.a:g}")
    cutoff_path = out / "cutoff.json"
    _write_json(payload, cutoff_path)
    outputs.append(cutoff_path)
    _write_manifest(out, "dichotomise", args,
                    [args.panel, args.predictions], outputs)
    return 0


def _median_survival_time(table) -> int:
    for t, s in zip(table.times, table.survivor):
        if s <= 0.5:
            return int(t)
    return int(table.times[-1]) if len(table.times) else 1


def _extended_matrices(model, panel, horizon):
    """Survivor and cumulative-event matrices over 1..horizon per spell."""
    frame = panel.spell_frame()
    n = len(frame["duration"])
    if hasattr(model, "root"):
        covariates = {name: frame["covariates"][name]
                      for name in panel.schema.names if name in model.schema}
        surv, _, _ = predict_curves(model, covariates, horizon)
        return surv, frame
    surv = np.empty((n, horizon))
    for i in range(n):
        path = {name: _cov_value(frame["covariates"][name][i])
                for name in panel.schema.names}
        pred = predict_hazard(model, path, horizon)
        surv[i] = pred.survivor
    return surv, frame


def _cmd_diagnose(args) -> int:
    panel = _read_panel(args.panel, args.schema)
    model = _load_model(args.model)
    metrics = set(args.metrics.split(","))
    known = {"roc", "brier", "troc", "tbs", "ibs", "auc-over-time",
             "term-structure"}
    unknown = metrics - known
    if unknown:
        raise CliUsageError(f"unknown metrics {sorted(unknown)}")

    durations, events, entries, frame = _panel_spell_arrays(panel)
    out = _out_dir(args)
    summary = {}
    outputs = []

    is_tree = hasattr(model, "root")
    is_hazard = is_tree or model.schema.mode == "hazard"

    if is_hazard:
        if is_tree:
            predictions = _tree_panel_predictions(model, panel)
        else:
            predictions = predict_hazard_panel(model, panel)
        sample = _scored_sample_from_panel(panel, predictions)
        spell_scores, spell_labels = None, None
    else:
        scores = predict_crosssection(model, frame["covariates"])
        sample = ScoredSample(scores=scores, labels=frame["event"])
        spell_scores, spell_labels = scores, frame["event"]

    if "roc" in metrics:
        curve = roc(sample.labels, sample.scores)
        summary["auc"] = curve.auc
        roc_path = out / "roc.csv"
        with open(roc_path, "w", newline="", encoding="utf-8") as stream:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(("fpr", "tpr"))
            for x, y in zip(curve.fpr, curve.tpr):
                writer.writerow([_float_cell(x), _float_cell(y)])
        outputs.append(roc_path)
    if "brier" in metrics:
        summary["brier"] = brier(sample.labels, sample.scores)

    time_metrics = metrics & {"troc", "tbs", "ibs", "term-structure"}
    if time_metrics and not is_hazard:
        # cross-sectional scores carry no per-period hazards
        summary["skipped_metrics"] = sorted(time_metrics)
        metrics -= time_metrics

    grid = [int(v) for v in args.troc_grid.split(",")]
    horizon = max([args.ibs_horizon] + grid)
    if metrics & {"troc", "tbs", "ibs"}:
        surv_matrix, _ = _extended_matrices(model, panel, horizon)

    if "troc" in metrics:
        rows = []
        for t in grid:
            markers = 1.0 - surv_matrix[:, t - 1]
            try:
                curve = troc(durations, events, markers, t, entries)
            except DiagnosticsError:
                continue  # no comparable pairs at this horizon
            rows.append((t, curve.auc, curve.n_cases, curve.n_controls,
                         curve.n_dropped))
        troc_path = out / "troc.csv"
        with open(troc_path, "w", newline="", encoding="utf-8") as stream:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(("t", "tauc", "case_mass", "control_mass",
                             "dropped"))
            for row in rows:
                writer.writerow([row[0], _float_cell(row[1]),
                                 _float_cell(row[2]), _float_cell(row[3]),
                                 row[4]])
        outputs.append(troc_path)
        summary["tauc"] = {str(t): auc for t, auc, *_ in rows}
    if metrics & {"tbs", "ibs"}:
        series = tbs_series(durations, events, surv_matrix,
                            range(1, args.ibs_horizon + 1), entries)
        tbs_path = out / "tbs.csv"
        with open(tbs_path, "w", newline="", encoding="utf-8") as stream:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(("t", "tbs", "n_effective", "dropped"))
            for t, v, ne, nd in zip(series.times, series.values,
                                    series.n_effective, series.n_dropped):
                writer.writerow([t, _float_cell(v), ne, nd])
        outputs.append(tbs_path)
        if "ibs" in metrics:
            summary["ibs"] = float(np.sum(series.values)
                                   / args.ibs_horizon)
    if "auc-over-time" in metrics:
        if spell_scores is None:
            eval_t = (_median_survival_time(
                life_table_from_arrays(durations, events, entries))
                if args.eval_time is None else args.eval_time)
            surv_eval, _ = _extended_matrices(model, panel, eval_t)
            spell_scores = 1.0 - surv_eval[:, eval_t - 1]
            spell_labels = frame["event"]
            summary["eval_time"] = eval_t
        series = auc_over_time(frame["final_month"], spell_labels,
                               spell_scores)
        aot_path = out / "auc_over_time.csv"
        with open(aot_path, "w", newline="", encoding="utf-8") as stream:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(("month", "auc"))
            for month, value in zip(series.months, series.aucs):
                writer.writerow([month, _float_cell(value)])
        outputs.append(aot_path)
        summary["ttc_mean_auc"] = series.ttc_mean
        summary["skipped_months"] = list(series.skipped_months)
    if "term-structure" in metrics:
        empirical = empirical_term_structure(
            life_table_from_arrays(durations, events, entries))
        expected = expected_term_structure(
            score_sets_from_predictions(predictions))
        from .dichotomiser import term_structure_mae
        summary["term_structure_mae"] = term_structure_mae(empirical,
                                                           expected)
        ts_path = out / "term_structure_comparison.csv"
        shared = sorted(empirical.support & expected.support)
        with open(ts_path, "w", newline="", encoding="utf-8") as stream:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(("t", "empirical", "expected"))
            for t in shared:
                writer.writerow([t, _float_cell(empirical.value_at(t)),
                                 _float_cell(expected.value_at(t))])
        outputs.append(ts_path)

    summary_path = out / "diagnostics.json"
    _write_json(summary, summary_path)
    outputs.append(summary_path)
    _write_manifest(out, "diagnose", args, [args.panel, args.model],
                    outputs)
    print(f"diagnostics -> {summary_path}")
    for key, value in sorted(summary.items()):
        if isinstance(value, float):
            print(f"  {key}: {value:.6f}")
    return 0


def _read_column(path, column) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as stream:
        reader = csv.DictReader(stream)
        if column not in (reader.fieldnames or ()):
            raise CliUsageError(f"{path} has no column {column!r}")
        return np.array([float(row[column]) for row in reader])


def _cmd_compare(args) -> int:
    actual = _read_column(args.actual, args.actual_col)
    scores = _read_column(args.scores, args.score_col)
    if args.severity_col:
        severity = _read_column(args.scores, args.severity_col)
    else:
        severity = np.full(scores.shape, args.severity)
    predicted = scores * severity

    result = compare_distributions(actual, predicted, bins=args.bins)
    out = _out_dir(args)
    path = out / "distribution_comparison.json"
    _write_json({"ks": result.ks, "kl": result.kl, "js": result.js,
                 "bins": result.n_bins,
                 "clipped_actual": result.clipped_actual,
                 "clipped_predicted": result.clipped_predicted}, path)
    _write_manifest(out, "compare", args, [args.actual, args.scores], [path])
    print(f"KS={result.ks:.6f} KL={result.kl:.6f} JS={result.js:.6f} "
          f"-> {path}")
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="writeoff",
                     description="Term structure of loan write-off risk: "
                                 "simulate, estimate, dichotomise, evaluate.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (reserved; evaluation is "
                            "deterministic either way)")
        p.add_argument("--config", default=None,
                       help="JSON/TOML file of flag defaults")

    p = sub.add_parser("simulate", help="draw a synthetic portfolio")
    p.add_argument("--config", required=True,
                   help="generator spec (JSON/TOML)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the spec seed")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("ingest", help="validate and normalise a panel CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", default=None,
                   help="covariate schema JSON/TOML")
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("split", help="loan-clustered train/validation split")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", default=None)
    p.add_argument("--fraction", type=float, default=0.7)
    common(p)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("km", help="Kaplan-Meier life table + term structure")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--small-risk-threshold", type=int, default=30)
    common(p)
    p.set_defaults(func=_cmd_km)

    p = sub.add_parser("tree", help="conditional-inference survival tree")
    p.add_argument("--input")
    p.add_argument("--schema", default=None)
    p.add_argument("--covariates", default=None,
                   help="comma list (default: all schema covariates)")
    p.add_argument("--mincriterion", type=float, default=0.99)
    p.add_argument("--minsplit", type=int, default=1000)
    p.add_argument("--minbucket", type=int, default=50)
    p.add_argument("--maxdepth", type=int, default=4)
    p.add_argument("--out", default=None)
    p.add_argument("--print", dest="print_rules", action="store_true",
                   help="render the rule list after fitting")
    p.add_argument("--show", default=None,
                   help="print the rules of an existing tree JSON and exit")
    common(p)
    p.set_defaults(func=_cmd_tree)

    p = sub.add_parser("glm", help="logistic / discrete-time hazard GLM")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", default=None)
    p.add_argument("--formula", required=True,
                   help="e.g. 'event ~ period() + x1 + "
                        "C(pay_method, ref=DEBIT)'")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=_cmd_glm)

    p = sub.add_parser("predict", help="score a panel with a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--schema", default=None)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("dichotomise",
                       help="Youden cut-off / cost-multiple optimisation")
    p.add_argument("--panel", required=True)
    p.add_argument("--schema", default=None)
    p.add_argument("--predictions", required=True,
                   help="hazard prediction CSV from `predict`")
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--a-grid", default=None, help="lo:hi:step")
    p.add_argument("--bounds", default=None, help="lo:hi cut-off bounds")
    common(p)
    p.set_defaults(func=_cmd_dichotomise)

    p = sub.add_parser("diagnose", help="evaluation metric battery")
    p.add_argument("--panel", required=True)
    p.add_argument("--schema", default=None)
    p.add_argument("--model", required=True)
    p.add_argument("--metrics",
                   default="roc,brier,troc,tbs,ibs,auc-over-time,"
                           "term-structure")
    p.add_argument("--troc-grid",
                   default=",".join(str(t) for t in DEFAULT_TROC_GRID))
    p.add_argument("--ibs-horizon", type=int, default=DEFAULT_IBS_HORIZON)
    p.add_argument("--eval-time", type=int, default=None,
                   help="spell time for the calendar AUC score "
                        "(default: median survival)")
    common(p)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("compare",
                       help="distributional comparison of composed LGD")
    p.add_argument("--actual", required=True, help="CSV of realised values")
    p.add_argument("--actual-col", default="lgd")
    p.add_argument("--scores", required=True,
                   help="CSV of write-off scores (from `predict`)")
    p.add_argument("--score-col", default="score")
    p.add_argument("--severity", type=float, default=1.0,
                   help="constant loss severity multiplier")
    p.add_argument("--severity-col", default=None,
                   help="severity column inside the scores file")
    p.add_argument("--bins", type=int, default=100)
    common(p)
    p.set_defaults(func=_cmd_compare)
    return parser


def _apply_config_overrides(args, argv):
    """Config file supplies flag values; explicit flags still win."""
    config = getattr(args, "config", None)
    if config is None or args.command == "simulate":
        return
    payload = _load_config_file(config)
    for key, value in payload.items():
        dest = key.replace("-", "_")
        flag = "--" + key.replace("_", "-")
        if flag not in argv and hasattr(args, dest):
            setattr(args, dest, value)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_overrides(args, argv)
        args._started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        return args.func(args)
    except NUMERICAL_ERRORS as exc:
        _emit_error(exc, 2)
        return 2
    except (CliUsageError,) + VALIDATION_ERRORS as exc:
        _emit_error(exc, 1)
        return 1
    except FileNotFoundError as exc:
        _emit_error(exc, 1)
        return 1


def _emit_error(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc),
               "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
