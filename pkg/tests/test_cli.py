import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from writeoff.cli import main

GENERATOR_CONFIG = {
    "n_loans": 400,
    "seed": 11,
    "baseline_logit": [-1.8, -2.0, -2.2, -2.4],
    "covariates": [
        {"name": "balance", "kind": "numeric", "dist": "normal",
         "mu": 0.0, "sd": 1.0},
        {"name": "pay_method", "kind": "categorical",
         "levels": ["DEBIT", "CASH"], "probs": [0.7, 0.3]},
    ],
    "effects": {"balance": 0.6, "pay_method": {"CASH": 0.4}},
    "censor_hazard": 0.03,
    "cure_hazard": 0.05,
    "recurrence_probability": 0.3,
    "truncation_probability": 0.1,
    "truncation_max_offset": 4,
    "horizon": 36,
    "calendar_months": 90,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "generator.json"
    config.write_text(json.dumps(GENERATOR_CONFIG))
    assert main(["simulate", "--config", str(config),
                 "--out-dir", str(root)]) == 0
    assert main(["split", "--input", str(root / "panel.csv"),
                 "--schema", str(root / "schema.json"),
                 "--fraction", "0.7", "--seed", "5",
                 "--out-dir", str(root)]) == 0
    return root


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 1
    err = capsys.readouterr().err
    assert "usage" in err
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["exit_code"] == 1


def test_unknown_flag_is_usage_error(capsys):
    assert main(["km", "--nonsense"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_file_reports_json(capsys):
    assert main(["km", "--input", "/definitely/not/here.csv"]) == 1
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "FileNotFoundError"


def test_simulate_outputs(workspace):
    assert (workspace / "panel.csv").exists()
    assert (workspace / "truth.csv").exists()
    assert (workspace / "schema.json").exists()
    manifest = json.loads((workspace / "simulate_manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 11
    assert manifest["input_hashes"]


def test_split_is_loan_disjoint(workspace):
    train = (workspace / "train.csv").read_text().splitlines()[1:]
    valid = (workspace / "valid.csv").read_text().splitlines()[1:]
    train_loans = {line.split(",")[0] for line in train}
    valid_loans = {line.split(",")[0] for line in valid}
    assert train_loans and valid_loans
    assert not train_loans & valid_loans
    report = json.loads((workspace / "split_report.json").read_text())
    for side in ("train", "valid"):
        for rate in report["average_discrepancy_vs_full"][side].values():
            assert 0.0 <= rate <= 1.0


def test_km_on_reference_rows(tmp_path):
    rows = [
        "loan_id,period,spell_num,spell_period,entry_time,stop_time,"
        "resolution,spell_age,event,reporting_month",
        "1,5,1,1,0,2,WOFF,2,0,2015-05",
        "1,6,1,2,0,2,WOFF,2,1,2015-06",
        "2,12,1,1,0,3,CENS,3,0,2016-12",
        "2,13,1,2,0,3,CENS,3,0,2017-01",
        "2,14,1,3,0,3,CENS,3,0,2017-02",
        "3,6,1,1,0,2,CURE,2,0,2015-06",
        "3,7,1,2,0,2,CURE,2,0,2015-07",
        "3,24,2,1,0,3,WOFF,3,0,2016-12",
        "3,25,2,2,0,3,WOFF,3,0,2017-01",
        "3,26,2,3,0,3,WOFF,3,1,2017-02",
        "4,13,1,13,12,15,CURE,3,0,2016-01",
        "4,14,1,14,12,15,CURE,3,0,2016-02",
        "4,15,1,15,12,15,CURE,3,0,2016-03",
        "4,24,2,1,0,4,CURE,4,0,2016-12",
        "4,25,2,2,0,4,CURE,4,0,2017-01",
        "4,26,2,3,0,4,CURE,4,0,2017-02",
        "4,27,2,4,0,4,CURE,4,0,2017-03",
        "4,40,3,1,0,2,CENS,2,0,2018-04",
        "4,41,3,2,0,2,CENS,2,0,2018-05",
    ]
    panel = tmp_path / "panel.csv"
    panel.write_text("\n".join(rows) + "\n")
    assert main(["km", "--input", str(panel),
                 "--out-dir", str(tmp_path)]) == 0
    with open(tmp_path / "lifetable.csv", newline="") as stream:
        table = list(csv.DictReader(stream))
    assert [row["t"] for row in table] == ["2", "3"]


def test_full_pipeline_and_determinism(workspace, tmp_path):
    def run_pipeline(out_root: Path):
        out_root.mkdir(exist_ok=True)
        train = str(workspace / "train.csv")
        valid = str(workspace / "valid.csv")
        schema = str(workspace / "schema.json")
        assert main(["km", "--input", train, "--schema", schema,
                     "--out-dir", str(out_root)]) == 0
        assert main(["glm", "--input", train, "--schema", schema,
                     "--formula",
                     "event ~ period() + balance + "
                     "C(pay_method, ref=DEBIT)",
                     "--out-dir", str(out_root)]) == 0
        assert main(["tree", "--input", train, "--schema", schema,
                     "--mincriterion", "0.95", "--minsplit", "60",
                     "--minbucket", "15", "--maxdepth", "2",
                     "--out-dir", str(out_root)]) == 0
        assert main(["predict", "--model", str(out_root / "model.json"),
                     "--input", valid, "--schema", schema,
                     "--out-dir", str(out_root)]) == 0
        assert main(["dichotomise", "--panel", valid, "--schema", schema,
                     "--predictions", str(out_root / "predictions.csv"),
                     "--a-grid", "1:8:1",
                     "--out-dir", str(out_root)]) == 0
        assert main(["diagnose", "--panel", valid, "--schema", schema,
                     "--model", str(out_root / "model.json"),
                     "--troc-grid", "6,12", "--ibs-horizon", "12",
                     "--out-dir", str(out_root)]) == 0

    first = tmp_path / "run1"
    second = tmp_path / "run2"
    run_pipeline(first)
    run_pipeline(second)

    compared = 0
    for path in sorted(first.iterdir()):
        if path.name.endswith("_manifest.json"):
            continue  # manifests carry wall-clock timestamps
        twin = second / path.name
        assert twin.exists(), path.name
        assert path.read_bytes() == twin.read_bytes(), path.name
        compared += 1
    assert compared >= 8


def test_diagnose_outputs_are_sane(workspace, tmp_path):
    out = tmp_path / "diag"
    train = str(workspace / "train.csv")
    schema = str(workspace / "schema.json")
    assert main(["glm", "--input", train, "--schema", schema,
                 "--formula", "event ~ period() + balance",
                 "--out-dir", str(out)]) == 0
    assert main(["diagnose", "--panel", str(workspace / "valid.csv"),
                 "--schema", schema, "--model", str(out / "model.json"),
                 "--troc-grid", "3,6,12", "--ibs-horizon", "12",
                 "--out-dir", str(out)]) == 0
    summary = json.loads((out / "diagnostics.json").read_text())
    assert 0.0 <= summary["auc"] <= 1.0
    assert summary["ibs"] >= 0.0
    assert "term_structure_mae" in summary
    assert (out / "tbs.csv").exists()
    assert (out / "troc.csv").exists()
    assert (out / "auc_over_time.csv").exists()


def test_crosssection_model_pipeline(workspace, tmp_path):
    out = tmp_path / "lr"
    train = str(workspace / "train.csv")
    schema = str(workspace / "schema.json")
    assert main(["glm", "--input", train, "--schema", schema,
                 "--formula", "writeoff ~ balance + C(pay_method)",
                 "--out-dir", str(out)]) == 0
    assert main(["predict", "--model", str(out / "model.json"),
                 "--input", str(workspace / "valid.csv"),
                 "--schema", schema, "--out-dir", str(out)]) == 0
    with open(out / "predictions.csv", newline="") as stream:
        rows = list(csv.DictReader(stream))
    assert set(rows[0]) == {"loan_id", "spell_num", "score"}
    assert all(0.0 <= float(r["score"]) <= 1.0 for r in rows)

    # scores compose into an LGD distribution comparison
    actual = out / "actual.csv"
    rng = np.random.default_rng(3)
    with open(actual, "w", newline="") as stream:
        writer = csv.writer(stream)
        writer.writerow(["lgd"])
        for v in rng.beta(0.4, 2.0, size=len(rows)):
            writer.writerow([repr(float(v))])
    assert main(["compare", "--actual", str(actual),
                 "--scores", str(out / "predictions.csv"),
                 "--severity", "0.8", "--out-dir", str(out)]) == 0
    payload = json.loads((out / "distribution_comparison.json").read_text())
    assert 0.0 <= payload["ks"] <= 1.0
    assert payload["js"] <= math.log(2) + 1e-9
    # spell-level scores still feed the plain cut-off search
    assert main(["dichotomise", "--panel", str(workspace / "valid.csv"),
                 "--schema", schema,
                 "--predictions", str(out / "predictions.csv"),
                 "--a", "2", "--out-dir", str(out)]) == 0
    cutoff = json.loads((out / "cutoff.json").read_text())
    assert 0.0 <= cutoff["c_star"] <= 1.0
    assert main(["dichotomise", "--panel", str(workspace / "valid.csv"),
                 "--schema", schema,
                 "--predictions", str(out / "predictions.csv"),
                 "--a-grid", "1:4:1", "--out-dir", str(out)]) == 1
    # skipped time-dependent metrics are reported, not errors
    assert main(["diagnose", "--panel", str(workspace / "valid.csv"),
                 "--schema", schema, "--model", str(out / "model.json"),
                 "--out-dir", str(out)]) == 0
    summary = json.loads((out / "diagnostics.json").read_text())
    assert set(summary["skipped_metrics"]) == {"troc", "tbs", "ibs",
                                               "term-structure"}


def test_tree_show_and_print(workspace, tmp_path, capsys):
    out = tmp_path / "tree"
    assert main(["tree", "--input", str(workspace / "train.csv"),
                 "--schema", str(workspace / "schema.json"),
                 "--mincriterion", "0.9", "--minsplit", "50",
                 "--minbucket", "10", "--maxdepth", "2",
                 "--print", "--out-dir", str(out)]) == 0
    first = capsys.readouterr().out
    assert "[1] root" in first
    assert main(["tree", "--show", str(out / "tree.json")]) == 0
    again = capsys.readouterr().out
    assert "[1] root" in again


def test_ingest_normalises(workspace, tmp_path):
    out = tmp_path / "ingest"
    assert main(["ingest", "--input", str(workspace / "panel.csv"),
                 "--schema", str(workspace / "schema.json"),
                 "--out-dir", str(out)]) == 0
    normalised = out / "panel_validated.csv"
    assert normalised.read_bytes() == (workspace / "panel.csv").read_bytes()


def test_config_file_supplies_defaults(workspace, tmp_path):
    out = tmp_path / "cfg"
    cfg = tmp_path / "flags.json"
    cfg.write_text(json.dumps({"fraction": 0.5, "seed": 9}))
    assert main(["split", "--input", str(workspace / "panel.csv"),
                 "--schema", str(workspace / "schema.json"),
                 "--config", str(cfg), "--out-dir", str(out)]) == 0
    report = json.loads((out / "split_report.json").read_text())
    total = report["train_loans"] + report["valid_loans"]
    assert report["train_loans"] == round(0.5 * total)


def test_separation_gives_numerical_exit(tmp_path, capsys):
    rows = ["loan_id,period,spell_num,spell_period,entry_time,stop_time,"
            "resolution,spell_age,event,reporting_month,flag"]
    for i in range(1, 21):
        res = "WOFF" if i <= 10 else "CENS"
        flag = "1.0" if i <= 10 else "0.0"
        event = "1" if res == "WOFF" else "0"
        rows.append(f"{i},1,1,1,0,1,{res},1,{event},2015-01,{flag}")
    panel = tmp_path / "panel.csv"
    panel.write_text("\n".join(rows) + "\n")
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({"numeric": ["flag"]}))
    code = main(["glm", "--input", str(panel), "--schema", str(schema),
                 "--formula", "writeoff ~ flag", "--out-dir", str(tmp_path)])
    assert code == 2
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "SeparationError"
