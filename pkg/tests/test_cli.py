import json

import pytest
import yaml

from personkg.cli import RunConfig, main
from personkg.dataset import import_alpaca
from synthetic import run_cli_pipeline


@pytest.fixture(scope="module")
def pipeline(synthetic_tree, tmp_path_factory):
    return run_cli_pipeline(synthetic_tree, tmp_path_factory.mktemp("run"))


def test_clean_outputs(pipeline, capsys):
    summary = json.loads((pipeline["clean"] / "clean_summary.json").read_text())
    assert summary["docs_in"] == 66 and summary["kept"] == 60 and summary["duplicates_removed"] == 6
    assert len(list((pipeline["clean"] / "corpus").glob("*.jsonl"))) == 60


def test_dataset_outputs(pipeline):
    samples = import_alpaca(pipeline["dataset"] / "alpaca.json")
    assert len(samples) == 50
    labels = [s.meta.strata_labels[0] for s in samples]
    assert labels.count("military") == 30 and labels.count("culture") == 20


def test_predictions_and_report(pipeline):
    rows = [json.loads(x) for x in (pipeline["extract"] / "predictions.jsonl").read_text().splitlines()]
    assert len(rows) == 60 and all(r["status"] == "ok" for r in rows)
    report = json.loads((pipeline["evaluate"] / "report.json").read_text())
    assert report["run_mean"] == pytest.approx(100, abs=0.01)
    assert (pipeline["evaluate"] / "report.txt").read_text().startswith("scheme: Average Distribution")


def test_run_manifest_has_no_absolute_paths(pipeline):
    for d in pipeline.values():
        text = (d / "run_manifest.json").read_text()
        assert str(d.parent) not in text
        body = json.loads(text)
        assert all(len(v["sha256"]) == 64 for v in body["inputs"].values())


def test_export_graph_both_formats(pipeline, synthetic_tree, tmp_path, capsys):
    for src in (pipeline["extract"] / "predictions.jsonl", synthetic_tree["golds"]):
        out = tmp_path / src.stem
        assert main(["export-graph", "--records", str(src), "--out", str(out)]) == 0
        assert "MERGE (:Person" in (out / "graph.cypher").read_text(encoding="utf-8")
    a = (tmp_path / "predictions" / "graph.jsonl").read_text(encoding="utf-8")
    b = (tmp_path / "golds" / "graph.jsonl").read_text(encoding="utf-8")
    assert a == b


def test_analyze_weights(tmp_path, capsys, pipeline):
    assert main(["analyze-weights", "--out", str(tmp_path / "a"), "--variance-mode", "sample"]) == 0
    assert json.loads((tmp_path / "a" / "sensitivity.json").read_text())["selected_scheme"] == "Random 1"
    report = pipeline["evaluate"] / "report.json"
    assert main(["analyze-weights", "--reports", f"x={report}", f"y={report}", "--out", str(tmp_path / "b")]) == 0
    data = json.loads((tmp_path / "b" / "sensitivity.json").read_text())
    assert all(v["variance"] == pytest.approx(0, abs=1e-9) for v in data["per_scheme_variance"])
    assert main(["analyze-weights", "--variance-mode", "median", "--out", str(tmp_path / "c")]) == 2


def test_exit_codes(tmp_path, synthetic_tree, pipeline, capsys):
    assert main(["clean", "--manifest", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert main(["build-dataset", "--corpus", str(pipeline["clean"] / "corpus"), "--golds",
                 str(synthetic_tree["golds"]), "--n", "61", "--out", str(tmp_path / "d")]) == 1
    assert main(["evaluate", "--preds", str(pipeline["extract"] / "predictions.jsonl"), "--golds",
                 str(synthetic_tree["golds"]), "--embedding", "mock", "--scheme", "random 42",
                 "--out", str(tmp_path / "e")]) == 2
    assert main(["build-dataset", "--golds", str(synthetic_tree["golds"]), "--n", "5", "--template", "missing",
                 "--out", str(tmp_path / "f")]) == 2
    assert main(["no-such-command"]) == 2


def test_clean_with_unreadable_doc(tmp_path, capsys):
    (tmp_path / "ok.txt").write_text("曾国藩，字伯涵。", encoding="utf-8")
    m = tmp_path / "m.yaml"
    m.write_text(yaml.safe_dump([{"path": "ok.txt", "person_name": "曾国藩"},
                                 {"path": "gone.txt", "person_name": "左宗棠"}], allow_unicode=True),
                 encoding="utf-8")
    assert main(["clean", "--manifest", str(m), "--out", str(tmp_path / "o")]) == 0
    assert "2 in, 1 kept" in capsys.readouterr().out


def test_extract_failure_statuses(tmp_path, synthetic_tree, capsys):
    test = tmp_path / "t.jsonl"
    test.write_text("\n".join(json.dumps(r, ensure_ascii=False) for r in [
        {"record_id": "x1", "text": "毫无关联的文本。"},
        {"record_id": "x2", "text": "含有******的文本"},
        {"record_id": "x3", "person_name": "无名"},
    ]), encoding="utf-8")
    assert main(["extract", "--test", str(test), "--endpoint", str(synthetic_tree["good"]),
                 "--out", str(tmp_path / "o")]) == 0
    rows = [json.loads(x) for x in (tmp_path / "o" / "predictions.jsonl").read_text().splitlines()]
    assert [r["status"] for r in rows] == ["parse_error", "frame_error", "no_text"]


def test_run_config_roundtrip_and_defaults(tmp_path, synthetic_tree, pipeline, capsys):
    cfg = RunConfig(golds=str(synthetic_tree["golds"]), corpus=str(pipeline["clean"] / "corpus"), n=10, seed=5,
                    out=str(tmp_path / "cfgrun"))
    p = tmp_path / "run.yaml"
    p.write_text(cfg.to_yaml(), encoding="utf-8")
    assert RunConfig.from_file(p) == cfg
    assert main(["build-dataset", "--config", str(p)]) == 0
    assert len(import_alpaca(tmp_path / "cfgrun" / "alpaca.json")) == 10
    assert main(["build-dataset", "--config", str(p), "--n", "12"]) == 0
    assert len(import_alpaca(tmp_path / "cfgrun" / "alpaca.json")) == 12
    p.write_text("bogus_key: 1\n")
    assert main(["build-dataset", "--config", str(p)]) == 2
