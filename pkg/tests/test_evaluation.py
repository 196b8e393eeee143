import pytest
from hypothesis import given, settings, strategies as st

from personkg.evaluation import (
    EvaluationError,
    EvaluationReport,
    WeightScheme,
    aggregate,
    evaluate_run,
    exact_match_score,
    get_scheme,
    load_weight_schemes,
    score_record,
    similarity_score,
)
from personkg.gateway import MockEmbedder, mock_embed
from personkg.schema import PersonRecord, builtin_schema, validate_record
from synthetic import gold_output

SCHEMA = builtin_schema()
EMB = MockEmbedder()


def gold(i=0):
    return validate_record(gold_output(i))


def test_exact_match_examples():
    assert exact_match_score("曾国藩", "曾国藩") == 100
    assert exact_match_score("男", "女") == 0
    assert exact_match_score(" 1811年11月26日", "1811年11月26日") == 100


def test_similarity_examples():
    assert similarity_score("湘军", "湘军", EMB) == 100
    assert similarity_score("", "", EMB) == 100
    assert similarity_score("", "湘军", EMB) == 0
    assert similarity_score("湘军", "变法", EMB) == 0


def test_similarity_abab():
    a, b = mock_embed("abab").values, mock_embed("ab").values
    dot = sum(x * y for x, y in zip(a, b))
    assert similarity_score("abab", "ab", EMB) == pytest.approx(100 * max(0.0, dot))


def test_score_record_cases():
    g = gold()
    assert [fs.score for fs in score_record(g, g, SCHEMA, EMB)] == [100.0] * 14
    empty = PersonRecord(name="")
    scores = score_record(empty, g, SCHEMA, EMB)
    assert all(fs.score == 0 for fs in scores)
    flipped = validate_record({**gold_output(0), "性别": "男" if gold_output(0)["性别"] == "女" else "女"})
    scores = score_record(flipped, g, SCHEMA, EMB)
    assert [fs.field_key for fs in scores if fs.score != 100] == ["Gender"]
    assert all(fs.score == 0 for fs in score_record(None, g, SCHEMA))


def test_aggregate_examples():
    r1 = get_scheme("random1")
    assert r1.name == "Random 1"
    assert aggregate([100] + [0] * 13, r1) == pytest.approx(3.46)
    with pytest.raises(EvaluationError):
        aggregate([100] * 13, r1)


def test_scheme_loading():
    schemes = load_weight_schemes()
    assert [s.name for s in schemes][:3] == ["Average Distribution", "Property Importance", "Random 1"]
    assert len(schemes) == 10
    with pytest.raises(EvaluationError):
        WeightScheme("bad", (0.5,) * 14)
    with pytest.raises(KeyError):
        get_scheme("random 9")


def test_custom_weights_file(tmp_path):
    rows = ["No.,Component,Flat"] + [f"{i},f{i},{1 / 14}" for i in range(1, 15)]
    p = tmp_path / "w.csv"
    p.write_text("\n".join(rows))
    assert get_scheme("flat", load_weight_schemes(p)).weights[0] == pytest.approx(1 / 14)
    p.write_text("\n".join(rows[:-1]))
    with pytest.raises(EvaluationError, match="14"):
        load_weight_schemes(p)


def test_evaluate_run_means():
    golds = [(f"r{i}", gold(i)) for i in range(30)]
    scheme = get_scheme("random1")
    report = evaluate_run(dict(golds), golds, SCHEMA, scheme, EMB)
    assert report.run_mean == pytest.approx(100)
    half = {rid: rec for rid, rec in golds[:15]}
    report = evaluate_run(half, golds, SCHEMA, scheme, EMB)
    assert report.run_mean == pytest.approx(50)
    assert sum(r.status == "missing" for r in report.per_record) == 15
    with pytest.raises(EvaluationError, match="no records"):
        evaluate_run({}, [], SCHEMA, scheme, EMB)
    with pytest.raises(EvaluationError, match="duplicate"):
        evaluate_run({}, golds + golds[:1], SCHEMA, scheme, EMB)
    with pytest.raises(EvaluationError, match="without gold"):
        evaluate_run({"zzz": gold()}, golds, SCHEMA, scheme, EMB)


def test_embedder_failure_is_record_level():
    def broken(text):
        raise RuntimeError("provider down")

    g = gold()
    pred = validate_record({**gold_output(0), "别名": "另一个别名"})
    report = evaluate_run({"a": pred, "b": g}, [("a", g), ("b", g)], SCHEMA, get_scheme("random1"), broken)
    statuses = {r.record_id: r.status for r in report.per_record}
    assert statuses["a"] == "scoring_error"
    assert statuses["b"] == "ok"  # identical texts never reach the embedder


def test_report_roundtrip():
    golds = [(f"r{i}", gold(i)) for i in range(3)]
    report = evaluate_run({"r0": gold(1)}, golds, SCHEMA, get_scheme("random2"), EMB)
    back = EvaluationReport.from_dict(report.to_dict())
    assert back.to_dict() == report.to_dict()
    assert "MEAN" in report.to_table()


_score = st.floats(0, 100, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(_score, min_size=14, max_size=14), st.integers(0, 13), st.floats(0.01, 50))
def test_aggregate_monotone(scores, i, bump):
    for s in load_weight_schemes():
        hi = list(scores)
        hi[i] = min(100.0, hi[i] + bump)
        assert aggregate(hi, s) >= aggregate(scores, s) - 1e-9
