import math

import pytest
from hypothesis import given, settings, strategies as st

from personkg.evaluation import EvaluationReport, FieldScore, RecordResult, load_weight_schemes
from personkg.schema import builtin_schema
from personkg.sensitivity import (
    SensitivityError,
    SensitivityInput,
    load_score_matrix,
    recompute_from_field_scores,
    scheme_sensitivity,
    variance,
)

SCHEMA = builtin_schema()


def test_variance_examples():
    assert variance([73.6475, 87.6069, 89.0350, 89.3866]) == pytest.approx(42.7959, abs=0.005)
    assert variance([77.3896, 87.3133, 88.3156, 88.3746]) == pytest.approx(21.2913, abs=0.0005)
    assert variance([3.3] * 4) == pytest.approx(0)
    assert variance([0, 10]) == 25 and variance([0, 10], "sample") == 50
    with pytest.raises(SensitivityError):
        variance([1.0], "sample")
    with pytest.raises(SensitivityError):
        variance([1.0, 2.0], "median")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=8))
def test_variance_matches_definition(xs):
    n = len(xs)
    mean = sum(xs) / n
    ss = sum((x - mean) ** 2 for x in xs)
    assert variance(xs) == pytest.approx(ss / n, abs=1e-6)
    assert variance(xs, "sample") == pytest.approx(ss / (n - 1), abs=1e-6)


def test_selection_on_reference_matrix():
    data = load_score_matrix()
    assert data.checkpoints == ["0", "10", "30", "50"] and len(data.schemes) == 10
    for mode in ("population", "sample"):
        assert scheme_sensitivity(data, mode).selected_scheme == "Random 1"


def test_tie_goes_to_first():
    data = SensitivityInput(["a", "b"], ["X", "Y"], [[1, 3], [1, 3]])
    assert scheme_sensitivity(data).selected_scheme == "X"


def test_dimension_errors(tmp_path):
    with pytest.raises(SensitivityError):
        SensitivityInput(["a", "b"], ["X"], [[1, 2, 3]])
    with pytest.raises(SensitivityError, match="2 checkpoints"):
        scheme_sensitivity(SensitivityInput(["a"], ["X"], [[1]]))
    p = tmp_path / "m.csv"
    p.write_text("Weighting Method,0,10\nA,1,2\nB,1\n")
    with pytest.raises(SensitivityError):
        load_score_matrix(p)


def report_from_means(means, label="r"):
    scores = [FieldScore(f.key, f.eval_method, m) for f, m in zip(SCHEMA.fields, means)]
    return EvaluationReport([RecordResult(label, scores, 0.0)], 0.0, "x", SCHEMA.keys)


def test_recompute_constant_and_identical():
    schemes = load_weight_schemes()
    single = recompute_from_field_scores([("c0", report_from_means([100] * 14))], schemes)
    for row, s in zip(single.scores, schemes):
        assert row[0] == pytest.approx(100, abs=100 * abs(sum(s.weights) - 1) + 1e-9)
    rep = report_from_means([70] * 14)
    same = scheme_sensitivity(recompute_from_field_scores([("a", rep), ("b", rep)], schemes))
    assert all(v == pytest.approx(0, abs=1e-12) for _, v in same.per_scheme_variance)


def test_achievement_only_gain_orders_by_weight():
    schemes = load_weight_schemes()
    i = SCHEMA.index("Achievements")
    lo = [50.0] * 14
    hi = list(lo)
    hi[i] = 90.0
    data = recompute_from_field_scores([("c0", report_from_means(lo)), ("c1", report_from_means(hi))], schemes)
    got = dict(scheme_sensitivity(data).per_scheme_variance)
    # brute force: two points differing by w*40 have population variance (w*40/2)^2
    for s in schemes:
        assert got[s.name] == pytest.approx((s.weights[i] * 40 / 2) ** 2)
    for a in schemes:
        for b in schemes:
            if a.weights[i] > b.weights[i] + 1e-12:
                assert got[a.name] > got[b.name]


def test_recompute_rejects_different_test_sets():
    a = report_from_means([1] * 14, "r1")
    b = report_from_means([1] * 14, "r2")
    with pytest.raises(SensitivityError, match="different test set"):
        recompute_from_field_scores([("a", a), ("b", b)], load_weight_schemes())


def test_report_json_and_table():
    data = load_score_matrix()
    rep = scheme_sensitivity(data)
    d = rep.to_dict()
    assert d["selected_scheme"] == "Random 1" and len(d["sample_variance"]) == 10
    assert "Random 1 *" in rep.to_table(data)
    assert math.isfinite(d["per_scheme_variance"][0]["variance"])
