import itertools
import json

import pytest
from hypothesis import given, settings, strategies as st

from personkg.dataset import (
    ALPACA_KEYS,
    AlpacaFormatError,
    DatasetError,
    GoldPair,
    InstructionSample,
    SampleMeta,
    audit_outputs,
    build_samples,
    export_alpaca,
    import_alpaca,
    largest_remainder,
    quota_label,
    stratified_sample,
)
from personkg.prompts import builtin_template
from synthetic import bio_text, gold_output

ZH = builtin_template("zh")


def pairs(n):
    return [GoldPair(bio_text(i % 60), gold_output(i % 60), f"p{i}", ("military",), f"r{i}") for i in range(n)]


def labelled(counts):
    out = []
    for label, c in counts.items():
        out += [InstructionSample(f"{label}{i}", "", "", SampleMeta(f"{label}{i}", (label,))) for i in range(c)]
    return out


def test_build_150():
    res = build_samples(pairs(150), ZH)
    assert len(res.samples) == 150 and not res.errors
    assert build_samples([], ZH).samples == []
    s = res.samples[0]
    assert s.input == "" and bio_text(0) in s.instruction
    assert json.loads(s.output)["姓名"] == gold_output(0)["姓名"]
    assert audit_outputs(res.samples) == []


def test_build_rejects_invalid_gold():
    g = gold_output(0)
    del g["姓名"]
    res = build_samples([GoldPair("text", g, record_id="bad")], ZH)
    assert res.samples == [] and len(res.errors) == 1 and "bad" in str(res.errors[0])


def test_split_input():
    s = build_samples(pairs(1), ZH, split_input=True).samples[0]
    assert s.input == bio_text(0) and bio_text(0) not in s.instruction


def _brute_min_l1(counts, n):
    labels = sorted(counts)
    total = sum(counts.values())
    best = None
    for q in itertools.product(*(range(counts[k] + 1) for k in labels)):
        if sum(q) != n:
            continue
        d = sum(abs(qi - n * counts[k] / total) for qi, k in zip(q, labels))
        best = d if best is None else min(best, d)
    return best


def test_quota_example_is_brute_force_optimum():
    q = largest_remainder({"military": 90, "culture": 60}, 50)
    assert q == {"military": 30, "culture": 20}
    assert _brute_min_l1({"military": 90, "culture": 60}, 50) == 0


@settings(max_examples=150, deadline=None)
@given(st.dictionaries(st.sampled_from("abcd"), st.integers(1, 8), min_size=1, max_size=3), st.data())
def test_largest_remainder_matches_oracle(counts, data):
    n = data.draw(st.integers(0, sum(counts.values())))
    q = largest_remainder(counts, n)
    assert sum(q.values()) == n
    total = sum(counts.values())
    dist = sum(abs(q[k] - n * counts[k] / total) for k in counts)
    assert dist == pytest.approx(_brute_min_l1(counts, n))
    assert all(abs(q[k] - n * counts[k] / total) < 1 for k in counts)


def test_stratified_example_and_determinism():
    samples = labelled({"military": 90, "culture": 60})
    picked = stratified_sample(samples, 50, seed=3)
    assert sum(quota_label(s) == "military" for s in picked) == 30
    assert sum(quota_label(s) == "culture" for s in picked) == 20
    assert picked == stratified_sample(samples, 50, seed=3)
    assert [samples.index(s) for s in picked] == sorted(samples.index(s) for s in picked)
    assert set(stratified_sample(samples, 150, 0)) == set(samples)
    with pytest.raises(DatasetError):
        stratified_sample(samples, 151, 0)


def test_multilabel_and_missing_labels():
    s = InstructionSample("x", meta=SampleMeta("a", ("military", "culture")))
    assert quota_label(s) == "culture"
    with pytest.raises(DatasetError, match="no strata labels"):
        quota_label(InstructionSample("x", meta=SampleMeta("孤")))


def test_alpaca_roundtrip(tmp_path):
    samples = build_samples(pairs(150), ZH).samples
    path = export_alpaca(samples, tmp_path / "a.json")
    data = json.loads(path.read_text(encoding="utf-8"))
    assert all(set(d) == set(ALPACA_KEYS) for d in data)
    back = import_alpaca(path)
    assert [b.alpaca() for b in back] == [s.alpaca() for s in samples]
    assert back[5].meta.record_id == "r5"
    assert export_alpaca([], tmp_path / "e.json").read_text() == "[]"


def test_import_rejects_bad_keys(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps([{"instrcution": "", "input": "", "output": ""}]))
    with pytest.raises(AlpacaFormatError):
        import_alpaca(p)
    p.write_text('[{"instruction": ')
    with pytest.raises(AlpacaFormatError, match="line 1"):
        import_alpaca(p)
