import json
import logging

import pytest
import yaml
from hypothesis import given, settings, strategies as st

from personkg.corpus import (
    UNASSIGNED,
    CorpusConfigError,
    CorpusDocument,
    clean_text,
    dedupe,
    group_by_person,
    load_directory,
    load_manifest,
    read_corpus,
    run_pipeline,
    segment,
    write_corpus,
)


def doc(text, person="曾国藩", i=0, kind="encyclopedia"):
    return CorpusDocument(f"d{i}", person, kind, text)


def test_clean_example():
    assert clean_text("曾国藩\u200b★★  字伯涵") == "曾国藩 字伯涵"
    assert clean_text("") == ""
    assert clean_text("a\x00b\tc\r\n\n d ▲▲") == "ab c d"


_any_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=60)


@settings(max_examples=300, deadline=None)
@given(_any_text)
def test_clean_invariants(raw):
    out = clean_text(raw)
    assert clean_text(out) == out
    assert "  " not in out and out == out.strip()
    assert not any(ch in "\t\n\r\x00\u200b" for ch in out)


def test_dedupe_exact_and_disjoint():
    a, b = doc("湘军起于湖南", i=1), doc("戊戌变法失败", i=2)
    assert dedupe([a, doc("湘军起于湖南", i=3)]) == [a]
    assert dedupe([a, b], near_dup_threshold=0.9) == [a, b]


def _brute_jaccard(x, y, k=5):
    gx = {x[i:i + k] for i in range(len(x) - k + 1)}
    gy = {y[i:i + k] for i in range(len(y) - k + 1)}
    inter = sum(1 for g in gx if g in gy)
    return inter / (len(gx) + len(gy) - inter)


def test_near_duplicate_pair():
    base = "".join(chr(0x4E00 + (i * 37) % 500) for i in range(100))
    other = base[:98] + "甲乙"
    assert len(base) == len(other) == 100
    assert sum(a != b for a, b in zip(base, other)) == 2
    j = _brute_jaccard(base, other)
    assert j == pytest.approx(94 / 98) and j >= 0.9
    a, b = doc(base, i=1), doc(other, i=2)
    assert dedupe([a, b], near_dup_threshold=0.9) == [a]
    assert dedupe([a, b]) == [a, b]


def test_segment_greedy_example():
    s = "甲" * 39 + "。"
    text = s + s.replace("甲", "乙") + s.replace("甲", "丙")
    segs = segment(text, 100)
    assert [len(x) for x in segs] == [80, 40]
    assert segment("", 100) == []
    with pytest.raises(CorpusConfigError):
        segment(text, 10)


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=st.sampled_from(list("曾国藩湘军。！？；. a")), max_size=400), st.integers(50, 120))
def test_segment_invariants(text, limit):
    segs = segment(text, limit)
    assert "".join(segs) == text
    assert all(0 < len(x) <= limit for x in segs)


def test_group_by_person(caplog):
    docs = [doc("a", "曾国藩", 1), doc("b", "毛泽东", 2), doc("c", "曾国藩", 3)]
    groups = group_by_person(docs)
    assert {k: len(v) for k, v in groups.items()} == {"曾国藩": 2, "毛泽东": 1}
    assert group_by_person([]) == {}
    with caplog.at_level(logging.WARNING):
        groups = group_by_person(docs + [doc("d", "", 4)])
    assert len(groups[UNASSIGNED]) == 1 and "no person name" in caplog.text


def test_manifest_and_failures(tmp_path):
    (tmp_path / "a.txt").write_text("曾国藩，湘乡人。" * 3, encoding="utf-8")
    (tmp_path / "bad.txt").write_bytes(b"\xff\xfe\xfa")
    m = tmp_path / "m.yaml"
    m.write_text(yaml.safe_dump([
        {"path": "a.txt", "person_name": "曾国藩", "source_kind": "book"},
        {"path": "bad.txt", "person_name": "左宗棠"},
        {"path": "missing.txt", "person_name": "谭嗣同"},
    ], allow_unicode=True), encoding="utf-8")
    res = load_manifest(m)
    assert len(res.docs) == 1 and len(res.failures) == 2
    m.write_text("- {person_name: x}")
    with pytest.raises(CorpusConfigError):
        load_manifest(m)


def test_directory_convention(tmp_path):
    (tmp_path / "曾国藩" / "news").mkdir(parents=True)
    (tmp_path / "曾国藩" / "news" / "1.txt").write_text("湘军。", encoding="utf-8")
    res = load_directory(tmp_path)
    assert res.docs[0].person_name == "曾国藩" and res.docs[0].source_kind == "news"


def test_pipeline_and_corpus_roundtrip(tmp_path):
    text = "曾国藩，字伯涵。" * 20
    docs = [doc(" ★" + text, i=1), doc(text, i=2), doc("左宗棠，字季高。", "左宗棠", 3), doc("  ", "x", 4)]
    groups, summary = run_pipeline(docs, max_segment_chars=60)
    assert summary.line() == "4 in, 2 kept"
    assert summary.duplicates_removed == 1 and summary.short_removed == 1
    assert all(len(s) <= 60 for d in groups["曾国藩"] for s in d.segments)
    write_corpus(groups, tmp_path)
    rows = [json.loads(x) for x in (tmp_path / "曾国藩.jsonl").read_text(encoding="utf-8").splitlines()]
    assert rows[0]["segment_index"] == 0 and set(rows[0]) == {
        "doc_id", "person_name", "source_kind", "segment_index", "text"}
    assert read_corpus(tmp_path)["曾国藩"] == text
