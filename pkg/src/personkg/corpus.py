"""Corpus preparation: cleaning, deduplication, person grouping, segmentation."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import unicodedata
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import yaml

log = logging.getLogger(__name__)

SOURCE_KINDS = ("encyclopedia", "news", "thematic-site", "book")
UNASSIGNED = "<unassigned>"
TERMINATORS = "。！？；.!?"
MIN_SEGMENT_CHARS = 50

# Decorative symbol blocks: arrows, geometric shapes, misc symbols, dingbats, emoji.
_DECORATIVE = re.compile(
    "[\u2190-\u21ff\u25a0-\u25ff\u2600-\u27bf\u2b00-\u2bff\u203b\U0001f300-\U0001faff]"
)
_ZERO_WIDTH = {"\u200b", "\u200c", "\u200d", "\u2060", "\ufeff", "\u00ad"}
_WS = re.compile(r"\s+")


class CorpusConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusDocument:
    doc_id: str
    person_name: str = ""
    source_kind: str = "encyclopedia"
    raw_text: str = ""
    segments: tuple[str, ...] = ()
    tags: tuple[str, ...] = field(default=(), compare=False)


def clean_text(raw: str) -> str:
    """Strip control/zero-width/decorative characters and collapse whitespace.

    Idempotent: clean_text(clean_text(x)) == clean_text(x).
    """
    out = []
    for ch in raw:
        if ch in _ZERO_WIDTH:
            continue
        if ch.isspace():
            out.append(" ")
            continue
        cat = unicodedata.category(ch)
        if cat in ("Cc", "Cf", "Cs", "Co", "Cn"):
            continue
        if _DECORATIVE.match(ch):
            continue
        out.append(ch)
    return _WS.sub(" ", "".join(out)).strip()


def _shingles(text: str, k: int = 5) -> set[str]:
    if len(text) <= k:
        return {text}
    return {text[i:i + k] for i in range(len(text) - k + 1)}


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def dedupe(docs: Iterable[CorpusDocument], near_dup_threshold: float | None = None,
           ngram: int = 5) -> list[CorpusDocument]:
    """Drop exact duplicates (first occurrence kept), optionally near duplicates too.

    Near duplicates are docs whose character n-gram Jaccard similarity with an
    already kept doc reaches ``near_dup_threshold``. Order is stable.
    """
    kept: list[CorpusDocument] = []
    seen: set[str] = set()
    kept_shingles: list[set[str]] = []
    for doc in docs:
        norm = _WS.sub(" ", doc.raw_text).strip()
        digest = hashlib.sha256(norm.encode("utf-8")).hexdigest()
        if digest in seen:
            continue
        if near_dup_threshold is not None:
            sh = _shingles(norm, ngram)
            if any(jaccard(sh, other) >= near_dup_threshold for other in kept_shingles):
                continue
            kept_shingles.append(sh)
        seen.add(digest)
        kept.append(doc)
    return kept


def _sentences(text: str) -> list[str]:
    out, start = [], 0
    for i, ch in enumerate(text):
        if ch in TERMINATORS:
            out.append(text[start:i + 1])
            start = i + 1
    if start < len(text):
        out.append(text[start:])
    return out


def segment(text: str, max_segment_chars: int) -> list[str]:
    """Greedy sentence packing into segments of at most ``max_segment_chars``.

    Sentences end at Chinese or Latin terminators and keep them. A sentence
    longer than the limit is hard-split. Concatenating the segments gives
    back ``text`` exactly.
    """
    if max_segment_chars < MIN_SEGMENT_CHARS:
        raise CorpusConfigError(f"max_segment_chars must be >= {MIN_SEGMENT_CHARS}, got {max_segment_chars}")
    segments: list[str] = []
    current = ""
    for sentence in _sentences(text):
        if len(current) + len(sentence) <= max_segment_chars:
            current += sentence
            continue
        if current:
            segments.append(current)
            current = ""
        while len(sentence) > max_segment_chars:
            segments.append(sentence[:max_segment_chars])
            sentence = sentence[max_segment_chars:]
        current = sentence
    if current:
        segments.append(current)
    return segments


def group_by_person(docs: Iterable[CorpusDocument]) -> "OrderedDict[str, list[CorpusDocument]]":
    groups: OrderedDict[str, list[CorpusDocument]] = OrderedDict()
    for doc in docs:
        name = doc.person_name.strip()
        if not name:
            log.warning("document %s has no person name; routed to %s", doc.doc_id, UNASSIGNED)
            name = UNASSIGNED
        groups.setdefault(name, []).append(doc)
    return groups


# --- ingestion -------------------------------------------------------------


@dataclass
class IngestResult:
    docs: list[CorpusDocument]
    failures: list[tuple[str, str]]  # (path, reason)


def make_doc_id(person_name: str, source_kind: str, rel_path: str) -> str:
    digest = hashlib.sha256(f"{person_name}\x00{source_kind}\x00{rel_path}".encode("utf-8")).hexdigest()
    return digest[:16]


def _read_doc(path: Path, rel: str, person: str, kind: str, tags, failures) -> CorpusDocument | None:
    if kind not in SOURCE_KINDS:
        log.warning("%s: unknown source kind %r", rel, kind)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        log.warning("cannot read %s: %s", rel, exc)
        failures.append((rel, str(exc)))
        return None
    return CorpusDocument(make_doc_id(person, kind, rel), person, kind, text, tags=tuple(tags))


def load_manifest(manifest_path: str | Path) -> IngestResult:
    """Read a YAML/JSON manifest: a list of {path, person_name, source_kind, tags?}.

    Paths are resolved against the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    entries = yaml.safe_load(manifest_path.read_text(encoding="utf-8")) or []
    if isinstance(entries, dict):
        entries = entries.get("documents", [])
    if not isinstance(entries, list):
        raise CorpusConfigError(f"{manifest_path}: manifest must be a list of documents")
    base = manifest_path.parent
    docs, failures = [], []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "path" not in entry:
            raise CorpusConfigError(f"{manifest_path}: entry {i} lacks a 'path'")
        rel = str(entry["path"])
        doc = _read_doc(base / rel, rel, str(entry.get("person_name", "") or ""),
                        str(entry.get("source_kind", "encyclopedia")), entry.get("tags", []) or [], failures)
        if doc is not None:
            docs.append(doc)
    return IngestResult(docs, failures)


def load_directory(root: str | Path) -> IngestResult:
    """Read the person_name/source_kind/*.txt directory convention."""
    root = Path(root)
    docs, failures = [], []
    for path in sorted(root.glob("*/*/*.txt")):
        rel = path.relative_to(root).as_posix()
        person, kind = path.parts[-3], path.parts[-2]
        doc = _read_doc(path, rel, person, kind, (), failures)
        if doc is not None:
            docs.append(doc)
    return IngestResult(docs, failures)


# --- pipeline --------------------------------------------------------------


@dataclass
class CorpusSummary:
    docs_in: int = 0
    kept: int = 0
    duplicates_removed: int = 0
    short_removed: int = 0
    unreadable: int = 0
    persons: int = 0
    segments: int = 0

    def line(self) -> str:
        return f"{self.docs_in} in, {self.kept} kept"


def run_pipeline(docs: list[CorpusDocument], max_segment_chars: int = 300,
                 near_dup_threshold: float | None = None, min_length: int = 0,
                 ) -> tuple["OrderedDict[str, list[CorpusDocument]]", CorpusSummary]:
    """clean -> filter short -> dedupe -> group -> segment."""
    if max_segment_chars < MIN_SEGMENT_CHARS:
        raise CorpusConfigError(f"max_segment_chars must be >= {MIN_SEGMENT_CHARS}, got {max_segment_chars}")
    summary = CorpusSummary(docs_in=len(docs))
    cleaned = [replace(d, raw_text=clean_text(d.raw_text)) for d in docs]
    long_enough = [d for d in cleaned if len(d.raw_text) >= max(min_length, 1)]
    summary.short_removed = len(cleaned) - len(long_enough)
    unique = dedupe(long_enough, near_dup_threshold)
    summary.duplicates_removed = len(long_enough) - len(unique)
    groups = group_by_person(unique)
    for name, members in groups.items():
        groups[name] = [replace(d, segments=tuple(segment(d.raw_text, max_segment_chars))) for d in members]
    summary.kept = len(unique)
    summary.persons = len(groups)
    summary.segments = sum(len(d.segments) for members in groups.values() for d in members)
    return groups, summary


def safe_filename(name: str) -> str:
    return re.sub(r'[\\/:*?"<>|\s]+', "_", name).strip("._") or "unnamed"


def write_corpus(groups, out_dir: str | Path) -> list[Path]:
    """One JSONL file per person: {doc_id, person_name, source_kind, segment_index, text}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, members in groups.items():
        path = out_dir / f"{safe_filename(name)}.jsonl"
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for doc in members:
                for i, text in enumerate(doc.segments):
                    row = {"doc_id": doc.doc_id, "person_name": name, "source_kind": doc.source_kind,
                           "segment_index": i, "text": text}
                    fh.write(json.dumps(row, ensure_ascii=False) + "\n")
        written.append(path)
    return written


def read_corpus(corpus_dir: str | Path) -> "OrderedDict[str, str]":
    """Person name -> full text (segments rejoined per document, documents joined by a space)."""
    texts: OrderedDict[str, list[str]] = OrderedDict()
    for path in sorted(Path(corpus_dir).glob("*.jsonl")):
        docs: OrderedDict[str, list[str]] = OrderedDict()
        person = None
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            person = row["person_name"]
            docs.setdefault(row["doc_id"], []).append(row["text"])
        if person is not None:
            texts.setdefault(person, []).extend("".join(parts) for parts in docs.values())
    return OrderedDict((k, " ".join(v)) for k, v in texts.items())
