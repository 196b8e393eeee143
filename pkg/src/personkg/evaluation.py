"""Field-level scoring (exact match / embedding similarity) and weighted aggregation."""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .schema import (
    EvalMethod,
    PersonRecord,
    SchemaDefinition,
    builtin_schema,
    canonicalize_field_text,
)

log = logging.getLogger(__name__)

N_FIELDS = 14
WEIGHT_SUM_TOL = 1e-3
DEFAULT_SCHEME = "Average Distribution"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class WeightScheme:
    name: str
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.weights) != N_FIELDS:
            raise EvaluationError(f"scheme {self.name!r} has {len(self.weights)} weights, expected {N_FIELDS}")
        for w in self.weights:
            if not 0.0 <= w <= 1.0:
                raise EvaluationError(f"scheme {self.name!r}: weight {w} outside [0, 1]")
        total = sum(self.weights)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise EvaluationError(f"scheme {self.name!r}: weights sum to {total:.5f}, not 1")

    @property
    def slug(self) -> str:
        return slugify(self.name)


def slugify(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "", name.lower())


def load_weight_schemes(path: str | Path | None = None) -> list[WeightScheme]:
    """Read schemes from a CSV laid out as component rows x scheme columns.

    Columns: ``No.``, ``Component``, then one column per scheme. With no path
    the packaged table of ten schemes is used.
    """
    if path is None:
        text = resources.files("personkg.data").joinpath("weight_schemes.csv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(line for line in text.splitlines() if line.strip()))
    if not rows:
        raise EvaluationError(f"{path}: empty weight-scheme file")
    header, body = rows[0], rows[1:]
    if len(header) < 3 or [h.strip() for h in header[:2]] != ["No.", "Component"]:
        raise EvaluationError(f"{path}: header must start with 'No.,Component', got {header[:2]}")
    if len(body) != N_FIELDS:
        raise EvaluationError(f"{path}: expected {N_FIELDS} component rows, got {len(body)}")
    schemes = []
    for col, name in enumerate(header[2:], start=2):
        try:
            weights = tuple(float(row[col]) for row in body)
        except (IndexError, ValueError) as exc:
            raise EvaluationError(f"{path}: bad value in column {name!r}: {exc}") from exc
        schemes.append(WeightScheme(name.strip(), weights))
    return schemes


def get_scheme(name: str, schemes: Iterable[WeightScheme] | None = None) -> WeightScheme:
    """Find a scheme by name, case/punctuation-insensitively ("random1" == "Random 1")."""
    schemes = list(schemes) if schemes is not None else load_weight_schemes()
    wanted = slugify(name)
    for s in schemes:
        if s.slug == wanted:
            return s
    raise KeyError(f"unknown weight scheme {name!r}; have {[s.name for s in schemes]}")


@dataclass(frozen=True)
class FieldScore:
    field_key: str
    method: EvalMethod
    score: float


Embedder = Callable[[str], "object"]


def exact_match_score(pred: str, gold: str) -> int:
    return 100 if pred.strip() == gold.strip() else 0


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise EvaluationError(f"embedding dims differ: {len(a)} vs {len(b)}")
    dot = math.fsum(x * y for x, y in zip(a, b))
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    if na == 0 or nb == 0:
        return 0.0
    return dot / (na * nb)


def similarity_score(pred_text: str, gold_text: str, embedder: Embedder) -> float:
    """100 x clamped cosine of the two embeddings.

    Both empty scores 100 (agreement on absence); exactly one empty scores 0.
    """
    p, g = pred_text.strip(), gold_text.strip()
    if not p and not g:
        return 100.0
    if not p or not g:
        return 0.0
    if p == g:
        return 100.0
    cos = cosine(embedder(p).values, embedder(g).values)
    return min(100.0, max(0.0, cos) * 100.0)


def score_record(pred: PersonRecord | None, gold: PersonRecord, schema: SchemaDefinition | None = None,
                 embedder: Embedder | None = None) -> list[FieldScore]:
    """Score all 14 fields; a missing/unparseable prediction scores 0 everywhere."""
    schema = schema or builtin_schema()
    if pred is None:
        return [FieldScore(f.key, f.eval_method, 0.0) for f in schema.fields]
    scores = []
    for spec in schema.fields:
        p = canonicalize_field_text(pred, spec.key, schema)
        g = canonicalize_field_text(gold, spec.key, schema)
        if spec.eval_method is EvalMethod.EXACT_MATCH:
            s = float(exact_match_score(p, g))
        else:
            if embedder is None:
                raise EvaluationError("a vector-similarity field needs an embedder")
            s = similarity_score(p, g, embedder)
        scores.append(FieldScore(spec.key, spec.eval_method, s))
    return scores


def aggregate(field_scores: Sequence[FieldScore | float], scheme: WeightScheme) -> float:
    """Weighted sum of the 14 field scores in schema order."""
    if len(field_scores) != N_FIELDS or len(scheme.weights) != N_FIELDS:
        raise EvaluationError(f"need {N_FIELDS} scores and weights, got {len(field_scores)}/{len(scheme.weights)}")
    values = [fs.score if isinstance(fs, FieldScore) else float(fs) for fs in field_scores]
    return math.fsum(w * s for w, s in zip(scheme.weights, values))


@dataclass
class RecordResult:
    record_id: str
    field_scores: list[FieldScore]
    weighted_total: float
    status: str = "ok"  # ok | missing | scoring_error
    error: str | None = None


@dataclass
class EvaluationReport:
    per_record: list[RecordResult]
    run_mean: float
    scheme_name: str
    field_keys: list[str] = field(default_factory=list)

    def field_means(self) -> list[float]:
        n = len(self.per_record)
        return [math.fsum(r.field_scores[i].score for r in self.per_record) / n
                for i in range(len(self.field_keys))]

    def to_dict(self) -> dict:
        return {
            "scheme_name": self.scheme_name,
            "run_mean": self.run_mean,
            "field_keys": self.field_keys,
            "field_means": self.field_means(),
            "records": [
                {
                    "record_id": r.record_id,
                    "status": r.status,
                    "error": r.error,
                    "weighted_total": r.weighted_total,
                    "field_scores": {fs.field_key: fs.score for fs in r.field_scores},
                }
                for r in self.per_record
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping, schema: SchemaDefinition | None = None) -> "EvaluationReport":
        schema = schema or builtin_schema()
        records = []
        for r in data["records"]:
            scores = [FieldScore(f.key, f.eval_method, float(r["field_scores"][f.key])) for f in schema.fields]
            records.append(RecordResult(r["record_id"], scores, float(r["weighted_total"]),
                                        r.get("status", "ok"), r.get("error")))
        return cls(records, float(data["run_mean"]), data["scheme_name"], list(data.get("field_keys", schema.keys)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=False) + "\n"

    def to_table(self) -> str:
        """Aligned plain-text table: one row per record plus per-field means."""
        abbrev = self.field_keys
        head = ["record_id"] + abbrev + ["total"]
        rows = [[r.record_id] + [f"{fs.score:.2f}" for fs in r.field_scores] + [f"{r.weighted_total:.4f}"]
                for r in self.per_record]
        rows.append(["MEAN"] + [f"{m:.2f}" for m in self.field_means()] + [f"{self.run_mean:.4f}"])
        widths = [max(len(str(row[i])) for row in [head] + rows) for i in range(len(head))]
        lines = [f"scheme: {self.scheme_name}"]
        for row in [head] + rows:
            lines.append("  ".join(str(c).rjust(w) for c, w in zip(row, widths)))
        return "\n".join(lines) + "\n"


def _as_pairs(items, what: str) -> list[tuple[str, PersonRecord | None]]:
    pairs = list(items.items()) if isinstance(items, Mapping) else list(items)
    ids = [rid for rid, _ in pairs]
    dupes = sorted({rid for rid in ids if ids.count(rid) > 1})
    if dupes:
        raise EvaluationError(f"duplicate record_ids in {what}: {dupes}")
    return pairs


def evaluate_run(preds, golds, schema: SchemaDefinition | None = None, scheme: WeightScheme | None = None,
                 embedder: Embedder | None = None) -> EvaluationReport:
    """Score every gold record against its prediction (matched by record_id).

    ``preds`` and ``golds`` are mappings or sequences of (record_id, record).
    A gold without a prediction, or with ``None``, scores 0 on all fields.
    A prediction whose id has no gold is an error.
    """
    schema = schema or builtin_schema()
    scheme = scheme or get_scheme(DEFAULT_SCHEME)
    gold_pairs = _as_pairs(golds, "golds")
    pred_map = dict(_as_pairs(preds, "predictions"))
    if not gold_pairs:
        raise EvaluationError("no records")
    gold_ids = {rid for rid, _ in gold_pairs}
    unmatched = sorted(set(pred_map) - gold_ids)
    if unmatched:
        raise EvaluationError(f"predictions without gold records: {unmatched}")

    results = []
    for rid, gold in gold_pairs:
        pred = pred_map.get(rid)
        status, error = ("ok", None) if pred is not None else ("missing", None)
        try:
            scores = score_record(pred, gold, schema, embedder)
        except Exception as exc:  # embedder/provider failure: record-level, run continues
            log.error("scoring %s failed: %s", rid, exc)
            scores = score_record(None, gold, schema)
            status, error = "scoring_error", str(exc)
        results.append(RecordResult(rid, scores, aggregate(scores, scheme), status, error))
    run_mean = math.fsum(r.weighted_total for r in results) / len(results)
    return EvaluationReport(results, run_mean, scheme.name, schema.keys)

