"""Alpaca-format instruction samples and stratified subset selection."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .prompts import PromptTemplate, render_prompt
from .schema import PersonRecord, SchemaDefinition, ValidationIssue, check_record, serialize_record

ALPACA_KEYS = ("instruction", "input", "output")


class DatasetError(ValueError):
    pass


class AlpacaFormatError(DatasetError):
    pass


@dataclass(frozen=True)
class SampleMeta:
    person_name: str = ""
    strata_labels: tuple[str, ...] = ()
    record_id: str = ""


@dataclass(frozen=True)
class InstructionSample:
    instruction: str
    input: str = ""
    output: str = ""
    meta: SampleMeta = field(default_factory=SampleMeta, compare=False)

    def alpaca(self) -> dict[str, str]:
        return {"instruction": self.instruction, "input": self.input, "output": self.output}


@dataclass(frozen=True)
class GoldPair:
    """One annotated text: the character text plus its gold record (raw or validated)."""

    text: str
    gold: PersonRecord | dict | str
    person_name: str = ""
    tags: tuple[str, ...] = ()
    record_id: str = ""


@dataclass
class PairError:
    index: int
    record_id: str
    issues: list[ValidationIssue]

    def __str__(self) -> str:
        msgs = "; ".join(f"{i.field_key}: {i.message}" for i in self.issues if i.is_error)
        return f"pair {self.index} ({self.record_id or 'no id'}): {msgs}"


@dataclass
class BuildResult:
    samples: list[InstructionSample]
    errors: list[PairError]


def build_samples(pairs: Iterable[GoldPair | tuple], template: PromptTemplate,
                  schema: SchemaDefinition | None = None, split_input: bool = False) -> BuildResult:
    """One sample per pair whose gold validates; failing pairs are skipped and reported.

    The character text goes inside the rendered instruction and ``input`` stays
    empty, unless ``split_input`` moves the text into ``input``.
    """
    samples, errors = [], []
    for i, pair in enumerate(pairs):
        if not isinstance(pair, GoldPair):
            pair = GoldPair(*pair)
        if isinstance(pair.gold, PersonRecord):
            gold, issues = pair.gold, []
        else:
            gold, issues = check_record(pair.gold, schema, strict=True)
        if gold is None:
            errors.append(PairError(i, pair.record_id, issues))
            continue
        if split_input:
            instruction, inp = render_prompt(template, ""), pair.text
        else:
            instruction, inp = render_prompt(template, pair.text), ""
        meta = SampleMeta(pair.person_name or gold.name, tuple(pair.tags), pair.record_id)
        samples.append(InstructionSample(instruction, inp, serialize_record(gold, schema), meta))
    return BuildResult(samples, errors)


def quota_label(sample: InstructionSample) -> str:
    labels = [label for label in sample.meta.strata_labels if label]
    if not labels:
        raise DatasetError(
            f"sample for {sample.meta.person_name or sample.meta.record_id or '?'} has no strata labels")
    return min(labels)


def largest_remainder(counts: dict[str, int], n: int) -> dict[str, int]:
    """Integer quotas proportional to ``counts`` summing to ``n``.

    Remainder seats go to the largest fractional parts; ties by label order.
    """
    total = sum(counts.values())
    if total == 0:
        return {k: 0 for k in counts}
    exact = {k: n * c / total for k, c in counts.items()}
    quotas = {k: int(v) for k, v in exact.items()}
    left = n - sum(quotas.values())
    order = sorted(counts, key=lambda k: (-(exact[k] - quotas[k]), k))
    for k in order[:left]:
        quotas[k] += 1
    return quotas


def stratified_sample(samples: Sequence[InstructionSample], n: int, seed: int) -> list[InstructionSample]:
    """Draw ``n`` samples with per-stratum quotas proportional to stratum size.

    A multi-label sample counts toward its lexicographically first label.
    The result keeps the input order.
    """
    if n > len(samples):
        raise DatasetError(f"requested {n} samples but only {len(samples)} available")
    if n < 0:
        raise DatasetError("n must be non-negative")
    strata: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        strata.setdefault(quota_label(s), []).append(i)
    quotas = largest_remainder({k: len(v) for k, v in strata.items()}, n)
    rng = random.Random(seed)
    chosen: list[int] = []
    for label in sorted(strata):
        chosen.extend(rng.sample(strata[label], quotas[label]))
    return [samples[i] for i in sorted(chosen)]


def export_alpaca(samples: Sequence[InstructionSample], path: str | Path) -> Path:
    """Write the Alpaca JSON array plus a ``.meta.jsonl`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([s.alpaca() for s in samples], ensure_ascii=False, indent=2),
                    encoding="utf-8")
    meta_path = Path(f"{path}.meta.jsonl")
    with meta_path.open("w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            row = {"record_id": s.meta.record_id, "person_name": s.meta.person_name,
                   "strata_labels": list(s.meta.strata_labels)}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


def import_alpaca(path: str | Path) -> list[InstructionSample]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise AlpacaFormatError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, list):
        raise AlpacaFormatError(f"{path}: top-level value must be an array")
    metas: list[SampleMeta] = []
    meta_path = Path(f"{path}.meta.jsonl")
    if meta_path.exists():
        for line in meta_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                row = json.loads(line)
                metas.append(SampleMeta(row.get("person_name", ""), tuple(row.get("strata_labels", [])),
                                        row.get("record_id", "")))
    samples = []
    for i, obj in enumerate(data):
        if not isinstance(obj, dict) or set(obj) != set(ALPACA_KEYS):
            keys = sorted(obj) if isinstance(obj, dict) else type(obj).__name__
            raise AlpacaFormatError(f"{path}: entry {i} must have exactly keys {list(ALPACA_KEYS)}, got {keys}")
        if not all(isinstance(obj[k], str) for k in ALPACA_KEYS):
            raise AlpacaFormatError(f"{path}: entry {i} has non-string values")
        meta = metas[i] if i < len(metas) else SampleMeta()
        samples.append(InstructionSample(obj["instruction"], obj["input"], obj["output"], meta))
    return samples


def audit_outputs(samples: Iterable[InstructionSample], schema: SchemaDefinition | None = None) -> list[str]:
    """Dataset hygiene: every output must re-validate with zero errors."""
    problems = []
    for i, s in enumerate(samples):
        record, issues = check_record(s.output, schema, strict=True)
        if record is None:
            problems.append(f"sample {i}: " + "; ".join(x.message for x in issues if x.is_error))
    return problems
