"""Weight-scheme sensitivity: variance of a scheme's run scores across checkpoints."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from .evaluation import EvaluationReport, WeightScheme

MODES = ("population", "sample")


class SensitivityError(ValueError):
    pass


def variance(xs: Sequence[float], mode: str = "population") -> float:
    """Population (divide by n) or sample (divide by n-1) variance."""
    if mode not in MODES:
        raise SensitivityError(f"unknown variance mode {mode!r}")
    n = len(xs)
    need = 2 if mode == "sample" else 1
    if n < need:
        raise SensitivityError(f"{mode} variance needs at least {need} points, got {n}")
    mean = math.fsum(xs) / n
    ss = math.fsum((x - mean) ** 2 for x in xs)
    return ss / (n if mode == "population" else n - 1)


@dataclass
class SensitivityInput:
    checkpoints: list[str]
    schemes: list[str]
    scores: list[list[float]]  # [scheme][checkpoint]
    printed_variance: list[float | None] = field(default_factory=list)

    def __post_init__(self):
        if not self.checkpoints:
            raise SensitivityError("no checkpoints")
        if len(self.scores) != len(self.schemes):
            raise SensitivityError(f"{len(self.scores)} score rows for {len(self.schemes)} schemes")
        for name, row in zip(self.schemes, self.scores):
            if len(row) != len(self.checkpoints):
                raise SensitivityError(
                    f"scheme {name!r} has {len(row)} scores for {len(self.checkpoints)} checkpoints")


@dataclass
class SensitivityReport:
    per_scheme_variance: list[tuple[str, float]]
    selected_scheme: str
    variance_mode: str
    other_mode_variance: list[tuple[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        other = "sample" if self.variance_mode == "population" else "population"
        return {
            "variance_mode": self.variance_mode,
            "selected_scheme": self.selected_scheme,
            "per_scheme_variance": [{"scheme_name": n, "variance": v} for n, v in self.per_scheme_variance],
            f"{other}_variance": [{"scheme_name": n, "variance": v} for n, v in self.other_mode_variance],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n"

    def to_table(self, data: SensitivityInput | None = None) -> str:
        head = ["scheme"] + (list(data.checkpoints) if data else []) + [f"var({self.variance_mode})"]
        rows = []
        for i, (name, v) in enumerate(self.per_scheme_variance):
            cells = [name] + ([f"{x:.4f}" for x in data.scores[i]] if data else []) + [f"{v:.4f}"]
            if name == self.selected_scheme:
                cells[0] += " *"
            rows.append(cells)
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(r, widths)))
                 for r in [head] + rows]
        lines.append(f"selected: {self.selected_scheme}")
        return "\n".join(lines) + "\n"


def scheme_sensitivity(data: SensitivityInput, mode: str = "population") -> SensitivityReport:
    """Variance per scheme; the scheme with the largest variance is selected (first on ties)."""
    if len(data.checkpoints) < 2:
        raise SensitivityError("need at least 2 checkpoints to compare schemes")
    other = "sample" if mode == "population" else "population"
    per = [(name, variance(row, mode)) for name, row in zip(data.schemes, data.scores)]
    alt = [(name, variance(row, other)) for name, row in zip(data.schemes, data.scores)]
    best = per[0]
    for item in per[1:]:
        if item[1] > best[1]:
            best = item
    return SensitivityReport(per, best[0], mode, alt)


def load_score_matrix(path: str | Path | None = None) -> SensitivityInput:
    """Read a scheme-rows x checkpoint-columns CSV; an optional trailing
    ``Variance`` column is kept as printed reference values.
    With no path the packaged reference matrix is used.
    """
    if path is None:
        text = resources.files("personkg.data").joinpath("checkpoint_scores.csv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    rows = [r for r in csv.reader(text.splitlines()) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise SensitivityError(f"{path}: need a header and at least one scheme row")
    header = [h.strip() for h in rows[0]]
    has_var = header[-1].lower() == "variance"
    checkpoints = header[1:-1] if has_var else header[1:]
    schemes, scores, printed = [], [], []
    for r in rows[1:]:
        cells = [c.strip() for c in r]
        if len(cells) != len(header):
            raise SensitivityError(f"{path}: row {cells[0]!r} has {len(cells)} cells, header has {len(header)}")
        try:
            values = [float(c) for c in cells[1:1 + len(checkpoints)]]
            printed.append(float(cells[-1]) if has_var and cells[-1] else None)
        except ValueError as exc:
            raise SensitivityError(f"{path}: row {cells[0]!r}: {exc}") from exc
        schemes.append(cells[0])
        scores.append(values)
    return SensitivityInput(checkpoints, schemes, scores, printed if has_var else [])


def recompute_from_field_scores(reports: Sequence[tuple[str, EvaluationReport]],
                                schemes: Sequence[WeightScheme]) -> SensitivityInput:
    """Re-aggregate each checkpoint's per-field means under every scheme."""
    if not reports:
        raise SensitivityError("no checkpoint reports")
    ids = [sorted(r.record_id for r in rep.per_record) for _, rep in reports]
    for (label, _), rid in zip(reports, ids):
        if rid != ids[0]:
            raise SensitivityError(f"checkpoint {label!r} was scored on a different test set")
    means = [rep.field_means() for _, rep in reports]
    scores = [[math.fsum(w * m for w, m in zip(s.weights, fm)) for fm in means] for s in schemes]
    return SensitivityInput([label for label, _ in reports], [s.name for s in schemes], scores)
