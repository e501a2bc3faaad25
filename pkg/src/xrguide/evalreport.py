"""Aggregate recorded runs into the two standard report tables.

Table one: per-metric step correctness over a labeled step set, plus
per-guidance-type rows and an overall row. Table two: per-type/component
localization accuracy and mean latency, split by model profile. Percentages
are always computed from counts (never copied in) and printed to one
decimal, rounding half away from zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path
from typing import Optional

from .errors import LabelMismatch

STEP_METRICS = (
    ("textInstruction", "TextInstruction"),
    ("visualType", "VisualType"),
    ("keyComponent", "Key Component"),
    ("imageRelevance", "Image Relevance"),
    ("verification", "Verification"),
)

GUIDANCE_TYPES = (
    ("targetConfigPreview", "Target Config Preview"),
    ("motion", "Motion"),
    ("staticObject", "Static Object"),
    ("action", "Action"),
)


def percent(correct: int, total: int) -> float:
    """Share of correct as a percentage with one decimal, half away from zero."""
    if total == 0:
        return 0.0
    ratio = Decimal(correct) * 100 / Decimal(total)
    return float(ratio.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def round2(value: float) -> float:
    return float(Decimal(str(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class CountRow:
    name: str
    total: int = 0
    correct: int = 0

    @property
    def percentage(self) -> float:
        return percent(self.correct, self.total)

    def to_wire(self) -> dict:
        return {
            "metric": self.name,
            "total": self.total,
            "correct": self.correct,
            "percentage": self.percentage,
        }


@dataclass
class LatencyRow:
    name: str
    profile: str
    latencies: list[float] = field(default_factory=list)
    correct: int = 0

    @property
    def count(self) -> int:
        return len(self.latencies)

    @property
    def mean_latency(self) -> float:
        return round2(sum(self.latencies) / len(self.latencies)) if self.latencies else 0.0

    @property
    def accuracy(self) -> float:
        return percent(self.correct, self.count)

    def to_wire(self) -> dict:
        return {
            "type": self.name,
            "profile": self.profile,
            "count": self.count,
            "accuracy": self.accuracy,
            "meanLatency": self.mean_latency,
        }


def load_labels(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        labels = json.load(fh)
    if "steps" not in labels:
        raise LabelMismatch("labels file has no 'steps' array")
    return labels


def step_table(labels: dict) -> list[CountRow]:
    """The per-metric table: one row per metric, per-type rows, overall row."""
    steps = labels["steps"]
    rows: list[CountRow] = []
    for key, name in STEP_METRICS:
        row = CountRow(name)
        for i, step in enumerate(steps):
            if key not in step:
                raise LabelMismatch(f"step {i} lacks label {key!r}")
            row.total += 1
            row.correct += bool(step[key])
        rows.append(row)
    for key, name in GUIDANCE_TYPES:
        row = CountRow(name)
        for step in steps:
            value = step.get("categories", {}).get(key)
            if value is None:
                continue  # type not present in this step
            row.total += 1
            row.correct += bool(value)
        rows.append(row)
    overall = CountRow("Total")
    for i, step in enumerate(steps):
        if "overall" not in step:
            raise LabelMismatch(f"step {i} lacks label 'overall'")
        overall.total += 1
        overall.correct += bool(step["overall"])
    rows.append(overall)
    return rows


def localization_table(labels: dict) -> list[LatencyRow]:
    """Per type and component, split by profile, with per-profile totals."""
    calls = labels.get("localization", [])
    by_key: dict[tuple[str, str], LatencyRow] = {}
    totals: dict[str, LatencyRow] = {}
    order: list[tuple[str, str]] = []
    for i, call in enumerate(calls):
        for required in ("type", "component", "profile", "latency", "correct"):
            if required not in call:
                raise LabelMismatch(f"localization call {i} lacks {required!r}")
        profile = call["profile"]
        for name in (call["type"], f"{call['type']}/{call['component']}"):
            key = (name, profile)
            if key not in by_key:
                by_key[key] = LatencyRow(name, profile)
                order.append(key)
            by_key[key].latencies.append(float(call["latency"]))
            by_key[key].correct += bool(call["correct"])
        if profile not in totals:
            totals[profile] = LatencyRow("Total", profile)
        totals[profile].latencies.append(float(call["latency"]))
        totals[profile].correct += bool(call["correct"])
    rows = [by_key[k] for k in order]
    rows.extend(totals[p] for p in sorted(totals))
    return rows


@dataclass
class EvalReport:
    steps: list[CountRow]
    localization: list[LatencyRow]

    def to_wire(self) -> dict:
        return {
            "stepTable": [r.to_wire() for r in self.steps],
            "localizationTable": [r.to_wire() for r in self.localization],
        }

    def to_text(self) -> str:
        lines = ["Metric                     Total  Correct  Percentage"]
        for row in self.steps:
            lines.append(
                f"{row.name:<26} {row.total:>5}  {row.correct:>7}  {row.percentage:>9.1f}%"
            )
        lines.append("")
        lines.append("Type/Component             Profile  Count  Acc.    Lat.")
        for row in self.localization:
            lines.append(
                f"{row.name:<26} {row.profile:<8} {row.count:>5}  {row.accuracy:>5.1f}%  {row.mean_latency:>5.2f}"
            )
        return "\n".join(lines)

    def step_percentage(self, metric: str) -> float:
        for row in self.steps:
            if row.name == metric:
                return row.percentage
        raise KeyError(metric)

    def total_latency(self, profile: str) -> float:
        for row in self.localization:
            if row.name == "Total" and row.profile == profile:
                return row.mean_latency
        raise KeyError(profile)


def eval_report(labels_path: str | Path, log_paths: Optional[list[str | Path]] = None) -> EvalReport:
    """Build the report from a labels fixture, cross-checking logs when given.

    Logs are optional: when present, every VerificationResult step index in a
    log must have a label row, otherwise LabelMismatch.
    """
    labels = load_labels(labels_path)
    if log_paths:
        from .events import EventKind, read_event_log

        labeled = {(s.get("task", ""), s.get("index")) for s in labels["steps"]}
        indices_by_task: dict[str, set] = {}
        for task, idx in labeled:
            indices_by_task.setdefault(task, set()).add(idx)
        any_indices = set()
        for s in labels["steps"]:
            any_indices.add(s.get("index"))
        for path in log_paths:
            task = Path(path).stem.replace(".events", "")
            for event in read_event_log(path):
                if event.kind is EventKind.VERIFICATION_RESULT:
                    idx = event.payload.get("stepIndex")
                    known = indices_by_task.get(task, any_indices)
                    if idx not in known and idx not in any_indices:
                        raise LabelMismatch(f"{path}: step {idx} has no label row")
    return EvalReport(steps=step_table(labels), localization=localization_table(labels))
