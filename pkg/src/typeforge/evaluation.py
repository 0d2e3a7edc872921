"""Outcome labeling over buggy/fixed method pairs and the derived metrics.

Metrics are computed in exact rational arithmetic; a zero denominator yields
an explicit undefined marker, never a silent zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path


REPORT_SCHEMA_VERSION = 1


class OutcomeLabel(Enum):
    TP_BUG = "TP_bug"
    FP_BUG = "FP_bug"
    FN_BUG = "FN_bug"
    FP_NONBUG = "FP_nonbug"
    TN_NONBUG = "TN_nonbug"


BUGGY_LABELS = (OutcomeLabel.TP_BUG, OutcomeLabel.FP_BUG, OutcomeLabel.FN_BUG)
NONBUGGY_LABELS = (OutcomeLabel.FP_NONBUG, OutcomeLabel.TN_NONBUG)


@dataclass(frozen=True)
class FocalPair:
    id: str
    project: str
    buggy_path: str
    buggy_function: str
    fixed_path: str
    fixed_function: str

    @classmethod
    def from_payload(cls, payload: dict) -> "FocalPair":
        return cls(
            id=payload["id"],
            project=payload["project"],
            buggy_path=payload["buggy"]["path"],
            buggy_function=payload["buggy"]["function"],
            fixed_path=payload["fixed"]["path"],
            fixed_function=payload["fixed"]["function"],
        )


def load_manifest(path: Path | str) -> list[FocalPair]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = payload["pairs"] if isinstance(payload, dict) else payload
    return [FocalPair.from_payload(entry) for entry in entries]


def label_buggy_pair(reported_on_buggy: bool, reported_on_fixed: bool) -> OutcomeLabel:
    """Reported only on the buggy version is the win; on both it is noise;
    missing the buggy version is a miss regardless of the fixed side."""
    if reported_on_buggy and not reported_on_fixed:
        return OutcomeLabel.TP_BUG
    if reported_on_buggy and reported_on_fixed:
        return OutcomeLabel.FP_BUG
    return OutcomeLabel.FN_BUG


def label_nonbuggy(reported: bool) -> OutcomeLabel:
    return OutcomeLabel.FP_NONBUG if reported else OutcomeLabel.TN_NONBUG


@dataclass
class MetricsReport:
    counts: dict[OutcomeLabel, int]
    precision: Fraction | None
    recall: Fraction | None
    f1: Fraction | None
    accuracy: Fraction | None

    def metric_payload(self, value: Fraction | None) -> dict:
        if value is None:
            return {"defined": False, "value": None, "fraction": None}
        return {
            "defined": True,
            "value": float(value),
            "fraction": f"{value.numerator}/{value.denominator}",
        }

    def to_payload(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "counts": {label.value: self.counts.get(label, 0) for label in OutcomeLabel},
            "precision": self.metric_payload(self.precision),
            "recall": self.metric_payload(self.recall),
            "f1": self.metric_payload(self.f1),
            "accuracy": self.metric_payload(self.accuracy),
        }


def compute_metrics(counts: dict[OutcomeLabel, int]) -> MetricsReport:
    for label, count in counts.items():
        if count < 0:
            raise ValueError(f"negative count for {label}")
    tp = counts.get(OutcomeLabel.TP_BUG, 0)
    fp_bug = counts.get(OutcomeLabel.FP_BUG, 0)
    fn = counts.get(OutcomeLabel.FN_BUG, 0)
    fp_nonbug = counts.get(OutcomeLabel.FP_NONBUG, 0)
    tn = counts.get(OutcomeLabel.TN_NONBUG, 0)

    def ratio(num: int, den: int) -> Fraction | None:
        return Fraction(num, den) if den else None

    precision = ratio(tp, tp + fp_bug + fp_nonbug)
    recall = ratio(tp, tp + fn)
    accuracy = ratio(tp + tn, tp + fp_bug + fp_nonbug + tn + fn)
    f1 = None
    if precision is not None and recall is not None and (precision + recall) != 0:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricsReport(
        counts=dict(counts), precision=precision, recall=recall, f1=f1, accuracy=accuracy
    )


@dataclass
class PairRecord:
    pair_id: str
    project: str
    labels: list[OutcomeLabel] = field(default_factory=list)
    reported_on_buggy: bool | None = None
    reported_on_fixed_replay: bool | None = None
    reported_on_fixed_fresh: bool | None = None
    infra: bool = False
    skipped: bool = False
    notes: str = ""

    def to_payload(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "project": self.project,
            "labels": [label.value for label in self.labels],
            "reported_on_buggy": self.reported_on_buggy,
            "reported_on_fixed_replay": self.reported_on_fixed_replay,
            "reported_on_fixed_fresh": self.reported_on_fixed_fresh,
            "infra": self.infra,
            "skipped": self.skipped,
            "notes": self.notes,
        }


def _fmt(value: Fraction | None) -> str:
    return "undefined" if value is None else f"{float(value):.3f}"


def emit_report(
    metrics: MetricsReport,
    records: list[PairRecord],
    out_dir: Path,
    benchmark: str = "benchmark",
    generated_at: str = "",
) -> tuple[Path, Path]:
    """Write the machine-readable report and a human summary table."""
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "generated_at": generated_at,
        "benchmark": benchmark,
        "metrics": metrics.to_payload(),
        "pairs": [record.to_payload() for record in records],
    }
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    lines = [
        f"# Evaluation report: {benchmark}",
        "",
        "| Benchmark | P | R | F1 | Acc |",
        "|---|---|---|---|---|",
        f"| {benchmark} | {_fmt(metrics.precision)} | {_fmt(metrics.recall)} "
        f"| {_fmt(metrics.f1)} | {_fmt(metrics.accuracy)} |",
        "",
        "| Label | Count |",
        "|---|---|",
    ]
    for label in OutcomeLabel:
        lines.append(f"| {label.value} | {metrics.counts.get(label, 0)} |")
    lines.extend(["", "## Pairs", ""])
    for record in records:
        status = "skipped" if record.skipped else ", ".join(l.value for l in record.labels)
        lines.append(f"- `{record.pair_id}` ({record.project}): {status}")
    md_path = out_dir / "report.md"
    md_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return json_path, md_path
