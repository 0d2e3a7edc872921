"""Outcome labels and metric formulas, checked against a per-sample oracle."""

from __future__ import annotations

import json
import random
from fractions import Fraction

import pytest

from typeforge.evaluation import (
    MetricsReport,
    OutcomeLabel,
    PairRecord,
    compute_metrics,
    emit_report,
    label_buggy_pair,
    label_nonbuggy,
    load_manifest,
)


def oracle_metrics(counts: dict[OutcomeLabel, int]) -> dict[str, float | None]:
    """Brute force: materialize one (truth, prediction) sample per counted
    outcome and recompute every metric by tallying the samples."""
    samples: list[tuple[int, int]] = []
    samples += [(1, 1)] * counts.get(OutcomeLabel.TP_BUG, 0)
    samples += [(0, 1)] * counts.get(OutcomeLabel.FP_BUG, 0)
    samples += [(0, 1)] * counts.get(OutcomeLabel.FP_NONBUG, 0)
    samples += [(1, 0)] * counts.get(OutcomeLabel.FN_BUG, 0)
    samples += [(0, 0)] * counts.get(OutcomeLabel.TN_NONBUG, 0)
    tp = sum(1 for truth, pred in samples if truth == 1 and pred == 1)
    fp = sum(1 for truth, pred in samples if truth == 0 and pred == 1)
    fn = sum(1 for truth, pred in samples if truth == 1 and pred == 0)
    tn = sum(1 for truth, pred in samples if truth == 0 and pred == 0)
    precision = tp / (tp + fp) if (tp + fp) else None
    recall = tp / (tp + fn) if (tp + fn) else None
    f1 = None
    if precision is not None and recall is not None and (precision + recall) > 0:
        f1 = 2 * precision * recall / (precision + recall)
    accuracy = (tp + tn) / len(samples) if samples else None
    return {"precision": precision, "recall": recall, "f1": f1, "accuracy": accuracy}


class TestLabelBuggyPair:
    def test_reported_only_on_buggy_is_tp(self):
        assert label_buggy_pair(True, False) is OutcomeLabel.TP_BUG

    def test_reported_on_both_is_fp(self):
        assert label_buggy_pair(True, True) is OutcomeLabel.FP_BUG

    def test_missed_buggy_is_fn(self):
        assert label_buggy_pair(False, False) is OutcomeLabel.FN_BUG

    def test_buggy_side_miss_dominates(self):
        assert label_buggy_pair(False, True) is OutcomeLabel.FN_BUG


class TestLabelNonbuggy:
    def test_reported_is_fp(self):
        assert label_nonbuggy(True) is OutcomeLabel.FP_NONBUG

    def test_silent_is_tn(self):
        assert label_nonbuggy(False) is OutcomeLabel.TN_NONBUG

    def test_idempotent(self):
        assert label_nonbuggy(True) is label_nonbuggy(True)


class TestComputeMetrics:
    def test_headline_counts_are_exact_rationals(self):
        # TP=34 with 13 false positives over 69 bugs.
        counts = {
            OutcomeLabel.TP_BUG: 34,
            OutcomeLabel.FP_BUG: 9,
            OutcomeLabel.FP_NONBUG: 4,
            OutcomeLabel.FN_BUG: 35,
            OutcomeLabel.TN_NONBUG: 65,
        }
        report = compute_metrics(counts)
        assert report.precision == Fraction(34, 47)
        assert report.recall == Fraction(34, 69)

    def test_all_zero_counts_are_undefined(self):
        report = compute_metrics({})
        assert report.precision is None
        assert report.recall is None
        assert report.f1 is None
        assert report.accuracy is None

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics({OutcomeLabel.TP_BUG: -1})

    def test_oracle_equivalence_on_randomized_counts(self):
        rng = random.Random(424242)
        for _ in range(300):
            counts = {label: rng.randint(0, 40) for label in OutcomeLabel}
            report = compute_metrics(counts)
            expected = oracle_metrics(counts)
            for name in ("precision", "recall", "f1", "accuracy"):
                ours = getattr(report, name)
                if expected[name] is None:
                    assert ours is None, f"{name} should be undefined for {counts}"
                else:
                    assert ours is not None
                    assert abs(float(ours) - expected[name]) <= 1e-12

    def test_metric_bounds(self):
        rng = random.Random(7)
        for _ in range(100):
            counts = {label: rng.randint(0, 25) for label in OutcomeLabel}
            report = compute_metrics(counts)
            for value in (report.precision, report.recall, report.f1, report.accuracy):
                if value is not None:
                    assert 0 <= value <= 1
            if report.f1 is not None:
                assert report.f1 <= max(report.precision, report.recall)


class TestEmitReport:
    def sample_report(self) -> MetricsReport:
        return compute_metrics(
            {
                OutcomeLabel.TP_BUG: 1,
                OutcomeLabel.FP_BUG: 1,
                OutcomeLabel.FN_BUG: 1,
                OutcomeLabel.TN_NONBUG: 3,
            }
        )

    def records(self) -> list[PairRecord]:
        return [
            PairRecord("pair-1", "proj", [OutcomeLabel.TP_BUG, OutcomeLabel.TN_NONBUG]),
            PairRecord("pair-2", "proj", [OutcomeLabel.FP_BUG, OutcomeLabel.TN_NONBUG]),
            PairRecord("pair-3", "proj", [OutcomeLabel.FN_BUG, OutcomeLabel.TN_NONBUG]),
        ]

    def test_report_files_written(self, tmp_path):
        json_path, md_path = emit_report(
            self.sample_report(), self.records(), tmp_path, benchmark="fixture"
        )
        payload = json.loads(json_path.read_text())
        assert payload["metrics"]["counts"]["TP_bug"] == 1
        assert len(payload["pairs"]) == 3
        table = md_path.read_text()
        assert "| P | R | F1 | Acc |" in table
        assert "fixture" in table

    def test_json_report_round_trips_metrics(self, tmp_path):
        report = self.sample_report()
        json_path, _ = emit_report(report, self.records(), tmp_path)
        payload = json.loads(json_path.read_text())
        assert payload["metrics"]["precision"]["fraction"] == "1/2"
        assert payload["metrics"]["precision"]["value"] == 0.5
        assert payload["metrics"]["recall"]["fraction"] == "1/2"

    def test_empty_benchmark_has_undefined_metrics(self, tmp_path):
        json_path, md_path = emit_report(compute_metrics({}), [], tmp_path)
        payload = json.loads(json_path.read_text())
        assert payload["metrics"]["precision"]["defined"] is False
        assert "undefined" in md_path.read_text()

    def test_zero_rows_for_empty_manifest(self, tmp_path):
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({"pairs": []}))
        assert load_manifest(manifest) == []
