"""Metrics and report tables: macro-F1, accuracy, per-class improvement
ranking across leave-one-subject-out folds.

Zero-support classes score F1 = 0 rather than being excluded, so macro-F1
stays comparable across folds that lack some activities. Fold aggregates
use the population standard deviation.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (n_classes, n_classes), rows = truth

    @classmethod
    def from_predictions(cls, truth, preds, n_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        for t, p in zip(np.asarray(truth), np.asarray(preds)):
            counts[int(t), int(p)] += 1
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return f1


def macro_f1(cm: ConfusionMatrix) -> float:
    return float(per_class_f1(cm).mean())


def accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    return float(np.trace(cm.counts) / total) if total else 0.0


@dataclass
class FoldResult:
    fold: str                 # test subject id
    cm: ConfusionMatrix

    @property
    def macro_f1(self) -> float:
        return macro_f1(self.cm)

    @property
    def accuracy(self) -> float:
        return accuracy(self.cm)


@dataclass
class EvalReport:
    """Per-mode, per-fold metrics plus improvement over the baseline mode."""
    class_names: list[str]
    source: str
    target: str
    folds: dict[str, list[FoldResult]] = field(default_factory=dict)  # mode -> folds

    def add_fold(self, mode: str, result: FoldResult) -> None:
        self.folds.setdefault(mode, []).append(result)

    def mode_stats(self, mode: str) -> dict:
        rs = self.folds[mode]
        f1s = np.array([r.macro_f1 for r in rs])
        accs = np.array([r.accuracy for r in rs])
        return {
            "macro_f1_mean": float(f1s.mean()),
            "macro_f1_std": float(f1s.std()),  # population std
            "accuracy_mean": float(accs.mean()),
            "accuracy_std": float(accs.std()),
            "folds": {r.fold: {"macro_f1": r.macro_f1, "accuracy": r.accuracy}
                      for r in rs},
        }

    def per_class_mean_f1(self, mode: str) -> np.ndarray:
        return np.mean([per_class_f1(r.cm) for r in self.folds[mode]], axis=0)


def improvement_table(report: EvalReport, baseline_mode: str = "baseline") -> list[dict]:
    """One row per non-baseline mode, mirroring the standard result table:
    macro F1 mean+-std, improvement over baseline, and the best / 2nd best /
    worst activities by per-class F1 delta (ties broken by class index)."""
    if baseline_mode not in report.folds:
        raise ValueError(f"baseline mode {baseline_mode!r} has no results")
    base_stats = report.mode_stats(baseline_mode)
    base_class = report.per_class_mean_f1(baseline_mode)
    base_folds = {r.fold for r in report.folds[baseline_mode]}
    rows = []
    for mode in report.folds:
        if mode == baseline_mode:
            continue
        if {r.fold for r in report.folds[mode]} != base_folds:
            raise ValueError(f"mode {mode!r} fold set differs from baseline")
        if len(report.per_class_mean_f1(mode)) != len(base_class):
            raise ValueError("class vocabulary mismatch between modes")
        stats = report.mode_stats(mode)
        deltas = report.per_class_mean_f1(mode) - base_class
        order = sorted(range(len(deltas)), key=lambda i: (-deltas[i], i))
        named = [f"{report.class_names[i]}:{deltas[i]:.2f}" for i in order]
        rows.append({
            "mode": mode,
            "teacher": report.source,
            "target": report.target,
            "macro_f1": f"{stats['macro_f1_mean']:.2f} ± {stats['macro_f1_std']:.2f}",
            "improvement": stats["macro_f1_mean"] - base_stats["macro_f1_mean"],
            "best": named[0],
            "2nd best": named[1] if len(named) > 1 else "",
            "worst": named[-1],
        })
    rows.append({
        "mode": baseline_mode,
        "teacher": "-",
        "target": report.target,
        "macro_f1": f"{base_stats['macro_f1_mean']:.2f} ± {base_stats['macro_f1_std']:.2f}",
        "improvement": 0.0,
        "best": "",
        "2nd best": "",
        "worst": "",
    })
    return rows


TABLE_COLUMNS = ["mode", "teacher", "target", "macro_f1", "improvement",
                 "best", "2nd best", "worst"]


def report_payload(report: EvalReport, baseline_mode: str = "baseline") -> dict:
    """JSON-ready structure: per-mode stats plus the ranked improvement rows."""
    return {
        "source": report.source,
        "target": report.target,
        "class_names": report.class_names,
        "baseline_mode": baseline_mode,
        "modes": {mode: report.mode_stats(mode) for mode in sorted(report.folds)},
        "table": improvement_table(report, baseline_mode),
    }


def _fmt_improvement(val) -> str:
    return f"{val:.2f}" if isinstance(val, float) else str(val)


def emit_report(payload: dict, fmt: str) -> str:
    """Render the report payload as json, csv, or a markdown table.

    json round-trips losslessly; csv carries one row per (mode, fold) plus
    one summary row per mode; markdown mirrors the improvement-table
    column order.
    """
    if fmt == "json":
        return json.dumps(payload, indent=2, sort_keys=True)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["mode", "fold", "macro_f1", "accuracy"])
        for mode, stats in sorted(payload["modes"].items()):
            for fold, vals in sorted(stats["folds"].items()):
                writer.writerow([mode, fold, f"{vals['macro_f1']:.6f}",
                                 f"{vals['accuracy']:.6f}"])
            writer.writerow([mode, "summary",
                             f"{stats['macro_f1_mean']:.6f}±{stats['macro_f1_std']:.6f}",
                             f"{stats['accuracy_mean']:.6f}±{stats['accuracy_std']:.6f}"])
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(TABLE_COLUMNS) + " |",
                 "|" + "|".join(["---"] * len(TABLE_COLUMNS)) + "|"]
        for row in payload["table"]:
            cells = [(_fmt_improvement(row[c]) if c == "improvement" else str(row[c]))
                     for c in TABLE_COLUMNS]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")
