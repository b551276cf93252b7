"""Evaluation metrics: per-class one-vs-all P/R/F1, micro/macro aggregates
over all labels and over positive labels only, and the categorical-sampling
random baseline.

Zero-division convention throughout: any 0/0 is defined as 0.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Label, NUM_CLASSES, POSITIVE_LABELS
from .splitter import LabelDistribution

# Row order of the report tables (display order, not class-code order).
TABLE_ROW_ORDER: tuple[Label, ...] = (Label.NO_REL, Label.REG, Label.COM, Label.LOF, Label.GOF)
_DISPLAY_NAMES = {
    Label.NO_REL: "No rel",
    Label.REG: "REG",
    Label.COM: "COM",
    Label.LOF: "LOF",
    Label.GOF: "GOF",
}


@dataclass(frozen=True)
class ClassCounts:
    """One-vs-all tp/fp/fn per class, indexed by Label code."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return self.tp + self.fn


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: float


@dataclass(frozen=True)
class MetricsReport:
    per_class: dict[Label, ClassMetrics]
    micro_all: PRF
    macro_all: PRF
    micro_pos: PRF
    macro_pos: PRF


def _as_label_array(labels: Sequence[Label | int]) -> np.ndarray:
    arr = np.asarray([int(x) for x in labels], dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= NUM_CLASSES):
        raise ValueError("label code out of range")
    return arr


def confusion_counts(preds: Sequence[Label | int], golds: Sequence[Label | int]) -> ClassCounts:
    """Standard one-vs-all counting per class over a single-label task."""
    p = _as_label_array(preds)
    g = _as_label_array(golds)
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {g.size} golds")
    if p.size == 0:
        raise ValueError("cannot count over empty prediction/gold lists")
    conf = np.bincount(g * NUM_CLASSES + p, minlength=NUM_CLASSES * NUM_CLASSES)
    conf = conf.reshape(NUM_CLASSES, NUM_CLASSES)  # conf[gold, pred]
    tp = np.diag(conf).astype(np.int64)
    fn = conf.sum(axis=1) - tp
    fp = conf.sum(axis=0) - tp
    return ClassCounts(tp=tp, fp=fp, fn=fn)


def prf(tp: float, fp: float, fn: float) -> tuple[float, float, float]:
    """Precision, recall, F1 from counts; 0/0 cases are 0.

    F1 is computed in count form, 2tp / (2tp + fp + fn), which equals the
    harmonic mean 2PR/(P+R) wherever the latter is defined and extends it
    with the same zero convention.
    """
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be nonnegative")
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn > 0 else 0.0
    return (p, r, f1)


def macro_average(rows: Sequence[tuple[float, float, float]]) -> PRF:
    """Unweighted arithmetic mean of (P, R, F1) rows."""
    if not rows:
        raise ValueError("macro average of an empty class set is undefined")
    arr = np.asarray(rows, dtype=np.float64)
    m = arr.mean(axis=0)
    return PRF(float(m[0]), float(m[1]), float(m[2]))


def _micro(counts: ClassCounts, classes: Sequence[Label]) -> PRF:
    idx = [int(c) for c in classes]
    tp = int(counts.tp[idx].sum())
    fp = int(counts.fp[idx].sum())
    fn = int(counts.fn[idx].sum())
    return PRF(*prf(tp, fp, fn))


def report_from_counts(counts: ClassCounts) -> MetricsReport:
    per_class: dict[Label, ClassMetrics] = {}
    for label in Label:
        i = int(label)
        p, r, f1 = prf(int(counts.tp[i]), int(counts.fp[i]), int(counts.fn[i]))
        per_class[label] = ClassMetrics(p, r, f1, float(counts.support[i]))
    all_rows = [(m.precision, m.recall, m.f1) for m in per_class.values()]
    pos_rows = [
        (per_class[c].precision, per_class[c].recall, per_class[c].f1) for c in POSITIVE_LABELS
    ]
    return MetricsReport(
        per_class=per_class,
        micro_all=_micro(counts, list(Label)),
        macro_all=macro_average(all_rows),
        micro_pos=_micro(counts, POSITIVE_LABELS),
        macro_pos=macro_average(pos_rows),
    )


def metrics_report(preds: Sequence[Label | int], golds: Sequence[Label | int]) -> MetricsReport:
    """Full report for one prediction run."""
    return report_from_counts(confusion_counts(preds, golds))


# ---------------------------------------------------------------------------
# Averaging reports (used by the sampling baseline)

def _report_to_array(report: MetricsReport) -> np.ndarray:
    rows = []
    for label in Label:
        m = report.per_class[label]
        rows.append([m.precision, m.recall, m.f1, m.support])
    for agg in (report.micro_all, report.macro_all, report.micro_pos, report.macro_pos):
        rows.append([agg.precision, agg.recall, agg.f1, np.nan])
    return np.asarray(rows, dtype=np.float64)


def _report_from_array(arr: np.ndarray) -> MetricsReport:
    per_class = {
        label: ClassMetrics(*[float(v) for v in arr[int(label), :3]], float(arr[int(label), 3]))
        for label in Label
    }
    aggs = [PRF(*[float(v) for v in arr[NUM_CLASSES + k, :3]]) for k in range(4)]
    return MetricsReport(per_class, *aggs)


def mean_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Element-wise mean of a non-empty report list."""
    if not reports:
        raise ValueError("cannot average zero reports")
    stack = np.stack([_report_to_array(r) for r in reports])
    return _report_from_array(stack.mean(axis=0))


def random_baseline(
    train_dist: LabelDistribution,
    dev_golds: Sequence[Label | int],
    n_runs: int = 1000,
    seed: int = 0,
) -> MetricsReport:
    """Baseline that samples predictions from the training label distribution.

    Each run samples one label per dev instance from ``train_dist`` and is
    scored like any other prediction run; the returned report is the
    element-wise mean over runs. Per-run RNG streams are derived from
    (seed, run index), so the average does not depend on execution order.
    """
    golds = _as_label_array(dev_golds)
    if golds.size == 0:
        raise ValueError("dev gold list must be non-empty")
    probs = train_dist.p
    reports = []
    for run in range(n_runs):
        rng = np.random.default_rng([seed, run])
        preds = rng.choice(NUM_CLASSES, size=golds.size, p=probs)
        reports.append(metrics_report(preds, golds))
    return mean_reports(reports)


# ---------------------------------------------------------------------------
# Serialization

def _fmt_support(s: float) -> str:
    return str(int(round(s))) if abs(s - round(s)) < 1e-9 else f"{s:.3f}"


def format_report_table(report: MetricsReport) -> str:
    """Tab-separated table, 3-decimal rounding, aggregate rows after classes."""
    lines = ["\tP\tR\tF1\tSupp."]
    for label in TABLE_ROW_ORDER:
        m = report.per_class[label]
        lines.append(
            f"{_DISPLAY_NAMES[label]}\t{m.precision:.3f}\t{m.recall:.3f}"
            f"\t{m.f1:.3f}\t{_fmt_support(m.support)}"
        )
    for name, agg in (
        ("Micro-all", report.micro_all),
        ("Macro-all", report.macro_all),
        ("Micro-pos", report.micro_pos),
        ("Macro-pos", report.macro_pos),
    ):
        lines.append(f"{name}\t{agg.precision:.3f}\t{agg.recall:.3f}\t{agg.f1:.3f}\t")
    return "\n".join(lines) + "\n"


def report_to_dict(report: MetricsReport) -> dict:
    """Machine-readable form with full float precision."""
    return {
        "per_class": {
            label.token: {
                "precision": report.per_class[label].precision,
                "recall": report.per_class[label].recall,
                "f1": report.per_class[label].f1,
                "support": report.per_class[label].support,
            }
            for label in Label
        },
        "micro_all": vars(report.micro_all).copy(),
        "macro_all": vars(report.macro_all).copy(),
        "micro_pos": vars(report.micro_pos).copy(),
        "macro_pos": vars(report.macro_pos).copy(),
    }


def write_report(report: MetricsReport, table_path: str | Path, json_path: str | Path) -> None:
    Path(table_path).write_text(format_report_table(report), encoding="utf-8")
    with Path(json_path).open("w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, sort_keys=True, indent=2)
        fh.write("\n")
