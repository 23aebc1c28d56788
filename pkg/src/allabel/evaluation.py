"""Scoring predicted annotations against gold.

Matching is strict: for one sample and one entity type, the prediction is a
true positive only when its record multiset equals the gold multiset after
value normalization (trim, collapse runs of whitespace, Unicode NFC). Empty
versus empty is a true negative and scores 1 so that correctly predicting
absence is rewarded; anything non-empty that misses the gold set is a false
positive; predicting absence when the gold has records is a false negative.
"""
from __future__ import annotations

import csv
import json
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import AnnotatedSample, Dataset, EntityRecord
from .errors import DataError

__all__ = [
    "normalize_value",
    "MatchCounts",
    "classify",
    "f1",
    "ScoreReport",
    "score",
    "save_report",
    "write_curve_csv",
    "convergence_fraction",
]


def normalize_value(value: str) -> str:
    """NFC-normalize, trim, and collapse internal whitespace runs."""
    return " ".join(unicodedata.normalize("NFC", value).split())


def _record_key(record: EntityRecord) -> tuple[tuple[str, str], ...]:
    """Order-insensitive canonical form of one record."""
    return tuple(sorted((attr, normalize_value(val)) for attr, val in record.fields))


@dataclass(frozen=True)
class MatchCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: MatchCounts) -> MatchCounts:
        return MatchCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )


def classify(
    gold_records: Sequence[EntityRecord], predicted_records: Sequence[EntityRecord]
) -> MatchCounts:
    """Classify one (sample, entity type) cell into exactly one outcome."""
    if not predicted_records:
        return MatchCounts(tn=1) if not gold_records else MatchCounts(fn=1)
    gold_multiset = Counter(_record_key(r) for r in gold_records)
    pred_multiset = Counter(_record_key(r) for r in predicted_records)
    if gold_records and gold_multiset == pred_multiset:
        return MatchCounts(tp=1)
    return MatchCounts(fp=1)


def f1(counts: MatchCounts) -> float:
    """Balanced F-measure with 0/0 read as 0, except the all-negative case.

    When there is nothing to find and nothing was predicted (only true
    negatives), the score is 1: the absence was predicted perfectly.
    """
    if counts.tp == 0 and counts.fp == 0 and counts.fn == 0:
        return 1.0 if counts.tn > 0 else 0.0
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class ScoreReport:
    """Dataset, per-type, and per-sample scores for one evaluation run."""

    dataset_f1: float
    aggregation: str
    n_evaluated: int
    pool_ids: tuple[str, ...]
    per_sample: dict[str, float]
    per_type_mean: dict[str, float]
    per_type_counts: dict[str, MatchCounts]
    per_type_pooled_f1: dict[str, float]
    pooled_dataset_f1: float


def score(
    dataset: Dataset,
    predictions: Mapping[str, AnnotatedSample],
    pool_ids: Sequence[str] = (),
    aggregation: str = "mean",
) -> ScoreReport:
    """Score every gold-annotated sample of the dataset.

    The headline number averages per-sample scores, which themselves average
    per-entity-type scores, so each sample weighs equally no matter how many
    entities it mentions. ``aggregation="pooled"`` instead computes one F1
    from the summed counts; both variants are always present in the report.
    """
    if aggregation not in ("mean", "pooled"):
        raise DataError(f"unknown aggregation {aggregation!r}")
    evaluated = [s for s in dataset.samples if s.id in dataset.gold]
    if not evaluated:
        raise DataError("dataset has no gold annotations to score against")
    missing = [s.id for s in evaluated if s.id not in predictions]
    if missing:
        raise DataError(f"predictions missing for {len(missing)} samples, e.g. {missing[:5]}")

    type_names = dataset.schema.type_names
    per_sample: dict[str, float] = {}
    per_type_cells: dict[str, list[float]] = {t: [] for t in type_names}
    per_type_counts: dict[str, MatchCounts] = {t: MatchCounts() for t in type_names}
    total_counts = MatchCounts()
    for sample in evaluated:
        gold = dataset.gold[sample.id]
        pred = predictions[sample.id]
        cell_scores = []
        for t in type_names:
            counts = classify(gold.annotations.get(t, ()), pred.annotations.get(t, ()))
            cell = f1(counts)
            cell_scores.append(cell)
            per_type_cells[t].append(cell)
            per_type_counts[t] = per_type_counts[t] + counts
            total_counts = total_counts + counts
        per_sample[sample.id] = sum(cell_scores) / len(cell_scores)

    per_type_mean = {t: sum(v) / len(v) for t, v in per_type_cells.items()}
    per_type_pooled = {t: f1(per_type_counts[t]) for t in type_names}
    mean_f1 = sum(per_sample.values()) / len(per_sample)
    pooled_f1 = f1(total_counts)
    return ScoreReport(
        dataset_f1=mean_f1 if aggregation == "mean" else pooled_f1,
        aggregation=aggregation,
        n_evaluated=len(evaluated),
        pool_ids=tuple(pool_ids),
        per_sample=per_sample,
        per_type_mean=per_type_mean,
        per_type_counts=per_type_counts,
        per_type_pooled_f1=per_type_pooled,
        pooled_dataset_f1=pooled_f1,
    )


def report_to_obj(report: ScoreReport) -> dict:
    return {
        "dataset_f1": report.dataset_f1,
        "aggregation": report.aggregation,
        "n_evaluated": report.n_evaluated,
        "pool_size": len(report.pool_ids),
        "pool_ids": list(report.pool_ids),
        "pooled_dataset_f1": report.pooled_dataset_f1,
        "per_type": {
            t: {
                "mean_f1": report.per_type_mean[t],
                "pooled_f1": report.per_type_pooled_f1[t],
                "counts": {
                    "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn,
                },
            }
            for t, c in report.per_type_counts.items()
        },
        "per_sample": report.per_sample,
    }


def save_report(report: ScoreReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_obj(report), fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def write_curve_csv(
    rows: Sequence[tuple[int, str, int, float]], path: str | Path
) -> None:
    """Plot-ready rows of (pool_size, strategy, run, f1)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pool_size", "strategy", "run", "f1"])
        for pool_size, strategy, run, value in rows:
            writer.writerow([pool_size, strategy, run, repr(float(value))])


def convergence_fraction(
    curve: Sequence[tuple[int, float]],
    reference_f1: float,
    threshold: float,
    n_total: int,
) -> float | None:
    """Smallest pool size (as percent of the corpus) whose score comes
    within ``threshold`` of the reference, or None if the curve never does.
    """
    if n_total <= 0:
        raise DataError("n_total must be positive")
    for pool_size, value in sorted(curve, key=lambda t: t[0]):
        if value >= reference_f1 - threshold:
            return 100.0 * pool_size / n_total
    return None


def render_per_type_figure(report: ScoreReport, path: str | Path) -> None:
    """Bar chart of per-type mean F1 with the dataset average marked."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = list(report.per_type_mean)
    values = [report.per_type_mean[t] for t in names]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(names)), 3.2), dpi=120)
    ax.bar(range(len(names)), values, color="#4878a8")
    ax.axhline(report.dataset_f1, color="#b04030", linestyle="--", linewidth=1.2,
               label=f"dataset mean {report.dataset_f1:.3f}")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("F1")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": "allabel"})
    plt.close(fig)
