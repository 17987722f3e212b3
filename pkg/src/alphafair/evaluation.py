"""Fairness metrics (accuracy and F1 families) and weight diagnostics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataio import Dataset, GroupPartition
from .model import Model, forward_losses, predict

# Called with every MetricsReport that evaluate() builds.
REPORT_HOOKS: list[Callable[["MetricsReport"], None]] = []


class EvaluationError(ValueError):
    pass


def group_key(codes: tuple[int, ...]) -> str:
    return "|".join(str(c) for c in codes)


@dataclass
class MetricsReport:
    acc: float
    wacc: float
    delta: float
    group_acc: dict[str, float]
    group_counts: dict[str, int]
    class_f1: list[float]
    f1: float
    wf1: float
    delta_f1: float
    group_f1: dict[str, float]
    n_samples: int
    worst_group: str
    attributes: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def max_pairwise_gap(self) -> float:
        accs = list(self.group_acc.values())
        return max(accs) - min(accs)

    def gap_bound_holds(self) -> bool:
        """Any two groups differ by at most 1 - WACC."""
        return self.max_pairwise_gap <= 1.0 - self.wacc + 1e-12

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def f1_per_class(cm: np.ndarray) -> np.ndarray:
    """F1 for each class; a class absent from both truth and predictions scores 1."""
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    return np.where(denom == 0, 1.0, 2 * tp / np.where(denom == 0, 1, denom))


def _summary_f1(cm: np.ndarray) -> float:
    # positive-class F1 for binary tasks, macro-F1 otherwise
    f1 = f1_per_class(cm)
    return float(f1[1]) if len(f1) == 2 else float(f1.mean())


def metrics_from_predictions(y_true, y_pred, n_classes: int, partition: GroupPartition,
                             config: dict | None = None) -> MetricsReport:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if partition.n_samples != len(y_true):
        raise EvaluationError("partition does not cover the dataset")
    correct = y_true == y_pred
    cm = confusion_matrix(y_true, y_pred, n_classes)
    group_acc, group_counts, group_f1 = {}, {}, {}
    for codes, ix in zip(partition.codes, partition.indices):
        if len(ix) == 0:
            raise EvaluationError(f"empty group {codes}")
        key = group_key(codes)
        group_acc[key] = float(correct[ix].mean())
        group_counts[key] = int(len(ix))
        group_f1[key] = _summary_f1(confusion_matrix(y_true[ix], y_pred[ix], n_classes))
    acc = float(correct.mean())
    worst = min(group_acc, key=lambda k: (group_acc[k], k))
    wacc = group_acc[worst]
    f1 = _summary_f1(cm)
    wf1 = min(group_f1.values())
    report = MetricsReport(
        acc=acc,
        wacc=wacc,
        delta=abs(acc - wacc),
        group_acc=group_acc,
        group_counts=group_counts,
        class_f1=[float(v) for v in f1_per_class(cm)],
        f1=f1,
        wf1=wf1,
        delta_f1=abs(f1 - wf1),
        group_f1=group_f1,
        n_samples=int(len(y_true)),
        worst_group=worst,
        attributes=list(partition.attributes),
        config=dict(config or {}),
    )
    if not report.gap_bound_holds():
        raise EvaluationError(
            f"pairwise group gap {report.max_pairwise_gap} exceeds 1 - WACC = {1 - wacc}"
        )
    for hook in REPORT_HOOKS:
        hook(report)
    return report


def evaluate(model: Model, dataset: Dataset, partition: GroupPartition, config: dict | None = None) -> MetricsReport:
    return metrics_from_predictions(
        dataset.labels, predict(model, dataset.features), dataset.n_classes, partition, config
    )


def summarize_runs(reports: list[MetricsReport]) -> dict:
    """Mean and sample std over seeds for the headline metrics."""
    out = {"n_runs": len(reports)}
    for name in ("acc", "wacc", "delta", "f1", "wf1", "delta_f1"):
        vals = np.array([getattr(r, name) for r in reports])
        out[name] = {
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
        }
    return out


def top_m_proportion(weights, is_worst, grid=tuple(range(10, 100, 10))) -> dict[int, float]:
    """Share of worst-group members among the top m% by weight (ties by index)."""
    w = np.asarray(weights, dtype=np.float64)
    flags = np.asarray(is_worst, dtype=bool)
    if w.shape != flags.shape:
        raise EvaluationError("weights and flags must be aligned")
    order = np.argsort(-w, kind="stable")
    n = len(w)
    out = {}
    for m in grid:
        count = max(1, int(math.floor(n * m / 100.0 + 1e-9)))
        out[int(m)] = float(flags[order[:count]].mean())
    return out


@dataclass(frozen=True)
class ErrorAnalysis:
    sample_ids: np.ndarray
    losses: np.ndarray  # ascending
    boundary: float
    n_correct_boundary: int
    n_correct_argmax: int

    @property
    def consistent(self) -> bool:
        return self.n_correct_boundary == self.n_correct_argmax


def error_analysis(model: Model, dataset: Dataset) -> ErrorAnalysis:
    """Sorted per-sample losses, split at -log(0.5); binary tasks only.

    A loss exactly at the boundary counts as misclassified.
    """
    if dataset.n_classes != 2 or model.layout.n_classes != 2:
        raise EvaluationError("the -log(0.5) decision boundary is only defined for binary tasks")
    losses = forward_losses(model, dataset.features, dataset.labels)
    order = np.argsort(losses, kind="stable")
    boundary = math.log(2.0)
    return ErrorAnalysis(
        sample_ids=dataset.sample_ids[order],
        losses=losses[order],
        boundary=boundary,
        n_correct_boundary=int((losses < boundary).sum()),
        n_correct_argmax=int((predict(model, dataset.features) == dataset.labels).sum()),
    )


def weight_distribution_dump(weights, groups, sample_ids, base: float = 1.0) -> list[dict]:
    """Rows of (id, group, base * N * w_i): uniform simplex weights map to ``base``."""
    w = np.asarray(weights, dtype=np.float64)
    n = len(w)
    return [
        {"id": int(i), "group": int(g), "weight": float(base * n * wi)}
        for i, g, wi in zip(sample_ids, groups, w)
    ]


DIAG_HEADER = ["id", "group", "loss", "weight", "selected"]


def write_diagnostics_csv(path, rows: list[dict], header=DIAG_HEADER) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(header), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)
