"""Intrinsic reweighting: score each sample by how well its gradient aligns
with the mean gradient of the current top-alpha (worst) samples, then
rectify and normalise the scores onto the simplex."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import Model, forward_losses, per_sample_gradients
from .objective import TopAlphaSelection, WeightVector, top_alpha_select


class IRWError(ValueError):
    pass


@dataclass(frozen=True)
class ImportanceScores:
    scores: np.ndarray
    worst_grad: np.ndarray


@dataclass(frozen=True)
class IRWResult:
    """Everything one weight computation produced, for logging and reuse."""

    weights: WeightVector
    losses: np.ndarray
    selection: TopAlphaSelection
    scores: ImportanceScores
    grads: np.ndarray


def worst_group_gradient(grads: np.ndarray, selection: TopAlphaSelection) -> np.ndarray:
    idx = np.asarray(selection.indices)
    if idx.size == 0:
        raise IRWError("empty selection")
    if idx.min() < 0 or idx.max() >= len(grads):
        raise IRWError("selection indices out of range for the gradient matrix")
    return grads[idx].mean(axis=0)


def importance_scores(grads: np.ndarray, worst_grad: np.ndarray) -> ImportanceScores:
    grads = np.asarray(grads, dtype=np.float64)
    worst_grad = np.asarray(worst_grad, dtype=np.float64)
    if grads.ndim != 2 or worst_grad.shape != (grads.shape[1],):
        raise IRWError(f"shape mismatch: grads {grads.shape}, worst_grad {worst_grad.shape}")
    return ImportanceScores(scores=grads @ worst_grad, worst_grad=worst_grad)


def normalize_weights(scores: ImportanceScores | np.ndarray) -> WeightVector:
    """w_i = [v_i]_+ / (sum_j [v_j]_+ + delta), delta = 1 only when the sum is 0."""
    v = scores.scores if isinstance(scores, ImportanceScores) else np.asarray(scores, dtype=np.float64)
    pos = np.maximum(v, 0.0)
    total = pos.sum()
    if total == 0.0:
        return WeightVector(np.zeros_like(pos), "zero")
    w = pos / total
    return WeightVector(w, "simplex")


def irw_weights(model: Model, x, y, alpha: float, which: str = "full") -> IRWResult:
    """Forward pass, top-alpha selection, per-sample gradients, scores, weights."""
    losses = forward_losses(model, x, y)
    sel = top_alpha_select(losses, alpha)
    grads = per_sample_gradients(model, x, y, which=which)
    scores = importance_scores(grads, worst_group_gradient(grads, sel))
    return IRWResult(normalize_weights(scores), losses, sel, scores, grads)


def global_epoch_weights(model: Model, dataset, alpha: float, which: str = "full") -> IRWResult:
    """Weights over the whole training set, meant to be frozen for an epoch."""
    if len(dataset) == 0:
        raise IRWError("dataset is empty")
    return irw_weights(model, dataset.features, dataset.labels, alpha, which)


def local_batch_weights(model: Model, batch, alpha: float, which: str = "full") -> IRWResult:
    """Weights on the batch simplex, using the batch's own top-alpha samples."""
    if len(batch) == 0:
        raise IRWError("batch is empty")
    return irw_weights(model, batch.features, batch.labels, alpha, which)


def restrict_weights(scores: np.ndarray, positions: np.ndarray) -> WeightVector:
    """Frozen scores (or weights) restricted to a batch and normalised over it.

    Rectification makes scores and their normalised weights interchangeable
    here; passing raw scores avoids a second rounding step.
    """
    return normalize_weights(np.asarray(scores)[positions])


def weight_records(result: IRWResult, sample_ids) -> list[dict]:
    """Per-sample diagnostics rows: id, loss, weight, selected flag."""
    sel = result.selection.mask(len(result.losses))
    return [
        {
            "id": int(i),
            "loss": float(l),
            "weight": float(w),
            "selected": bool(s),
        }
        for i, l, w, s in zip(sample_ids, result.losses, result.weights.weights, sel)
    ]


def write_weight_ndjson(fh, records) -> None:
    for rec in records:
        fh.write(json.dumps(rec) + "\n")
