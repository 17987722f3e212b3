"""SGD training loops for ERM, CVaR, DRO, IRW and IRWO.

Every method reduces a mini-batch step to simplex weights ``w`` over the
batch followed by ``theta <- theta - lr * sum_i w_i g_i``. The methods
differ only in how ``w`` is chosen.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .dataio import Dataset, GroupPartition
from .evaluation import evaluate
from .irw import global_epoch_weights, local_batch_weights, restrict_weights
from .model import Layout, Model, apply_step, forward_losses, init_model, weighted_gradient
from .objective import WeightVector, cvar_soft_weights, dro_weights, top_alpha_risk
from .outlier import detect_outliers, remove_outliers

log = logging.getLogger(__name__)

METHODS = ("erm", "cvar", "dro", "irw", "irwo")
SCHEMES = ("global", "local")


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    method: str = "irw"
    alpha: float = 0.1
    epochs: int = 20
    batch_size: int = 128
    lr: float = 0.05
    scheme: str = "local"
    cvar_eps: float = 0.0
    tau: int | None = None  # outlier period in steps; None = batches per epoch
    dbscan_eps: float | None = None  # None = data-driven default
    min_pts: int = 5
    eps_percentile: float = 90.0
    grad_slice: str = "full"
    hidden: int = 0
    init_scale: float | None = None  # None = Glorot / He defaults
    seed: int = 0
    log_level: str = "WARNING"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha out of range (0, 1]: {self.alpha}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.tau is not None and self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if self.min_pts < 1:
            raise ConfigError("min_pts must be >= 1")
        if self.cvar_eps < 0:
            raise ConfigError("cvar_eps must be >= 0")
        if self.grad_slice not in ("full", "last"):
            raise ConfigError("grad_slice must be 'full' or 'last'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class TrainLog:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    removals: list[dict] = field(default_factory=list)

    def write_ndjson(self, path, include_timing: bool = False) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for rec in self.steps:
                fh.write(json.dumps({"type": "step", **rec}) + "\n")
            for rec in self.epochs:
                if not include_timing:
                    rec = {k: v for k, v in rec.items() if k != "seconds"}
                fh.write(json.dumps({"type": "epoch", **rec}) + "\n")


def _entropy(w: np.ndarray) -> float:
    p = w[w > 0]
    return float(-(p * np.log(p)).sum())


class _Locator:
    """Maps sample ids to their current row positions."""

    def __init__(self, sample_ids: np.ndarray):
        self._sorter = np.argsort(sample_ids, kind="stable")
        self._sorted = sample_ids[self._sorter]

    def __call__(self, ids: np.ndarray) -> np.ndarray:
        return self._sorter[np.searchsorted(self._sorted, ids)]


def _step_weights(config: TrainConfig, model: Model, batch: Dataset, losses: np.ndarray) -> WeightVector:
    n = len(batch)
    if config.method == "erm":
        return WeightVector(np.full(n, 1.0 / n), "simplex")
    if config.method == "cvar":
        return cvar_soft_weights(losses, config.alpha, min(config.cvar_eps, 1.0 / n))
    if config.method == "dro":
        return dro_weights(losses, config.alpha)
    return local_batch_weights(model, batch, config.alpha, config.grad_slice).weights


def train(
    config: TrainConfig,
    train_set: Dataset,
    eval_set: Dataset | None = None,
    eval_partition: GroupPartition | None = None,
    model: Model | None = None,
) -> tuple[Model, TrainLog]:
    """Run SGD for ``config.epochs`` epochs and return the final model and log.

    For ``irwo`` the full current training set is screened for gradient-space
    outliers every ``tau`` steps (at the end of each period, never at step 0) and flagged samples are
    dropped for good. With the global scheme IRW weights are computed over
    the whole (current) training set at the start of each epoch and
    renormalised over every batch; with the local scheme they are
    recomputed from each batch's own top-alpha samples.
    """
    logging.getLogger("alphafair").setLevel(config.log_level.upper())
    rng = np.random.default_rng(config.seed)
    if model is None:
        layout = Layout(train_set.n_features, train_set.n_classes, config.hidden)
        model = init_model(layout, rng, config.init_scale)
    data = train_set
    tlog = TrainLog()
    n_batches = -(-len(data) // config.batch_size)
    tau = config.tau or n_batches
    reweighted = config.method in ("irw", "irwo")
    step = 0

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = data.sample_ids[rng.permutation(len(data))]
        cursor = 0
        frozen = None  # global scheme: IRW scores over the current data, in data order
        locate = _Locator(data.sample_ids)
        while cursor < len(order):
            removed = 0
            if config.method == "irwo" and step > 0 and step % tau == 0:
                labels = detect_outliers(
                    model, data, config.dbscan_eps, config.min_pts, config.grad_slice, config.eps_percentile
                )
                if len(labels.outliers):
                    gone = data.sample_ids[labels.outliers]
                    data = remove_outliers(data, labels)
                    removed = len(gone)
                    order = np.concatenate([order[:cursor], order[cursor:][~np.isin(order[cursor:], gone)]])
                    locate = _Locator(data.sample_ids)
                    frozen = None
                    tlog.removals.append(
                        {
                            "step": step,
                            "epoch": epoch,
                            "removed_ids": [int(i) for i in gone],
                            "eps": labels.eps,
                            "min_pts": labels.min_pts,
                        }
                    )
                    log.info("step %d: removed %d outliers", step, removed)
                if cursor >= len(order):
                    break

            if reweighted and config.scheme == "global" and frozen is None:
                frozen = global_epoch_weights(model, data, config.alpha, config.grad_slice).scores.scores

            # rows within a batch are kept in data order; the update is a sum, so
            # this only fixes float summation order and makes B = N schemes agree
            pos = np.sort(locate(order[cursor : cursor + config.batch_size]))
            batch = data.subset(pos)
            losses = forward_losses(model, batch.features, batch.labels)
            if not np.all(np.isfinite(losses)):
                raise TrainingError(f"non-finite loss at step {step}")
            if frozen is not None:
                weights = restrict_weights(frozen, pos)
            else:
                weights = _step_weights(config, model, batch, losses)
            cursor += len(pos)

            skipped = weights.is_zero
            if not skipped:
                direction = weighted_gradient(model, batch.features, batch.labels, weights.weights)
                model = apply_step(model, direction, config.lr)
            tlog.steps.append(
                {
                    "step": step,
                    "epoch": epoch,
                    "batch_loss": float(losses.mean()),
                    "top_alpha_loss": top_alpha_risk(losses, config.alpha),
                    "weight_entropy": _entropy(weights.weights),
                    "removed": removed,
                    "skipped": bool(skipped),
                    "n_train": len(data),
                }
            )
            step += 1

        rec = {"epoch": epoch, "n_train": len(data), "seconds": time.perf_counter() - t0}
        if eval_set is not None and eval_partition is not None:
            rep = evaluate(model, eval_set, eval_partition)
            rec.update(acc=rep.acc, wacc=rep.wacc, delta=rep.delta)
        tlog.epochs.append(rec)
    return model, tlog


def variance_compare(weights: WeightVector, grads: np.ndarray) -> tuple[float, float]:
    """Gradient variance of reweighting vs resampling under shared importances.

        sigma_w^2 = sum_i N w_i^2 |g_i|^2 - |(1/N) sum_i w_i g_i|^2
        sigma_s^2 = sum_i w_i |g_i|^2     - |(1/N) sum_i w_i g_i|^2
    """
    if weights.is_zero:
        raise ValueError("variance comparison needs simplex weights")
    g = np.asarray(grads, dtype=np.float64)
    w = weights.weights
    n = len(w)
    if g.shape[0] != n:
        raise ValueError("weights and gradient rows are not aligned")
    sq = np.einsum("ij,ij->i", g, g)
    m = (w @ g) / n
    mean_sq = float(m @ m)
    return float((n * w**2 * sq).sum() - mean_sq), float((w * sq).sum() - mean_sq)


def with_overrides(config: TrainConfig, **overrides) -> TrainConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
