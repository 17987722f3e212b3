"""Softmax classifiers with exact per-sample gradients.

Two fixed architectures: a multinomial linear model (``hidden == 0``) and
a one-hidden-layer ReLU network. Parameters live in one flat vector; the
layout is, in order, ``W1 (d x H), b1 (H), W2 (H x C), b2 (C)`` for the
MLP and ``W (d x C), b (C)`` for the linear model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_FLOOR = np.log(1e-12)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Layout:
    n_features: int
    n_classes: int
    hidden: int = 0

    def __post_init__(self):
        if self.n_features < 1 or self.n_classes < 2 or self.hidden < 0:
            raise ModelError(f"invalid layout {self}")

    @property
    def n_params(self) -> int:
        d, h, c = self.n_features, self.hidden, self.n_classes
        if h == 0:
            return d * c + c
        return d * h + h + h * c + c

    @property
    def output_start(self) -> int:
        """Offset of the output layer (``W2, b2`` or ``W, b``) in the flat vector."""
        d, h = self.n_features, self.hidden
        return 0 if h == 0 else d * h + h

    def param_slice(self, which: str = "full") -> slice:
        """``"full"`` or ``"last"`` (output layer only)."""
        if which == "full":
            return slice(0, self.n_params)
        if which == "last":
            return slice(self.output_start, self.n_params)
        raise ModelError(f"unknown parameter slice {which!r}")

    def unpack(self, params: np.ndarray):
        d, h, c = self.n_features, self.hidden, self.n_classes
        if h == 0:
            return params[: d * c].reshape(d, c), params[d * c :]
        o = 0
        w1 = params[o : o + d * h].reshape(d, h); o += d * h
        b1 = params[o : o + h]; o += h
        w2 = params[o : o + h * c].reshape(h, c); o += h * c
        return w1, b1, w2, params[o:]


@dataclass(frozen=True)
class Model:
    params: np.ndarray
    layout: Layout

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float64)
        if p.shape != (self.layout.n_params,):
            raise ModelError(f"expected {self.layout.n_params} parameters, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ModelError("parameters must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "params", p)


def init_model(layout: Layout, rng: np.random.Generator, scale: float | None = None) -> Model:
    """Random normal weights, zero biases.

    Default scales are Glorot for the linear model and He / 1/sqrt(H) for
    the two MLP layers; ``scale`` overrides all of them (0 gives zeros).
    """
    d, h, c = layout.n_features, layout.hidden, layout.n_classes
    params = np.zeros(layout.n_params)
    if h == 0:
        s = np.sqrt(2.0 / (d + c)) if scale is None else scale
        params[: d * c] = rng.standard_normal(d * c) * s
    else:
        s1 = np.sqrt(2.0 / d) if scale is None else scale
        s2 = np.sqrt(1.0 / h) if scale is None else scale
        params[: d * h] = rng.standard_normal(d * h) * s1
        o = d * h + h
        params[o : o + h * c] = rng.standard_normal(h * c) * s2
    return Model(params, layout)


def _check(model: Model, x: np.ndarray, y: np.ndarray | None = None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layout.n_features:
        raise ModelError(
            f"feature width {x.shape[-1] if x.ndim else 0} does not match layout "
            f"input {model.layout.n_features}"
        )
    if y is not None:
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (x.shape[0],):
            raise ModelError("labels must have one entry per row")
        if y.size and (y.min() < 0 or y.max() >= model.layout.n_classes):
            raise ModelError("label outside [0, n_classes)")
    return x, y


def _forward(model: Model, x: np.ndarray):
    lay = model.layout
    if lay.hidden == 0:
        w, b = lay.unpack(model.params)
        return x @ w + b, None, None
    w1, b1, w2, b2 = lay.unpack(model.params)
    pre = x @ w1 + b1
    h = np.maximum(pre, 0.0)
    return h @ w2 + b2, pre, h


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def logits(model: Model, x) -> np.ndarray:
    x, _ = _check(model, x)
    return _forward(model, x)[0]


def predict_proba(model: Model, x) -> np.ndarray:
    return np.exp(_log_softmax(logits(model, x)))


def predict(model: Model, x) -> np.ndarray:
    return np.argmax(logits(model, x), axis=1)


def forward_losses(model: Model, x, y) -> np.ndarray:
    """Per-sample cross-entropy, with the log-probability floored at log(1e-12)."""
    x, y = _check(model, x, y)
    logp = _log_softmax(_forward(model, x)[0])
    return -np.maximum(logp[np.arange(len(y)), y], LOG_FLOOR)


def _residual(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    r = np.exp(_log_softmax(z))
    r[np.arange(len(y)), y] -= 1.0
    return r


def per_sample_gradients(model: Model, x, y, which: str = "full") -> np.ndarray:
    """N x P matrix whose row i is the gradient of loss i w.r.t. the parameters.

    ``which="last"`` returns only the columns of the output layer.
    """
    x, y = _check(model, x, y)
    lay = model.layout
    n = len(y)
    z, pre, h = _forward(model, x)
    r = _residual(z, y)
    if lay.hidden == 0:
        gw = (x[:, :, None] * r[:, None, :]).reshape(n, -1)
        return np.concatenate([gw, r], axis=1)
    _, _, w2, _ = lay.unpack(model.params)
    gw2 = (h[:, :, None] * r[:, None, :]).reshape(n, -1)
    if which == "last":
        return np.concatenate([gw2, r], axis=1)
    dpre = (r @ w2.T) * (pre > 0)
    gw1 = (x[:, :, None] * dpre[:, None, :]).reshape(n, -1)
    return np.concatenate([gw1, dpre, gw2, r], axis=1)


def weighted_gradient(model: Model, x, y, weights=None) -> np.ndarray:
    """Gradient of ``sum_i w_i * loss_i`` (mean loss when ``weights`` is None).

    Equivalent to ``weights @ per_sample_gradients(...)`` without forming
    the N x P matrix.
    """
    x, y = _check(model, x, y)
    n = len(y)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    lay = model.layout
    z, pre, h = _forward(model, x)
    r = _residual(z, y) * w[:, None]
    if lay.hidden == 0:
        return np.concatenate([(x.T @ r).ravel(), r.sum(axis=0)])
    _, _, w2, _ = lay.unpack(model.params)
    dpre = (r @ w2.T) * (pre > 0)
    return np.concatenate([(x.T @ dpre).ravel(), dpre.sum(axis=0), (h.T @ r).ravel(), r.sum(axis=0)])


def apply_step(model: Model, direction, lr: float) -> Model:
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != model.params.shape:
        raise ModelError(f"direction has shape {direction.shape}, expected {model.params.shape}")
    if not lr > 0:
        raise ModelError("learning rate must be positive")
    if not np.all(np.isfinite(direction)):
        raise ModelError("non-finite entries in update direction")
    return Model(model.params - lr * direction, model.layout)


def model_to_dict(model: Model) -> dict:
    lay = model.layout
    return {
        "layout": {"n_features": lay.n_features, "n_classes": lay.n_classes, "hidden": lay.hidden},
        "params": [float(v) for v in model.params],
    }


def model_from_dict(data: dict) -> Model:
    return Model(np.array(data["params"], dtype=np.float64), Layout(**data["layout"]))


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n", encoding="utf-8")


def load_model(path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
