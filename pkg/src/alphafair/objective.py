"""Worst-case risk family over a vector of per-sample losses.

Covers the top-k (k = floor(N * alpha)) risk and its hinge form, the
soft/hard CVaR weights, the chi-square DRO dual, group risks, the
worst-group <= top-k <= DRO chain, and an exact solver for the
box-constrained adversarial reweighting problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import GroupPartition

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class ObjectiveError(ValueError):
    pass


class SandwichPreconditionError(ObjectiveError):
    """alpha exceeds the partition's minimal group proportion."""


@dataclass(frozen=True)
class TopAlphaSelection:
    k: int
    indices: np.ndarray
    threshold_loss: float

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[self.indices] = True
        return m


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    tag: str  # "simplex" or "zero"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0):
            raise ObjectiveError("weights must be nonnegative")
        if self.tag == "simplex":
            if abs(w.sum() - 1.0) > 1e-9:
                raise ObjectiveError(f"simplex weights sum to {w.sum()}")
        elif self.tag == "zero":
            if np.any(w != 0):
                raise ObjectiveError("zero-tagged weights must all be 0")
        else:
            raise ObjectiveError(f"unknown tag {self.tag!r}")
        object.__setattr__(self, "weights", w)

    @property
    def is_zero(self) -> bool:
        return self.tag == "zero"

    def __len__(self) -> int:
        return len(self.weights)


def _losses(losses) -> np.ndarray:
    ell = np.asarray(losses, dtype=np.float64)
    if ell.ndim != 1 or len(ell) < 1:
        raise ObjectiveError("need a nonempty 1-d loss vector")
    if not np.all(np.isfinite(ell)):
        raise ObjectiveError("losses must be finite")
    return ell


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha <= 1.0:
        raise ObjectiveError(f"alpha out of range (0, 1]: {alpha}")


def top_k_count(n: int, alpha: float) -> int:
    _check_alpha(alpha)
    # the 1e-9 slack keeps e.g. 100 * 0.29 from flooring to 28
    return max(1, min(n, int(math.floor(n * alpha + 1e-9))))


def top_alpha_select(losses, alpha: float) -> TopAlphaSelection:
    """The k largest losses; ties broken toward the lower index."""
    ell = _losses(losses)
    k = top_k_count(len(ell), alpha)
    order = np.argsort(-ell, kind="stable")
    threshold = float(ell[order[k]]) if k < len(ell) else 0.0
    return TopAlphaSelection(k=k, indices=np.sort(order[:k]), threshold_loss=threshold)


def top_alpha_risk(losses, alpha: float) -> float:
    ell = _losses(losses)
    sel = top_alpha_select(ell, alpha)
    return float(ell[sel.indices].mean())


def hinge_form_risk(losses, alpha: float) -> float:
    """(1/k) * sum_i [loss_i - t]_+ + t with t the largest unselected loss."""
    ell = _losses(losses)
    sel = top_alpha_select(ell, alpha)
    t = sel.threshold_loss
    return float(np.maximum(ell - t, 0.0).sum() / sel.k + t)


def cvar_soft_weights(losses, alpha: float, eps: float = 0.0) -> WeightVector:
    """Floor weight ``eps`` for unselected samples, the rest spread over the top k.

    The selected weight is (1 - (N - k) * eps) / k, i.e. the floor-weight
    rule with k/N standing in for alpha so the result is always on the
    simplex. ``eps = 0`` is hard top-k selection.
    """
    ell = _losses(losses)
    n = len(ell)
    if eps < 0 or eps > 1.0 / n + 1e-15:
        raise ObjectiveError(f"eps must lie in [0, 1/N] = [0, {1.0 / n}], got {eps}")
    sel = top_alpha_select(ell, alpha)
    w = np.full(n, float(eps))
    w[sel.indices] = (1.0 - (n - sel.k) * eps) / sel.k
    return WeightVector(w, "simplex")


def dro_constant(alpha: float) -> float:
    _check_alpha(alpha)
    r = (1.0 / alpha - 1.0) ** 2
    return math.sqrt(2.0 * r + 1.0)


def golden_section_min(f, lo: float, hi: float, tol: float = 1e-8) -> tuple[float, float]:
    """Minimise a unimodal ``f`` on [lo, hi]; returns (argmin, min)."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    # endpoints matter when the minimum sits on the boundary
    cands = [(f(a), a), (f(b), b), (fc, c), (fd, d)]
    val, x = min(cands)
    return x, val


def dro_dual_objective(losses, eta: float, alpha: float) -> float:
    ell = _losses(losses)
    c = dro_constant(alpha)
    return float(c * math.sqrt(np.mean(np.maximum(ell - eta, 0.0) ** 2)) + eta)


def dro_dual_risk(losses, alpha: float, tol: float = 1e-8) -> float:
    """Chi-square-ball DRO risk via its dual, min over eta in [min - 1, max]."""
    ell = _losses(losses)
    c = dro_constant(alpha)

    def f(eta):
        return c * math.sqrt(np.mean(np.maximum(ell - eta, 0.0) ** 2)) + eta

    _, val = golden_section_min(f, float(ell.min()) - 1.0, float(ell.max()), tol)
    return float(val)


def dro_dual_eta(losses, alpha: float, tol: float = 1e-8) -> float:
    ell = _losses(losses)
    c = dro_constant(alpha)
    eta, _ = golden_section_min(
        lambda e: c * math.sqrt(np.mean(np.maximum(ell - e, 0.0) ** 2)) + e,
        float(ell.min()) - 1.0,
        float(ell.max()),
        tol,
    )
    return float(eta)


def dro_weights(losses, alpha: float) -> WeightVector:
    """Gradient weights of the dual at the optimal eta: proportional to [loss - eta]_+.

    When the optimum sits at eta = max loss (small N relative to the ball
    radius) the dual equals the max loss and all mass goes to the maximisers.
    """
    ell = _losses(losses)
    excess = np.maximum(ell - dro_dual_eta(ell, alpha), 0.0)
    total = excess.sum()
    if total <= 0:
        top = (ell == ell.max()).astype(np.float64)
        return WeightVector(top / top.sum(), "simplex")
    return WeightVector(excess / total, "simplex")


@dataclass(frozen=True)
class GroupRisks:
    means: np.ndarray
    worst: float
    worst_group: int


def group_risks(losses, partition: GroupPartition) -> GroupRisks:
    ell = _losses(losses)
    if partition.n_samples != len(ell):
        raise ObjectiveError("partition does not cover the loss vector")
    means = []
    for ix in partition.indices:
        if len(ix) == 0:
            raise ObjectiveError("empty group in partition")
        means.append(ell[ix].mean())
    means = np.array(means)
    k = int(np.argmax(means))
    return GroupRisks(means=means, worst=float(means[k]), worst_group=k)


@dataclass(frozen=True)
class SandwichResult:
    holds: bool
    worst_group: float
    top_alpha: float
    dro: float

    def as_dict(self) -> dict:
        return {
            "holds": self.holds,
            "worst_group": self.worst_group,
            "top_alpha": self.top_alpha,
            "dro": self.dro,
        }


def verify_sandwich(losses, partition: GroupPartition, alpha: float) -> SandwichResult:
    """Check worst-group risk <= top-alpha risk <= DRO risk (tolerances 1e-9 / 1e-6)."""
    _check_alpha(alpha)
    if alpha > partition.min_proportion + 1e-12:
        raise SandwichPreconditionError(
            f"alpha={alpha} exceeds the minimal group proportion "
            f"{partition.min_proportion}; the bound does not apply"
        )
    wg = group_risks(losses, partition).worst
    top = top_alpha_risk(losses, alpha)
    dr = dro_dual_risk(losses, alpha)
    return SandwichResult(holds=wg <= top + 1e-9 and top <= dr + 1e-6, worst_group=wg, top_alpha=top, dro=dr)


def adv_reweight_solve(losses, floor: float, cap: float) -> WeightVector:
    """Maximise sum_i w_i * loss_i over the simplex intersected with [floor, cap]^N.

    Water-filling: everyone starts at the floor, then the remaining mass is
    poured into samples in descending loss order (ties by index), each
    filled up to the cap.
    """
    ell = _losses(losses)
    n = len(ell)
    tol = 1e-12
    if floor < 0 or floor > cap or n * floor > 1 + tol or n * cap < 1 - tol:
        raise ObjectiveError(f"infeasible box [{floor}, {cap}] for N={n}")
    w = np.full(n, float(floor))
    budget = 1.0 - n * floor
    for i in np.argsort(-ell, kind="stable"):
        if budget <= 0:
            break
        add = min(cap - floor, budget)
        w[i] += add
        budget -= add
    return WeightVector(w, "simplex")
