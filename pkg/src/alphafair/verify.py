"""Randomised property sweeps behind ``alphafair verify``.

Each sweep draws seeded random instances, checks one property per instance
and returns a :class:`SuiteResult`. The acceptance tests call the same
functions, so the CLI and the test suite always agree on what "pass" means.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .dataio import GroupPartition
from .model import Layout, Model, forward_losses, per_sample_gradients, weighted_gradient
from .objective import WeightVector, adv_reweight_solve, verify_sandwich
from .trainer import variance_compare

MAX_FAILURES_SHOWN = 5


@dataclass
class SuiteResult:
    suite: str
    trials: int
    passed: int
    failures: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.passed == self.trials

    def record_failure(self, info: dict) -> None:
        if len(self.failures) < MAX_FAILURES_SHOWN:
            self.failures.append(info)

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "trials": self.trials,
            "passed": self.passed,
            "ok": self.ok,
            "failures": self.failures,
            **self.extra,
        }


def random_partition(rng: np.random.Generator, n: int, k: int) -> GroupPartition:
    """Random K-group cover of n samples with every group nonempty."""
    cuts = np.sort(rng.choice(np.arange(1, n), size=k - 1, replace=False)) if k > 1 else np.array([], int)
    sizes = np.diff(np.concatenate([[0], cuts, [n]]))
    ids = rng.permutation(np.repeat(np.arange(k), sizes))
    return GroupPartition.from_group_ids(ids)


def sweep_sandwich(trials: int = 200, seed: int = 0, max_n: int = 500, max_k: int = 5) -> SuiteResult:
    """worst-group <= top-alpha <= DRO on random losses and partitions, for any valid alpha."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("sandwich", trials, 0)
    for t in range(trials):
        k = int(rng.integers(1, max_k + 1))
        n = int(rng.integers(max(k, 2), max_n + 1))
        part = random_partition(rng, n, k)
        shift = rng.normal(0.0, 1.0, size=k)[part.group_ids()]
        losses = rng.exponential(1.0, size=n) + np.maximum(shift, 0.0)
        alpha = part.min_proportion * float(rng.uniform(0.05, 1.0))
        out = verify_sandwich(losses, part, alpha)
        if out.holds:
            res.passed += 1
        else:
            res.record_failure({"trial": t, "n": n, "k": k, "alpha": alpha, **out.as_dict()})
    return res


def _vertex_oracle(losses: np.ndarray, floor: float, cap: float) -> float:
    """Max of w . loss over the box-simplex by enumerating its vertices.

    A vertex has every coordinate but at most one at a bound, so trying all
    bound patterns for N - 1 coordinates and solving for the last is exhaustive.
    """
    n = len(losses)
    best = -np.inf
    for free in range(n):
        others = [i for i in range(n) if i != free]
        for pattern in itertools.product((floor, cap), repeat=n - 1):
            w = np.empty(n)
            w[others] = pattern
            w[free] = 1.0 - sum(pattern)
            if floor - 1e-12 <= w[free] <= cap + 1e-12:
                best = max(best, float(w @ losses))
    return best


def _monotone_ok(losses: np.ndarray, w: np.ndarray, floor: float, cap: float, tol: float = 1e-12) -> bool:
    order = np.argsort(-losses, kind="stable")
    ws, ls = w[order], losses[order]
    for a, b, la, lb in zip(ws[:-1], ws[1:], ls[:-1], ls[1:]):
        if a < b - tol:
            return False
        if la > lb and abs(a - b) <= tol:
            pinned = abs(a - floor) <= tol or abs(a - cap) <= tol
            if not pinned:
                return False
    return True


def sweep_monotone(trials: int = 200, seed: int = 0, max_n: int = 100, oracle_trials: int = 50) -> SuiteResult:
    """Water-filling weights are nonincreasing in loss rank, strictly so off the
    floor/cap pins; small instances are checked against a vertex-enumeration oracle."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("monotone", trials + oracle_trials, 0)
    for t in range(trials):
        n = int(rng.integers(1, max_n + 1))
        floor = float(rng.uniform(0.0, 1.0 / n))
        cap = float(rng.uniform(1.0 / n, 1.0))
        losses = rng.exponential(1.0, size=n)
        if rng.random() < 0.2:
            losses = np.round(losses, 1)  # exercise ties
        w = adv_reweight_solve(losses, floor, cap).weights
        if _monotone_ok(losses, w, floor, cap):
            res.passed += 1
        else:
            res.record_failure({"trial": t, "n": n, "floor": floor, "cap": cap})
    worst_gap = 0.0
    for t in range(oracle_trials):
        n = int(rng.integers(1, 7))
        floor = float(rng.uniform(0.0, 1.0 / n))
        cap = float(rng.uniform(1.0 / n, 1.0))
        losses = rng.exponential(1.0, size=n)
        got = float(adv_reweight_solve(losses, floor, cap).weights @ losses)
        gap = abs(got - _vertex_oracle(losses, floor, cap))
        worst_gap = max(worst_gap, gap)
        if gap <= 1e-8:
            res.passed += 1
        else:
            res.record_failure({"oracle_trial": t, "n": n, "gap": gap})
    res.extra["oracle_max_gap"] = worst_gap
    return res


def sweep_variance(trials: int = 1000, seed: int = 0, max_n: int = 50, max_p: int = 20) -> SuiteResult:
    """sigma_w^2 >= sigma_s^2 on random simplex weights and gradient matrices,
    plus equality at uniform weights."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("variance", trials, 0)
    uniform_gap = 0.0
    for t in range(trials):
        n = int(rng.integers(2, max_n + 1))
        p = int(rng.integers(1, max_p + 1))
        w = rng.dirichlet(np.ones(n))
        g = rng.normal(size=(n, p))
        sw, ss = variance_compare(WeightVector(w, "simplex"), g)
        if sw >= ss - 1e-12:
            res.passed += 1
        else:
            res.record_failure({"trial": t, "n": n, "p": p, "sigma_w2": sw, "sigma_s2": ss})
        su_w, su_s = variance_compare(WeightVector(np.full(n, 1.0 / n), "simplex"), g)
        uniform_gap = max(uniform_gap, abs(su_w - su_s) / max(1.0, abs(su_s)))
    res.extra["uniform_max_rel_gap"] = uniform_gap
    res.extra["uniform_equal"] = uniform_gap <= 1e-12
    if not res.extra["uniform_equal"]:
        res.passed = min(res.passed, trials - 1)
    return res


def _fd_gradient(model: Model, x: np.ndarray, y: np.ndarray, h: float) -> np.ndarray:
    base = np.array(model.params)
    out = np.empty_like(base)
    for j in range(len(base)):
        up, down = base.copy(), base.copy()
        up[j] += h
        down[j] -= h
        lu = forward_losses(Model(up, model.layout), x, y)[0]
        ld = forward_losses(Model(down, model.layout), x, y)[0]
        out[j] = (lu - ld) / (2.0 * h)
    return out


def sweep_gradients(trials: int = 100, seed: int = 0, h: float = 1e-5, rtol: float = 1e-4) -> SuiteResult:
    """Per-sample gradients vs central differences for both architectures, and
    the mean of per-sample rows vs the batch gradient."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("gradients", 2 * trials, 0)
    worst_rel, worst_mean = 0.0, 0.0
    for arch, hidden in (("linear", 0), ("mlp", 4)):
        for t in range(trials):
            d = int(rng.integers(1, 6))
            c = int(rng.integers(2, 5))
            lay = Layout(d, c, hidden)
            model = Model(rng.normal(0.0, 0.5, size=lay.n_params), lay)
            x = rng.normal(size=(8, d))
            y = rng.integers(0, c, size=8)
            g = per_sample_gradients(model, x, y)
            fd = _fd_gradient(model, x[:1], y[:1], h)
            rel = float(np.linalg.norm(g[0] - fd) / max(np.linalg.norm(fd), np.linalg.norm(g[0]), 1e-8))
            mean_gap = float(np.abs(g.mean(axis=0) - weighted_gradient(model, x, y)).max())
            worst_rel, worst_mean = max(worst_rel, rel), max(worst_mean, mean_gap)
            if rel <= rtol and mean_gap <= 1e-10:
                res.passed += 1
            else:
                res.record_failure({"arch": arch, "trial": t, "rel_error": rel, "mean_gap": mean_gap})
    res.extra.update(max_rel_error=worst_rel, max_mean_gap=worst_mean)
    return res


SUITES = {
    "sandwich": sweep_sandwich,
    "monotone": sweep_monotone,
    "variance": sweep_variance,
    "gradients": sweep_gradients,
}


def run_suite(name: str, trials: int | None = None, seed: int = 0) -> SuiteResult:
    fn = SUITES[name]
    return fn(seed=seed) if trials is None else fn(trials=trials, seed=seed)
