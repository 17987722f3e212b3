"""Gradient-space outlier detection.

Per-sample gradients are centred, turned into a cosine-distance matrix,
and each row of that matrix is used as the sample's representation for
DBSCAN. Points labelled -1 are removed from the training set.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .dataio import Dataset
from .model import Model, per_sample_gradients

ZERO_NORM = 1e-12


class OutlierError(ValueError):
    pass


@dataclass(frozen=True)
class DistanceMatrix:
    matrix: np.ndarray
    sample_ids: np.ndarray | None = None


@dataclass(frozen=True)
class ClusterLabels:
    labels: np.ndarray
    eps: float
    min_pts: int
    sample_ids: np.ndarray | None = None

    @property
    def outliers(self) -> np.ndarray:
        return np.flatnonzero(self.labels == -1)

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


def decentralize(grads: np.ndarray) -> np.ndarray:
    g = np.asarray(grads, dtype=np.float64)
    if g.ndim != 2 or len(g) < 1:
        raise OutlierError("need a nonempty N x P gradient matrix")
    return g - g.mean(axis=0)


def cosine_distance_matrix(centred: np.ndarray, sample_ids=None) -> DistanceMatrix:
    """1 - cosine similarity; zero-norm rows sit at distance 1 from everyone else."""
    g = np.asarray(centred, dtype=np.float64)
    norms = np.linalg.norm(g, axis=1)
    ok = norms >= ZERO_NORM
    unit = np.zeros_like(g)
    unit[ok] = g[ok] / norms[ok, None]
    m = 1.0 - unit @ unit.T
    m[~ok, :] = 1.0
    m[:, ~ok] = 1.0
    m = np.clip(0.5 * (m + m.T), 0.0, 2.0)
    np.fill_diagonal(m, 0.0)
    return DistanceMatrix(m, None if sample_ids is None else np.asarray(sample_ids))


def pairwise_euclidean(rep: np.ndarray) -> np.ndarray:
    rep = np.asarray(rep, dtype=np.float64)
    sq = np.einsum("ij,ij->i", rep, rep)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (rep @ rep.T)
    d2 = np.maximum(0.5 * (d2 + d2.T), 0.0)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def default_eps(dist: np.ndarray, min_pts: int = 5, percentile: float = 90.0) -> float:
    """Percentile of each point's min_pts-th neighbour distance (the point itself counts)."""
    n = len(dist)
    k = min(min_pts, n) - 1
    kdist = np.partition(dist, k, axis=1)[:, k]
    eps = float(np.percentile(kdist, percentile))
    return eps if eps > 0 else float(np.finfo(float).tiny)


def dbscan(representations: np.ndarray, eps: float, min_pts: int = 5, dist: np.ndarray | None = None,
           sample_ids=None) -> ClusterLabels:
    """Plain DBSCAN with Euclidean distance over the rows of ``representations``.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Points are scanned in input order, so cluster ids follow
    the order in which their first core point appears.
    """
    if not eps > 0:
        raise OutlierError("eps must be positive")
    if min_pts < 1:
        raise OutlierError("min_pts must be >= 1")
    if dist is None:
        dist = pairwise_euclidean(representations)
    n = len(dist)
    neigh = [np.flatnonzero(row <= eps) for row in dist]
    core = np.array([len(nb) >= min_pts for nb in neigh], dtype=bool)
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for p in range(n):
        if labels[p] != -1 or not core[p]:
            continue
        labels[p] = cluster
        queue = deque(neigh[p])
        while queue:
            q = queue.popleft()
            if labels[q] != -1:
                continue
            labels[q] = cluster
            if core[q]:
                queue.extend(neigh[q])
        cluster += 1
    return ClusterLabels(labels, float(eps), int(min_pts), None if sample_ids is None else np.asarray(sample_ids))


def detect_outliers(model: Model, dataset: Dataset, eps: float | None = None, min_pts: int = 5,
                    which: str = "full", percentile: float = 90.0) -> ClusterLabels:
    """Full-set pass: gradients, centring, cosine distances, DBSCAN on the rows."""
    grads = per_sample_gradients(model, dataset.features, dataset.labels, which=which)
    m = cosine_distance_matrix(decentralize(grads), dataset.sample_ids)
    dist = pairwise_euclidean(m.matrix)
    if eps is None:
        eps = default_eps(dist, min_pts, percentile)
    return dbscan(m.matrix, eps, min_pts, dist=dist, sample_ids=dataset.sample_ids)


def remove_outliers(dataset: Dataset, labels: ClusterLabels) -> Dataset:
    if len(labels.labels) != len(dataset):
        raise OutlierError("labels are not aligned with the dataset")
    if labels.sample_ids is not None and not np.array_equal(labels.sample_ids, dataset.sample_ids):
        raise OutlierError("label sample_ids do not match the dataset")
    keep = labels.labels != -1
    if not keep.any():
        raise OutlierError("every sample was flagged as an outlier; refusing to empty the training set")
    if keep.all():
        return dataset
    return dataset.subset(keep)
