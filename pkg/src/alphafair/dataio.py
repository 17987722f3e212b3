"""Dataset containers, CSV ingestion, synthetic populations and the
randomized-response estimator for the group-ratio prior alpha."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Base class for input problems in this module."""


class MissingFileError(DataError, FileNotFoundError):
    pass


class EmptyFileError(DataError):
    pass


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass
class Dataset:
    """Features with integer labels, plus evaluation-only sensitive columns.

    ``sensitive`` maps a column name to integer codes; ``code_tables`` maps
    ``"label"`` and each sensitive column to the original values, so that
    code ``i`` stands for ``code_tables[name][i]``.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    sensitive: dict[str, np.ndarray] = field(default_factory=dict)
    sample_ids: np.ndarray | None = None
    code_tables: dict[str, list] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise DataError(f"dataset needs N >= 1 and d >= 1, got N={n}, d={d}")
        if self.n_classes < 2:
            raise DataError(f"need at least 2 classes, got {self.n_classes}")
        if self.labels.shape != (n,):
            raise DataError("labels must have one entry per row")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        if self.sample_ids is None:
            self.sample_ids = np.arange(n, dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        if self.sample_ids.shape != (n,) or len(np.unique(self.sample_ids)) != n:
            raise DataError("sample_ids must be unique with one entry per row")
        for name, col in list(self.sensitive.items()):
            col = np.asarray(col, dtype=np.int64)
            if col.shape != (n,):
                raise DataError(f"sensitive column {name!r} must have {n} entries")
            if col.min() < 0:
                raise DataError(f"sensitive column {name!r} has negative codes")
            table = self.code_tables.get(name)
            if table is not None and col.max() >= len(table):
                raise DataError(f"sensitive column {name!r} has codes outside its table")
            self.sensitive[name] = col

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        """Rows selected by ``index`` (boolean mask or positions); ids are kept."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Dataset(
            features=self.features[index],
            labels=self.labels[index],
            n_classes=self.n_classes,
            sensitive={k: v[index] for k, v in self.sensitive.items()},
            sample_ids=self.sample_ids[index],
            code_tables=self.code_tables,
        )

    def split(self, fraction: float, rng: np.random.Generator) -> tuple["Dataset", "Dataset"]:
        """Random (first, second) split with ``fraction`` of rows in the first part."""
        perm = rng.permutation(len(self))
        cut = int(round(fraction * len(self)))
        return self.subset(np.sort(perm[:cut])), self.subset(np.sort(perm[cut:]))


@dataclass(frozen=True)
class GroupPartition:
    attributes: tuple[str, ...]
    codes: tuple[tuple[int, ...], ...]
    indices: tuple[np.ndarray, ...]
    n_samples: int

    def __post_init__(self):
        if not self.indices:
            raise DataError("partition has no groups")
        allidx = np.concatenate(self.indices)
        if len(allidx) != self.n_samples or len(np.unique(allidx)) != self.n_samples:
            raise DataError("partition index sets must be a disjoint cover")

    @property
    def proportions(self) -> np.ndarray:
        return np.array([len(ix) for ix in self.indices], dtype=np.float64) / self.n_samples

    @property
    def min_proportion(self) -> float:
        return float(self.proportions.min())

    def __len__(self) -> int:
        return len(self.indices)

    def group_ids(self) -> np.ndarray:
        """Per-sample group position (0..K-1) in this partition's order."""
        out = np.empty(self.n_samples, dtype=np.int64)
        for k, ix in enumerate(self.indices):
            out[ix] = k
        return out

    @classmethod
    def from_group_ids(cls, group_ids: Sequence[int], name: str = "group") -> "GroupPartition":
        g = np.asarray(group_ids, dtype=np.int64)
        codes = np.unique(g)
        return cls(
            attributes=(name,),
            codes=tuple((int(c),) for c in codes),
            indices=tuple(np.flatnonzero(g == c) for c in codes),
            n_samples=len(g),
        )


@dataclass(frozen=True)
class SurveyReport:
    """Binary randomized-response answers; 1 means the protected-group answer."""

    reports: np.ndarray
    p1: float = 0.5
    p2: float = 0.5

    def __post_init__(self):
        r = np.asarray(self.reports)
        if r.ndim != 1 or len(r) < 1:
            raise DataError("survey needs at least one report")
        if not np.all((r == 0) | (r == 1)):
            raise DataError("reports must be 0/1")
        for name, p in (("p1", self.p1), ("p2", self.p2)):
            if not 0.0 < p < 1.0:
                raise DataError(f"{name} must lie in (0, 1), got {p}")
        object.__setattr__(self, "reports", r.astype(np.int8))


@dataclass(frozen=True)
class Schema:
    label: str
    features: tuple[str, ...] | None = None
    sensitive: tuple[str, ...] = ()


def load_csv(path, schema: Schema, code_tables: dict[str, list[str]] | None = None) -> Dataset:
    """Read a header-row CSV into a Dataset.

    Features are parsed as floats; the label and sensitive columns are
    integer-coded in first-appearance order. When ``schema.features`` is
    None every column that is neither label nor sensitive is a feature.
    Passing ``code_tables`` (e.g. from the training file) reuses that coding
    so separately loaded splits agree; a value missing from it is an error.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise EmptyFileError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise EmptyFileError(f"{path}: header but no data rows")

    if schema.features is None:
        feat_names = [h for h in header if h != schema.label and h not in schema.sensitive]
    else:
        feat_names = list(schema.features)
    if not feat_names:
        raise SchemaError("schema names no feature columns")
    for name in [schema.label, *feat_names, *schema.sensitive]:
        if name not in header:
            raise SchemaError(f"unknown column {name!r}; header has {header}")
    pos = {h: i for i, h in enumerate(header)}

    features = np.empty((len(body), len(feat_names)))
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise ParseError(f"row {r + 2}: expected {len(header)} cells, got {len(row)}", row=r + 2)
        for j, name in enumerate(feat_names):
            cell = row[pos[name]].strip()
            try:
                features[r, j] = float(cell)
            except ValueError:
                raise ParseError(
                    f"row {r + 2}, column {name!r}: non-numeric feature value {cell!r}",
                    row=r + 2,
                    column=name,
                ) from None

    def encode(name, key):
        fixed = code_tables is not None and key in code_tables
        table = {v: i for i, v in enumerate(code_tables[key])} if fixed else {}
        codes = np.empty(len(body), dtype=np.int64)
        for r, row in enumerate(body):
            value = row[pos[name]].strip()
            if fixed and value not in table:
                raise ParseError(
                    f"row {r + 2}, column {name!r}: value {value!r} not in the supplied coding",
                    row=r + 2,
                    column=name,
                )
            codes[r] = table.setdefault(value, len(table))
        return codes, list(table)

    labels, label_table = encode(schema.label, "label")
    sensitive, tables = {}, {"label": label_table}
    for name in schema.sensitive:
        sensitive[name], tables[name] = encode(name, name)
    return Dataset(
        features=features,
        labels=labels,
        n_classes=max(2, len(label_table)),
        sensitive=sensitive,
        code_tables=tables,
    )


def save_csv(dataset: Dataset, path) -> None:
    """Write features as f0..f{d-1}, then label and sensitive code columns."""
    names = [f"f{j}" for j in range(dataset.n_features)]
    sens = list(dataset.sensitive)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*names, "label", *sens])
        for i in range(len(dataset)):
            w.writerow(
                [repr(float(v)) for v in dataset.features[i]]
                + [int(dataset.labels[i])]
                + [int(dataset.sensitive[s][i]) for s in sens]
            )


@dataclass(frozen=True)
class SynthSpec:
    """Class-conditional Gaussian groups plus optional planted outliers.

    ``means`` has shape (K, C, d) and ``stds`` shape (K, C, d) or (K,) for a
    shared isotropic scale per group. ``class_probs`` (K, C) defaults to
    balanced classes. Outliers are spread over groups in proportion to
    their sizes; each is placed ``displacement`` group-sigmas away from a
    class mean in a random direction and receives a different label.
    """

    sizes: tuple[int, ...]
    means: np.ndarray
    stds: np.ndarray
    class_probs: np.ndarray | None = None
    n_outliers: int = 0
    displacement: float = 10.0
    seed: int = 0


def synthesize(spec: SynthSpec) -> Dataset:
    means = np.asarray(spec.means, dtype=np.float64)
    if means.ndim != 3:
        raise DataError("means must have shape (K, C, d)")
    k_groups, n_classes, d = means.shape
    if k_groups < 1:
        raise DataError("need K >= 1 groups")
    if len(spec.sizes) != k_groups or min(spec.sizes) < 1:
        raise DataError("need one size >= 1 per group")
    stds = np.asarray(spec.stds, dtype=np.float64)
    if stds.ndim == 1:
        stds = np.broadcast_to(stds[:, None, None], means.shape)
    if stds.shape != means.shape:
        raise DataError("stds must have shape (K,) or (K, C, d)")
    if not np.all(np.isfinite(stds)) or np.any(stds <= 0):
        raise DataError("degenerate covariance: every std must be positive")
    probs = (
        np.full((k_groups, n_classes), 1.0 / n_classes)
        if spec.class_probs is None
        else np.asarray(spec.class_probs, dtype=np.float64)
    )

    rng = np.random.default_rng(spec.seed)
    xs, ys, gs = [], [], []
    for k, n in enumerate(spec.sizes):
        y = rng.choice(n_classes, size=n, p=probs[k])
        x = means[k, y] + rng.standard_normal((n, d)) * stds[k, y]
        xs.append(x), ys.append(y), gs.append(np.full(n, k))
    x, y, g = np.concatenate(xs), np.concatenate(ys), np.concatenate(gs)
    flag = np.zeros(len(y), dtype=np.int64)

    if spec.n_outliers > 0:
        share = np.asarray(spec.sizes, dtype=np.float64) / sum(spec.sizes)
        per_group = np.floor(share * spec.n_outliers).astype(int)
        for k in np.argsort(-(share * spec.n_outliers - per_group), kind="stable")[
            : spec.n_outliers - per_group.sum()
        ]:
            per_group[k] += 1
        ox, oy, og = [], [], []
        for k, n in enumerate(per_group):
            if n == 0:
                continue
            c = rng.choice(n_classes, size=n, p=probs[k])
            u = rng.standard_normal((n, d))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            sigma = stds[k].max()
            ox.append(means[k, c] + spec.displacement * sigma * u)
            oy.append((c + rng.integers(1, n_classes, size=n)) % n_classes)
            og.append(np.full(n, k))
        x = np.concatenate([x, *ox])
        y = np.concatenate([y, *oy])
        g = np.concatenate([g, *og])
        flag = np.concatenate([flag, np.ones(spec.n_outliers, dtype=np.int64)])

    return Dataset(
        features=x,
        labels=y,
        n_classes=n_classes,
        sensitive={"group": g, "is_outlier": flag},
        code_tables={
            "label": list(range(n_classes)),
            "group": list(range(k_groups)),
            "is_outlier": [0, 1],
        },
    )


def two_group_fixture(
    n: int = 2000,
    minority_frac: float = 0.1,
    outlier_frac: float = 0.0,
    seed: int = 0,
    d: int = 5,
    separation: float = 3.5,
    angle: float = 90.0,
    minority_std: float = 1.2,
    displacement: float = 10.0,
) -> Dataset:
    """Binary task where the two groups want different decision directions.

    Each group's classes sit at +/- ``separation`` along a group-specific unit
    direction in the first two coordinates; the minority's direction is
    rotated by ``angle`` degrees and its noise is larger. Remaining
    coordinates are pure noise. A loss-blind fit follows the majority.
    """
    if d < 2:
        raise DataError("the two-group fixture needs d >= 2 feature columns")
    n_min = max(1, int(round(n * minority_frac)))
    n_maj = n - n_min
    phi = math.radians(angle)
    means = np.zeros((2, 2, d))
    for k, u in enumerate([(1.0, 0.0), (math.cos(phi), math.sin(phi))]):
        means[k, 1, :2] = separation * np.array(u)
        means[k, 0, :2] = -separation * np.array(u)
    stds = np.ones((2, 2, d))
    stds[1] *= minority_std
    return synthesize(
        SynthSpec(
            sizes=(n_maj, n_min),
            means=means,
            stds=stds,
            n_outliers=int(round(n * outlier_frac)),
            displacement=displacement,
            seed=seed,
        )
    )


def partition_by(dataset: Dataset, attributes: str | Sequence[str]) -> GroupPartition:
    """One group per observed combination of codes of ``attributes``."""
    if isinstance(attributes, str):
        attributes = [attributes]
    attributes = tuple(attributes)
    if not attributes:
        raise SchemaError("partition_by needs at least one attribute")
    for a in attributes:
        if a not in dataset.sensitive:
            raise SchemaError(f"unknown sensitive attribute {a!r}; have {sorted(dataset.sensitive)}")
    keys = np.stack([dataset.sensitive[a] for a in attributes], axis=1)
    combos, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    return GroupPartition(
        attributes=attributes,
        codes=tuple(tuple(int(v) for v in c) for c in combos),
        indices=tuple(np.flatnonzero(inverse == k) for k in range(len(combos))),
        n_samples=len(dataset),
    )


def binarize(codes, protected) -> np.ndarray:
    """Protected-vs-rest indicator for a multi-valued attribute."""
    return np.isin(np.asarray(codes), np.atleast_1d(protected)).astype(np.int8)


def rr_encode(true_attr, rng: np.random.Generator, p1: float = 0.5, p2: float = 0.5):
    """Two-coin randomized response.

    With probability ``1 - p1`` the true bit is reported; otherwise the
    answer is 1 with probability ``p2`` regardless of the truth. Works on
    scalars and arrays.
    """
    t = np.asarray(true_attr, dtype=np.int8)
    randomize = rng.random(t.shape) < p1
    coin = (rng.random(t.shape) < p2).astype(np.int8)
    out = np.where(randomize, coin, t)
    return int(out) if out.ndim == 0 else out


def rr_probability(report: int, attr: int, p1: float = 0.5, p2: float = 0.5) -> float:
    """P(report | attr) under rr_encode."""
    p_one = (1.0 - p1) * attr + p1 * p2
    return p_one if report == 1 else 1.0 - p_one


def rr_privacy_ratio(p1: float = 0.5, p2: float = 0.5) -> float:
    """Worst-case likelihood ratio over reports; epsilon is its log."""
    ratios = []
    for r in (0, 1):
        ps = [rr_probability(r, a, p1, p2) for a in (0, 1)]
        ratios.append(max(ps) / min(ps))
    return max(ratios)


def estimate_alpha(reports: SurveyReport) -> float:
    """Invert the mechanism: beta = (1-p1)*alpha + p1*p2, clamped to [0, 1]."""
    if reports.p1 >= 1.0:
        raise DataError("p1 = 1 makes the mechanism non-invertible")
    beta = float(np.mean(reports.reports))
    return float(np.clip((beta - reports.p1 * reports.p2) / (1.0 - reports.p1), 0.0, 1.0))


def alpha_interval(reports: SurveyReport, z: float = 1.96) -> tuple[float, float]:
    """Normal-approximation interval for alpha, clamped to [0, 1]."""
    m = len(reports.reports)
    beta = float(np.mean(reports.reports))
    half = z * math.sqrt(max(beta * (1 - beta), 0.0) / m) / (1.0 - reports.p1)
    centre = (beta - reports.p1 * reports.p2) / (1.0 - reports.p1)
    return float(np.clip(centre - half, 0, 1)), float(np.clip(centre + half, 0, 1))


def simulate_survey(
    true_alpha: float, m: int, seed: int, p1: float = 0.5, p2: float = 0.5
) -> SurveyReport:
    """Draw ``m`` participants with protected share ``true_alpha`` and encode them."""
    rng = np.random.default_rng(seed)
    truth = (rng.random(m) < true_alpha).astype(np.int8)
    return SurveyReport(rr_encode(truth, rng, p1, p2), p1, p2)


def read_reports(path, p1: float = 0.5, p2: float = 0.5) -> SurveyReport:
    """Newline-delimited 0/1 file; blank lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"no such file: {path}")
    values = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s not in ("0", "1"):
                raise ParseError(f"line {lineno}: expected 0 or 1, got {s!r}", row=lineno)
            values.append(int(s))
    if not values:
        raise EmptyFileError(f"{path}: no reports")
    return SurveyReport(np.array(values), p1, p2)


def write_reports(reports: SurveyReport, path) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in reports.reports), encoding="utf-8")
