"""Synthetic benchmark generators, CSV ingestion, and the cluster shift split.

Both generators create a covariate-shifted train/test pair: the regression
task trains on a subrange and tests beyond it, the classification task trains
with a gap in the middle of the covariate law.  For tabular files the shift
is manufactured instead, by clustering the covariates and sending most of the
high-spread cluster to train and most of the low-spread cluster to test.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import TASK_CLASSIFICATION, TASK_REGRESSION, Dataset
from .rngs import SeedTree


def gen_hetero_linear(
    a: float = 0.5,
    b: float = 1.0,
    slope: float = 1.0,
    n_train: int = 500,
    n_test: int = 500,
    seed: int = 0,
) -> tuple[Dataset, Dataset]:
    """Linear outcome with noise variance growing as x/10; test range extends train's.

    Train covariates are U[0, a], test covariates U[0, b] with a < b.  The
    noiseless mean is kept in y_mean so scoring can separate estimation error
    from irreducible noise.
    """
    if not 0.0 < a < b:
        raise ValueError(f"need 0 < a < b, got a={a}, b={b}")
    if n_train < 1 or n_test < 1:
        raise ValueError("sample counts must be positive")
    root = SeedTree(seed)

    def draw(n, hi, rng):
        x = rng.uniform(0.0, hi, size=n)
        y = slope * x + np.sqrt(x / 10.0) * rng.standard_normal(n)
        return Dataset(x=x, y=y, task=TASK_REGRESSION, y_mean=slope * x)

    train = draw(n_train, a, root.child("train").generator())
    test = draw(n_test, b, root.child("test").generator())
    return train, test


def _arcsine_sample(n: int, rng: np.random.Generator) -> np.ndarray:
    # inverse CDF of Beta(1/2, 1/2): x = sin^2(pi u / 2)
    return np.sin(0.5 * math.pi * rng.uniform(size=n)) ** 2


def _gap_logit(x: np.ndarray) -> np.ndarray:
    return -5.0 + 10.0 * x


def gen_logistic_gap(
    gap: float = 0.3,
    n_train: int = 500,
    n_test: int = 500,
    seed: int = 0,
) -> tuple[Dataset, Dataset]:
    """Arcsine-law covariates, Bernoulli outcome, train gap over (gap, 1-gap).

    Training covariates falling strictly inside the gap are rejected and
    resampled so the train size stays exactly n_train; the test set keeps the
    full covariate law.
    """
    if not 0.0 < gap < 0.5:
        raise ValueError(f"gap must lie in (0, 0.5), got {gap}")
    if n_train < 1 or n_test < 1:
        raise ValueError("sample counts must be positive")
    root = SeedTree(seed)

    rng = root.child("train").generator()
    kept = []
    n_kept = 0
    while n_kept < n_train:
        x = _arcsine_sample(max(n_train, 64), rng)
        x = x[(x <= gap) | (x >= 1.0 - gap)]
        kept.append(x)
        n_kept += x.size
    x_train = np.concatenate(kept)[:n_train]
    p_train = 1.0 / (1.0 + np.exp(-_gap_logit(x_train)))
    y_train = (rng.uniform(size=n_train) < p_train).astype(np.float64)

    rng = root.child("test").generator()
    x_test = _arcsine_sample(n_test, rng)
    p_test = 1.0 / (1.0 + np.exp(-_gap_logit(x_test)))
    y_test = (rng.uniform(size=n_test) < p_test).astype(np.float64)

    train = Dataset(x=x_train, y=y_train, task=TASK_CLASSIFICATION)
    test = Dataset(x=x_test, y=y_test, task=TASK_CLASSIFICATION)
    return train, test


def save_dataset_csv(data: Dataset, path, feature_names: list[str] | None = None) -> None:
    """Header row, '.' decimals, repr floats so a reload is bit-exact."""
    if feature_names is None:
        feature_names = [f"x{j + 1}" for j in range(data.width)]
    if len(feature_names) != data.width:
        raise ValueError(f"need {data.width} feature names, got {len(feature_names)}")
    header = list(feature_names) + ["y"]
    if data.y_mean is not None:
        header.append("y_mean")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.x[i]] + [repr(float(data.y[i]))]
            if data.y_mean is not None:
                row.append(repr(float(data.y_mean[i])))
            writer.writerow(row)


def load_csv(path, target: str, task: str = TASK_REGRESSION) -> Dataset:
    """Read a headered CSV into a Dataset, taking `target` as the outcome.

    Column typing is sniffed from the first data row: columns whose first cell
    is not numeric are dropped with a warning, and a non-numeric cell later in
    a numeric column is a parse error naming the row.  A y_mean column, when
    present, rides along as the noiseless-mean channel rather than a covariate.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    if target not in header:
        raise ValueError(f"{path}: no column named {target!r}")
    if not rows:
        raise ValueError(f"{path}: no data rows")

    def is_num(cell):
        try:
            float(cell)
            return True
        except ValueError:
            return False

    numeric_cols = []
    for j, name in enumerate(header):
        if is_num(rows[0][j]):
            numeric_cols.append(j)
        else:
            if name == target:
                raise ValueError(f"{path}: target column {target!r} is not numeric")
            warnings.warn(f"{path}: dropping non-numeric column {name!r}")

    parsed = np.empty((len(rows), len(numeric_cols)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(row)} cells, header has {len(header)}")
        for out_j, j in enumerate(numeric_cols):
            if not is_num(row[j]):
                raise ValueError(f"{path}: row {i + 2}, column {header[j]!r}: non-numeric cell {row[j]!r}")
            parsed[i, out_j] = float(row[j])

    names = [header[j] for j in numeric_cols]
    y = parsed[:, names.index(target)]
    y_mean = parsed[:, names.index("y_mean")] if "y_mean" in names and target != "y_mean" else None
    keep = [i for i, n in enumerate(names) if n != target and n != "y_mean"]
    return Dataset(x=parsed[:, keep], y=y, task=task, y_mean=y_mean)


class EmptyClusterError(RuntimeError):
    pass


def lloyd_kmeans(
    points: np.ndarray,
    n_clusters: int,
    rng: np.random.Generator,
    max_iter: int = 100,
    max_reseeds: int = 10,
) -> tuple[np.ndarray, np.ndarray]:
    """Plain Lloyd iteration with distance-weighted seeding.

    Assignment ties break to the lowest centroid index.  A cluster left empty
    after an update restarts the whole run with fresh seeds, up to max_reseeds
    attempts, then raises EmptyClusterError.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be (N, d)")
    n = points.shape[0]
    if n_clusters < 1 or n < n_clusters:
        raise ValueError(f"need 1 <= n_clusters <= {n}, got {n_clusters}")

    for _ in range(max_reseeds):
        centroids = _seed_centroids(points, n_clusters, rng)
        labels = None
        empty = False
        for _ in range(max_iter):
            d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            new_labels = np.argmin(d2, axis=1)
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            counts = np.bincount(labels, minlength=n_clusters)
            if np.any(counts == 0):
                empty = True
                break
            for c in range(n_clusters):
                centroids[c] = points[labels == c].mean(axis=0)
        if not empty:
            return labels, centroids
    raise EmptyClusterError(f"kmeans produced an empty cluster in {max_reseeds} straight attempts")


def _seed_centroids(points: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    for _ in range(1, n_clusters):
        d2 = ((points[:, None, :] - points[chosen][None, :, :]) ** 2).sum(axis=2).min(axis=1)
        total = d2.sum()
        if total == 0.0:
            chosen.append(int(rng.integers(n)))
        else:
            chosen.append(int(rng.choice(n, p=d2 / total)))
    return points[chosen].astype(np.float64).copy()


@dataclass
class SplitSpec:
    n_clusters: int = 2
    train_majority_ratio: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 2:
            raise ValueError("need at least 2 clusters for a shift split")
        if not 0.5 < self.train_majority_ratio <= 1.0:
            raise ValueError(f"ratio must lie in (0.5, 1], got {self.train_majority_ratio}")


@dataclass
class SplitIndices:
    train_rows: np.ndarray
    test_rows: np.ndarray
    high_spread_cluster: int
    labels: np.ndarray


def kmeans_shift_split_indices(data: Dataset, spec: SplitSpec) -> SplitIndices:
    """Row allocation for the shift split; see kmeans_shift_split.

    With more than two clusters the highest-spread one is the train majority
    and everything else pools as the minority.  Equal train/test sizes, each
    bounded by the smaller pool so sampling stays without replacement.
    """
    if data.n < 2 * spec.n_clusters:
        raise ValueError(f"need at least {2 * spec.n_clusters} rows, got {data.n}")
    root = SeedTree(spec.seed)
    labels, centroids = lloyd_kmeans(data.x, spec.n_clusters, root.child("kmeans").generator())
    spread = np.array(
        [np.linalg.norm(data.x[labels == c] - centroids[c], axis=1).mean() for c in range(spec.n_clusters)]
    )
    high = int(np.argmax(spread))
    high_rows = np.flatnonzero(labels == high)
    low_rows = np.flatnonzero(labels != high)

    # Equal-size train/test; each cluster pool contributes exactly `size` rows
    # split between the two sides, so the smaller pool caps the size.
    size = int(min(high_rows.size, low_rows.size))
    n_major = int(round(spec.train_majority_ratio * size))
    n_minor = size - n_major
    rng = root.child("draw").generator()
    high_perm = rng.permutation(high_rows)
    low_perm = rng.permutation(low_rows)
    train_rows = np.concatenate([high_perm[:n_major], low_perm[:n_minor]])
    test_rows = np.concatenate([high_perm[n_major:size], low_perm[n_minor:size]])
    return SplitIndices(np.sort(train_rows), np.sort(test_rows), high, labels)


def kmeans_shift_split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Cluster covariates, train mostly on the high-spread cluster, test reversed.

    The train set draws train_majority_ratio of its rows from the cluster with
    the larger mean point-to-centroid distance, the test set the mirror image.
    """
    idx = kmeans_shift_split_indices(data, spec)
    return data.subset(idx.train_rows), data.subset(idx.test_rows)


@dataclass
class StandardizeRecord:
    """Per-column shift/scale for covariates and target, invertible."""

    x_median: np.ndarray
    x_scale: np.ndarray
    y_median: float
    y_scale: float

    def apply_x(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.x_median) / self.x_scale

    def invert_x(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.x_scale + self.x_median

    def apply_y(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.y_median) / self.y_scale

    def invert_y(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.y_scale + self.y_median

    def invert_y_scale(self, spread: np.ndarray) -> np.ndarray:
        return np.asarray(spread, dtype=np.float64) * self.y_scale


def standardize(train: Dataset, test: Dataset) -> tuple[Dataset, Dataset, StandardizeRecord]:
    """Center on the train median, scale by the train population std.

    Applied to covariates of both sets, and to the target too when the task is
    regression; labels stay untouched.  A constant train column passes through
    unchanged with a warning.
    """
    if train.width != test.width or train.task != test.task:
        raise ValueError("train and test sets disagree on shape or task")

    def shift_scale(col):
        med = float(np.median(col))
        std = float(col.std())
        if std == 0.0:
            return 0.0, 1.0, True
        return med, std, False

    x_median = np.zeros(train.width)
    x_scale = np.ones(train.width)
    for j in range(train.width):
        med, std, const = shift_scale(train.x[:, j])
        if const:
            warnings.warn(f"column {j} is constant in train; passed through unscaled")
        x_median[j], x_scale[j] = med, std

    y_median, y_scale = 0.0, 1.0
    if train.task == TASK_REGRESSION:
        y_median, y_scale, const = shift_scale(train.y)
        if const:
            warnings.warn("target is constant in train; passed through unscaled")
            y_median, y_scale = 0.0, 1.0

    record = StandardizeRecord(x_median, x_scale, y_median, y_scale)

    def transform(ds):
        y_mean = record.apply_y(ds.y_mean) if ds.y_mean is not None else None
        return Dataset(x=record.apply_x(ds.x), y=record.apply_y(ds.y), task=ds.task, y_mean=y_mean)

    return transform(train), transform(test), record
