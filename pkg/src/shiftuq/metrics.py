"""Prediction scoring: error metrics, calibration, and spread summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PredictionSet:
    """Aligned per-example predictions and truths, ready for scoring."""

    mean: np.ndarray
    std: np.ndarray
    y_true: np.ndarray
    prob: np.ndarray | None = None  # classification: predictive P(y=1)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        self.y_true = np.asarray(self.y_true, dtype=np.float64)
        if self.prob is not None:
            self.prob = np.asarray(self.prob, dtype=np.float64)
        n = self.mean.size
        for arr in (self.std, self.y_true) + (() if self.prob is None else (self.prob,)):
            if arr.shape != (n,):
                raise ValueError("prediction channels must share one length")
        if n == 0:
            raise ValueError("need at least one prediction")
        if np.any(self.std < 0):
            raise ValueError("predictive std must be nonnegative")
        if self.prob is not None and (np.any(self.prob < 0) or np.any(self.prob > 1)):
            raise ValueError("probabilities must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.mean.size


def rmse(preds: np.ndarray, targets: np.ndarray) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.size == 0:
        raise ValueError("preds and targets must share a nonempty shape")
    return float(np.sqrt(np.mean((preds - targets) ** 2)))


def predicted_class(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Hard labels from probabilities; a prob exactly at threshold goes to 1."""
    return (np.asarray(probs, dtype=np.float64) >= threshold).astype(np.float64)


def accuracy(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape or probs.size == 0:
        raise ValueError("probs and labels must share a nonempty shape")
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return float(np.mean(predicted_class(probs, threshold) == labels))


def ace(probs: np.ndarray, labels: np.ndarray, bins: int = 10) -> float:
    """Adaptive calibration error over equal-mass confidence bins.

    Confidence is max(p, 1-p).  Examples sort by confidence with a stable
    order, split into `bins` near-equal chunks, and the score is the mean
    absolute gap between each chunk's accuracy and its mean confidence.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ValueError("probs and labels must share a shape")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if probs.size < bins:
        raise ValueError(f"need at least {bins} examples for {bins} bins")
    conf = np.maximum(probs, 1.0 - probs)
    correct = (predicted_class(probs) == labels).astype(np.float64)
    order = np.argsort(conf, kind="stable")
    gaps = [
        abs(correct[chunk].mean() - conf[chunk].mean())
        for chunk in np.array_split(order, bins)
    ]
    return float(np.mean(gaps))


def spread_profile(std: np.ndarray, region_a: np.ndarray, region_b: np.ndarray) -> float:
    """Mean predictive std inside region A over mean std inside region B."""
    std = np.asarray(std, dtype=np.float64)
    region_a = np.asarray(region_a, dtype=bool)
    region_b = np.asarray(region_b, dtype=bool)
    if std.shape != region_a.shape or std.shape != region_b.shape:
        raise ValueError("std and region masks must share a shape")
    if not region_a.any() or not region_b.any():
        raise ValueError("both regions must be nonempty")
    return float(std[region_a].mean() / std[region_b].mean())


def _average_ranks(values: np.ndarray) -> np.ndarray:
    # ties get the mean of the ranks they straddle
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    ranks[order] = np.arange(1, values.size + 1, dtype=np.float64)
    sorted_vals = values[order]
    start = 0
    for i in range(1, values.size + 1):
        if i == values.size or sorted_vals[i] != sorted_vals[start]:
            if i - start > 1:
                ranks[order[start:i]] = 0.5 * (start + 1 + i)
            start = i
    return ranks


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Rank correlation with average ranks on ties."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two 1-d arrays of equal length >= 2")
    ra, rb = _average_ranks(a), _average_ranks(b)
    if ra.std() == 0.0 or rb.std() == 0.0:
        raise ValueError("rank correlation undefined for a constant input")
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    return float((ra * rb).sum() / np.sqrt((ra**2).sum() * (rb**2).sum()))
