"""Synthetic-data quality metrics: utility, fidelity, biology, privacy.

* tstr: train a softmax classifier on synthetic rows, score accuracy on
  held-out real rows;
* wasserstein_mean: per-gene 1-D W1 distance between real and synthetic
  marginals, averaged over genes;
* detpr: fraction of the real data's top-K differentially expressed
  genes recovered in the synthetic ranking;
* dcr_mean: mean distance from each synthetic row to its closest real
  row (memorization proxy; larger is more private).

All metrics are deterministic given their inputs and invariant to row
order.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .data import CohortTable
from .errors import ParameterError

__all__ = [
    "MetricsReport",
    "tstr",
    "wasserstein_1d",
    "wasserstein_mean",
    "detpr",
    "dcr_mean",
    "evaluate_pair",
]


@dataclass
class MetricsReport:
    """One run's scores plus the parameters they were measured under."""

    tstr_accuracy: float
    wasserstein_mean: float
    detpr: float
    dcr_mean: float
    epsilon: float
    sigma: float
    d: int
    n: int
    seed: int

    def to_json(self) -> str:
        # fixed key order: serialization must be deterministic
        payload = {
            "tstr_accuracy": round(self.tstr_accuracy, 6),
            "wasserstein_mean": round(self.wasserstein_mean, 6),
            "detpr": round(self.detpr, 6),
            "dcr_mean": round(self.dcr_mean, 6),
            "epsilon": self.epsilon,
            "sigma": self.sigma,
            "d": self.d,
            "n": self.n,
            "seed": self.seed,
        }
        return json.dumps(payload, indent=2, allow_nan=True)


def _standardize(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    safe = np.where(std > 0, std, 1.0)
    return (x - mean) / safe


def tstr(train_syn: CohortTable, test_real: CohortTable, *, epochs: int = 500,
         lr: float = 0.1, l2: float = 1e-4) -> float:
    """Train-on-synthetic test-on-real accuracy with multinomial logistic
    regression (full-batch gradient descent, standardization fit on the
    synthetic training set)."""
    if train_syn.d != test_real.d:
        raise ParameterError("train and test gene sets differ")
    classes = max(train_syn.classes, test_real.classes)
    missing = sorted(set(range(classes)) - set(np.unique(train_syn.labels).tolist()))
    if missing:
        warnings.warn(f"classes {missing} absent from synthetic training data",
                      stacklevel=2)
    mean = train_syn.values.mean(axis=0)
    std = train_syn.values.std(axis=0)
    x = _standardize(train_syn.values, mean, std)
    x_test = _standardize(test_real.values, mean, std)
    n = x.shape[0]
    y = np.zeros((n, classes))
    y[np.arange(n), train_syn.labels] = 1.0
    w = np.zeros((train_syn.d, classes))
    b = np.zeros(classes)
    for _ in range(epochs):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        delta = (p - y) / n
        w -= lr * (x.T @ delta + l2 * w)
        b -= lr * delta.sum(axis=0)
    pred = np.argmax(x_test @ w + b, axis=1)
    return float(np.mean(pred == test_real.labels))


def wasserstein_1d(x: np.ndarray, y: np.ndarray) -> float:
    """Exact 1-D W1 distance between two empirical distributions
    (area between the empirical CDFs)."""
    xs = np.sort(np.asarray(x, dtype=np.float64))
    ys = np.sort(np.asarray(y, dtype=np.float64))
    if xs.size == ys.size:
        return float(np.mean(np.abs(xs - ys)))
    grid = np.sort(np.concatenate([xs, ys]))
    deltas = np.diff(grid)
    cdf_x = np.searchsorted(xs, grid[:-1], side="right") / xs.size
    cdf_y = np.searchsorted(ys, grid[:-1], side="right") / ys.size
    return float(np.sum(np.abs(cdf_x - cdf_y) * deltas))


def wasserstein_mean(real: CohortTable, syn: CohortTable) -> float:
    """Mean per-gene W1 distance between real and synthetic marginals."""
    if real.d != syn.d:
        raise ParameterError("real and synthetic gene sets differ")
    return float(np.mean([
        wasserstein_1d(real.values[:, g], syn.values[:, g]) for g in range(real.d)
    ]))


def _de_statistic(table: CohortTable) -> np.ndarray:
    """Per-gene differential-expression score: max over classes of the
    absolute one-vs-rest Welch t statistic (variances floored at 1e-12)."""
    floor = 1e-12
    scores = np.zeros(table.d)
    for c in range(table.classes):
        grp = table.labels == c
        n1 = int(grp.sum())
        n0 = table.n - n1
        if n1 == 0 or n0 == 0:
            continue
        m1 = table.values[grp].mean(axis=0)
        m0 = table.values[~grp].mean(axis=0)
        v1 = np.maximum(table.values[grp].var(axis=0, ddof=1) if n1 > 1 else
                        np.zeros(table.d), floor)
        v0 = np.maximum(table.values[~grp].var(axis=0, ddof=1) if n0 > 1 else
                        np.zeros(table.d), floor)
        t = np.abs(m1 - m0) / np.sqrt(v1 / n1 + v0 / n0)
        scores = np.maximum(scores, t)
    return scores


def _top_k(scores: np.ndarray, k: int) -> set[int]:
    order = np.lexsort((np.arange(scores.size), -scores))  # ties break by index
    return set(order[:k].tolist())


def detpr(real: CohortTable, syn: CohortTable, k: int = 50) -> float:
    """True-positive rate of real top-K differentially expressed genes
    recovered by the identical ranking on synthetic data."""
    if real.classes < 2:
        raise ParameterError("differential expression needs at least two classes")
    if not 1 <= k <= real.d:
        raise ParameterError(f"k must be in [1, {real.d}], got {k}")
    truth = _top_k(_de_statistic(real), k)
    candidate = _top_k(_de_statistic(syn), k)
    return len(truth & candidate) / k


def dcr_mean(real: CohortTable, syn: CohortTable, chunk: int = 256) -> float:
    """Mean Euclidean distance from each synthetic row to its nearest real
    row, on features standardized by the real data's statistics."""
    if real.d != syn.d:
        raise ParameterError("real and synthetic gene sets differ")
    mean = real.values.mean(axis=0)
    std = real.values.std(axis=0)
    r = _standardize(real.values, mean, std)
    s = _standardize(syn.values, mean, std)
    mins = np.empty(s.shape[0])
    for start in range(0, s.shape[0], chunk):
        block = s[start:start + chunk]
        d2 = ((block[:, None, :] - r[None, :, :]) ** 2).sum(axis=2)
        mins[start:start + chunk] = d2.min(axis=1)
    return float(np.mean(np.sqrt(mins)))


def evaluate_pair(real_train: CohortTable, real_test: CohortTable,
                  syn: CohortTable, *, epsilon: float, sigma: float,
                  seed: int, de_top_k: int = 50) -> MetricsReport:
    """All four metrics for one synthetic cohort.

    TSTR scores against the held-out test rows; fidelity, biology, and
    privacy compare against the training rows the generator modeled.
    """
    k = min(de_top_k, real_train.d)
    return MetricsReport(
        tstr_accuracy=tstr(syn, real_test),
        wasserstein_mean=wasserstein_mean(real_train, syn),
        detpr=detpr(real_train, syn, k=k),
        dcr_mean=dcr_mean(real_train, syn),
        epsilon=epsilon,
        sigma=sigma,
        d=real_train.d,
        n=real_train.n,
        seed=seed,
    )
