"""Release-server phase: calibration, model fit, sampling, inverse binning.

Everything here runs in the clear on the designated server after the
noisy tables have been revealed; differential privacy is preserved by
post-processing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ProtocolError
from .prf import derive_key, generator_from_key
from .protocols import BINS, ReleasedTables

__all__ = ["DPParams", "StarModel", "calibrate", "estimate_model", "sample", "inverse_bin"]


@dataclass(frozen=True)
class DPParams:
    """Gaussian-mechanism parameters for one protocol run."""

    epsilon: float
    delta: float
    sensitivity: float
    sigma: float


def calibrate(epsilon: float, delta: float, d: int) -> DPParams:
    """Noise scale for (epsilon, delta)-DP release of the measured tables.

    One record touches one cell of each gene's 1-way table, one label
    cell, and one cell per gene of the 2-way tables, so the L2
    sensitivity of the flattened release is sqrt(2d + 1). epsilon = inf
    is the no-privacy limit (sigma = 0).
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if not 0 < delta < 1:
        raise ParameterError(f"delta must be in (0, 1), got {delta}")
    if d < 1:
        raise ParameterError(f"need at least one gene, got {d}")
    sensitivity = math.sqrt(2 * d + 1)
    if math.isinf(epsilon):
        return DPParams(epsilon, delta, sensitivity, 0.0)
    sigma = sensitivity * math.sqrt(2 * math.log(1.25 / delta)) / epsilon
    return DPParams(epsilon, delta, sensitivity, sigma)


@dataclass
class StarModel:
    """Label-hub model: P(y) and P(gene bin | y), genes independent given y.

    The measured cliques (every gene paired with the label, plus the two
    1-way families) form a star junction tree, so this conditional form
    is the exact maximum-entropy model for those measurements and can be
    sampled directly.
    """

    p_label: np.ndarray       # (C,)
    p_gene: np.ndarray        # (d, C, BINS)
    gene_diagnostic: float = field(default=0.0)

    @property
    def classes(self) -> int:
        return self.p_label.shape[0]

    @property
    def d(self) -> int:
        return self.p_gene.shape[0]


def _clip_normalize(v: np.ndarray) -> np.ndarray | None:
    clipped = np.clip(v, 0.0, None)
    total = clipped.sum()
    if total <= 0:
        return None
    return clipped / total


def estimate_model(released: ReleasedTables) -> StarModel:
    """Fit the star model to the revealed noisy tables.

    Negative cells are clipped to zero before normalizing. An all-zero
    label table is unrecoverable; an all-zero gene column falls back to a
    uniform distribution over the four bins. The noisy 1-way gene tables
    are not fused into the estimate; they only feed a consistency
    diagnostic (mean absolute gap to the column sums of the 2-way tables).
    """
    p_label = _clip_normalize(released.mu_label)
    if p_label is None:
        raise ProtocolError("all label-marginal mass clipped away; cannot fit model")
    d = released.mu_pair.shape[0]
    classes = released.mu_label.shape[0]
    pair = released.mu_pair.reshape(d, BINS, classes)
    p_gene = np.empty((d, classes, BINS))
    for c in range(classes):
        cols = pair[:, :, c]  # (d, BINS)
        clipped = np.clip(cols, 0.0, None)
        totals = clipped.sum(axis=1, keepdims=True)
        uniform = np.full((1, BINS), 1.0 / BINS)
        with np.errstate(invalid="ignore", divide="ignore"):
            normalized = np.where(totals > 0, clipped / np.where(totals > 0, totals, 1.0), uniform)
        p_gene[:, c, :] = normalized
    diagnostic = float(np.mean(np.abs(pair.sum(axis=2) - released.mu_gene)))
    return StarModel(p_label=p_label, p_gene=p_gene, gene_diagnostic=diagnostic)


def sample(model: StarModel, n_rows: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw discrete synthetic records: labels then conditional gene bins.

    Counter-based generator keyed by the seed, so runs are reproducible.
    Returns (bins (n_rows, d) int, labels (n_rows,) int).
    """
    if n_rows < 1:
        raise ParameterError(f"need n_rows >= 1, got {n_rows}")
    rng = generator_from_key(derive_key(seed, "sampler"))
    labels = rng.choice(model.classes, size=n_rows, p=model.p_label)
    bins = np.empty((n_rows, model.d), dtype=np.int64)
    cum = np.cumsum(model.p_gene, axis=2)  # (d, C, BINS)
    u = rng.random((n_rows, model.d))
    for c in range(model.classes):
        rows = labels == c
        if not rows.any():
            continue
        # bin index = number of cumulative boundaries below the draw
        bins[rows] = (u[rows][:, :, None] > cum[:, c, :-1][None, :, :]).sum(axis=2)
    return bins, labels


def inverse_bin(bins: np.ndarray, bin_means: np.ndarray) -> np.ndarray:
    """Map discrete bin indices back to continuous space via the released
    per-gene bin means."""
    d = bin_means.shape[0]
    if bins.shape[1] != d:
        raise ParameterError("bin matrix and bin means disagree on gene count")
    gene_idx = np.arange(d)[None, :]
    return bin_means[gene_idx, bins]
