"""The synthetic-data-generation protocol stack run by the three parties.

Order of phases, all over shares:

1. data preparation: concatenate the holders' submissions, transpose,
   split off the label row;
2. quantile binning of every gene (oblivious sort, quartile cuts, strict
   less-than indicators) plus per-bin counts and means;
3. exact 1-way and 2-way marginals from one-hot indicators, batched as
   inner products over all samples at once;
4. a single batched addition of scaled approximate-Gaussian noise,
   followed by the reveal of the noisy tables to the release server.

Bin indices, indicators and counts are raw ring integers throughout, so
the revealed tables at sigma = 0 are exact; only the continuous gene
values and the bin means live in fixed point.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IngestionError, ParameterError, ProtocolError
from .primitives import Engine, sv_concat, sv_stack
from .sharing import SharedVector

__all__ = [
    "PreparedData",
    "BinModelShares",
    "MarginalShares",
    "NoisyShares",
    "ReleasedTables",
    "prepare",
    "bin_genes",
    "compute_marginals",
    "add_noise",
    "reveal_outputs",
    "execute_sdg",
]

_U64 = np.uint64
BINS = 4  # quartile binning is fixed at four bins


@dataclass
class PreparedData:
    """Transposed, concatenated cohort: genes (d, N) and labels (N,)."""

    genes: SharedVector
    labels: SharedVector
    n: int
    d: int
    classes: int
    discrete: bool = False


@dataclass
class BinModelShares:
    """Per-gene quartile boundaries, bin means, and bin counts (shares)."""

    quartiles: SharedVector  # (d, 3) fixed-point
    means: SharedVector      # (d, BINS) fixed-point
    counts: SharedVector     # (d, BINS) raw


@dataclass
class MarginalShares:
    """Exact contingency tables as raw-count shares."""

    gene: SharedVector   # (d, BINS)
    label: SharedVector  # (classes,)
    pair: SharedVector   # (d, BINS * classes)
    d: int
    classes: int


@dataclass
class NoisyShares:
    """Flattened noisy tables ready for release."""

    flat: SharedVector        # (BINS*d + C + BINS*d*C,) fixed-point
    bin_means: SharedVector   # (d, BINS) fixed-point
    d: int
    classes: int
    sigma: float
    noise_applied: bool
    means_noised: bool


@dataclass
class ReleasedTables:
    """Plaintext noisy marginals and bin means held by the release server."""

    mu_gene: np.ndarray    # (d, BINS)
    mu_label: np.ndarray   # (C,)
    mu_pair: np.ndarray    # (d, BINS * C)
    bin_means: np.ndarray  # (d, BINS)
    sigma: float


def prepare(eng: Engine, submissions: list[SharedVector], classes: int) -> PreparedData:
    """Phase 1: row-concatenate the holders' share matrices and transpose.

    Each submission is an (N_i, d+1) sharing whose last column holds raw
    labels; gene ordering must agree across holders.
    """
    if not submissions:
        raise IngestionError("no data-holder submissions")
    cols = submissions[0].shape[1]
    for i, sub in enumerate(submissions):
        if sub.a.ndim != 2 or sub.shape[1] != cols:
            raise IngestionError(
                f"holder {i + 1} submitted {sub.shape[1]} columns, expected {cols}"
            )
    if classes < 2:
        raise ParameterError("need at least two classes")
    combined = sv_concat(submissions, axis=0)
    transposed = SharedVector(np.ascontiguousarray(combined.a.T),
                              np.ascontiguousarray(combined.b.T))
    genes = transposed[: cols - 1]
    labels = transposed[cols - 1]
    return PreparedData(genes=genes, labels=labels,
                        n=combined.shape[0], d=cols - 1, classes=classes)


def bin_genes(eng: Engine, data: PreparedData) -> tuple[PreparedData, BinModelShares]:
    """Phase 2a: discretize every gene into quartile bins.

    Per gene: oblivious sort, quartile boundaries at the floor(qN) order
    statistics, three strict comparisons per sample, then bin index
    3 - c2 - c1 - c0. Bin counts come from one-hot masks; bin means from a
    masked inner product divided by the count (0 when a bin is empty).
    All genes are processed in one vectorized batch per network layer.
    """
    if data.discrete:
        raise ProtocolError("genes already discretized")
    v = data.genes  # (d, n) fixed-point
    d, n = v.shape
    s = eng.sort_rows(v)
    cuts = [n // 4, n // 2, (3 * n) // 4]
    quart = s[:, cuts]  # (d, 3)
    # c_k[i] = 1 where value_i < Q_k; all three comparisons in one batch.
    lhs = sv_stack([v, v, v])
    rhs = sv_stack([
        SharedVector(np.broadcast_to(quart.a[:, k:k + 1], (d, n)),
                     np.broadcast_to(quart.b[:, k:k + 1], (d, n)))
        for k in range(3)
    ])
    c = eng.lt(lhs, rhs)  # (3, d, n) raw bits
    c_sum = eng.add(eng.add(c[0], c[1]), c[2])
    bins = eng.add_public(eng.neg(c_sum), np.full((d, n), 3, dtype=_U64))
    masks = eng.onehot(bins, BINS)  # (d, n, BINS)
    counts = eng.sum_local(masks, axis=1)  # (d, BINS)
    masks_t = SharedVector(masks.a.swapaxes(1, 2), masks.b.swapaxes(1, 2))  # (d, BINS, n)
    sums = eng.dot(masks_t, v.reshape(d, 1, n))  # (d, BINS) fixed-point
    means = eng.div(sums, counts, max_b=data.n)
    binned = PreparedData(genes=bins, labels=data.labels, n=data.n,
                          d=data.d, classes=data.classes, discrete=True)
    return binned, BinModelShares(quartiles=quart, means=means, counts=counts)


def compute_marginals(eng: Engine, data: PreparedData) -> MarginalShares:
    """Phase 2b: exact 1-way and 2-way marginals over the binned data.

    Gene-side indicators come from the one-hot encoding of the bin index,
    label-side from the one-hot of the class id; the 2-way table is one
    batched matrix of inner products between the two indicator families.
    """
    if not data.discrete:
        raise ProtocolError("marginals need discretized genes")
    d, n, c = data.d, data.n, data.classes
    label_oh = eng.onehot(data.labels, c)  # (n, C)
    label_t = SharedVector(np.ascontiguousarray(label_oh.a.T),
                           np.ascontiguousarray(label_oh.b.T))  # (C, n)
    mu_label = eng.sum_local(label_t, axis=-1)  # (C,)
    gene_oh = eng.onehot(data.genes, BINS)  # (d, n, BINS)
    mu_gene = eng.sum_local(gene_oh, axis=1)  # (d, BINS)
    gene_rows = SharedVector(
        np.ascontiguousarray(gene_oh.a.swapaxes(1, 2).reshape(d * BINS, n)),
        np.ascontiguousarray(gene_oh.b.swapaxes(1, 2).reshape(d * BINS, n)),
    )
    pair = eng.dot_rows(gene_rows, label_t)  # (d*BINS, C)
    mu_pair = pair.reshape(d, BINS * c)
    return MarginalShares(gene=mu_gene, label=mu_label, pair=mu_pair, d=d, classes=c)


def flatten_length(d: int, classes: int) -> int:
    return BINS * d + classes + BINS * d * classes


def add_noise(eng: Engine, marg: MarginalShares, model: BinModelShares,
              sigma: float, noise_bin_means: bool = True) -> NoisyShares:
    """Phase 2c: one batched addition of sigma-scaled approximate-Gaussian
    noise to the flattened tables (and, by default, the bin means).

    sigma = 0 short-circuits to the exact tables.
    """
    if sigma < 0:
        raise ParameterError(f"noise scale must be >= 0, got {sigma}")
    d, c = marg.d, marg.classes
    scale = _U64(1 << eng.f)
    flat_counts = sv_concat([marg.gene.ravel(), marg.label.ravel(), marg.pair.ravel()])
    flat = eng.mul_public(flat_counts, scale)  # counts as fixed-point, exact
    means = model.means
    if sigma == 0:
        return NoisyShares(flat=flat, bin_means=means.copy(), d=d, classes=c,
                           sigma=0.0, noise_applied=False, means_noised=False)
    m = flatten_length(d, c)
    width = m + means.size if noise_bin_means else m
    noise = eng.mul_public_fp(eng.gauss_vector(width), sigma)
    noisy_flat = eng.add(flat, noise[:m])
    if noise_bin_means:
        noisy_means = eng.add(means, noise[m:].reshape(means.shape))
    else:
        noisy_means = means.copy()
    return NoisyShares(flat=noisy_flat, bin_means=noisy_means, d=d, classes=c,
                       sigma=sigma, noise_applied=True, means_noised=noise_bin_means)


def reveal_outputs(eng: Engine, noisy: NoisyShares, *, dp_required: bool,
                   to: int = 1) -> ReleasedTables | None:
    """Phase 3: open the noisy tables to the designated release server.

    Refuses to reveal exact tables when the run is supposed to be
    differentially private (the post-processing safety guard).
    """
    if dp_required and not noisy.noise_applied:
        raise ProtocolError("refusing to reveal exact marginals in DP mode")
    flat = eng.reveal_fp(noisy.flat, to=to)
    means = eng.reveal_fp(noisy.bin_means, to=to)
    if eng.party != to:
        return None
    d, c = noisy.d, noisy.classes
    mu_gene = flat[: BINS * d].reshape(d, BINS)
    mu_label = flat[BINS * d: BINS * d + c]
    mu_pair = flat[BINS * d + c:].reshape(d, BINS * c)
    return ReleasedTables(mu_gene=mu_gene, mu_label=mu_label, mu_pair=mu_pair,
                          bin_means=means, sigma=noisy.sigma)


def execute_sdg(eng: Engine, submissions: list[SharedVector], classes: int,
                sigma: float, noise_bin_means: bool = True) -> ReleasedTables | None:
    """Full protocol run for one party; party 1 gets the released tables."""
    prep = prepare(eng, submissions, classes)
    binned, model = bin_genes(eng, prep)
    marg = compute_marginals(eng, binned)
    noisy = add_noise(eng, marg, model, sigma, noise_bin_means)
    return reveal_outputs(eng, noisy, dp_required=sigma > 0)
