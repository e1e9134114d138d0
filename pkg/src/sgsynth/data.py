"""Cohort tables: CSV ingestion, splits, and the desk-scale demo generator.

A cohort is an N x d matrix of non-negative (pre-normalized) expression
values plus one integer class label per row. CSV files carry a header of
gene names with the label column named ``label``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IngestionError, ParameterError
from .prf import derive_key, generator_from_key

__all__ = [
    "CohortTable",
    "ingest",
    "write_csv",
    "split_train_test",
    "split_holders",
    "make_demo_cohort",
]

LABEL_COLUMN = "label"


@dataclass
class CohortTable:
    """Plaintext cohort: expression matrix plus integer labels."""

    values: np.ndarray        # (N, d) float64
    labels: np.ndarray        # (N,) int64
    gene_names: list[str]
    classes: int
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.class_names:
            self.class_names = [str(i) for i in range(self.classes)]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def rows(self, idx) -> "CohortTable":
        return CohortTable(self.values[idx], self.labels[idx],
                           self.gene_names, self.classes, self.class_names)


def ingest(path, log1p: bool = False, classes: int | None = None) -> CohortTable:
    """Parse and validate a cohort CSV.

    Errors carry 1-based row/column coordinates. The optional log1p flag
    transforms every expression column on the way in.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IngestionError(f"{path}: {exc.strerror or exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if LABEL_COLUMN not in header:
            raise IngestionError(f"{path}: missing required column {LABEL_COLUMN!r}")
        label_idx = header.index(LABEL_COLUMN)
        gene_names = [h for i, h in enumerate(header) if i != label_idx]
        if not gene_names:
            raise IngestionError(f"{path}: no gene columns")
        values, labels = [], []
        for r, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            try:
                labels.append(int(row[label_idx]))
            except ValueError:
                raise IngestionError(
                    f"{path}: row {r}, column {label_idx + 1}: non-integer label {row[label_idx]!r}"
                ) from None
            vals = []
            for i, cell in enumerate(row):
                if i == label_idx:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {r}, column {i + 1}: non-numeric cell {cell!r}"
                    ) from None
                if math.isnan(v):
                    raise IngestionError(f"{path}: row {r}, column {i + 1}: missing value")
                vals.append(v)
            values.append(vals)
    if not values:
        raise IngestionError(f"{path}: no data rows")
    mat = np.asarray(values, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.int64)
    n_classes = classes if classes is not None else int(lab.max()) + 1
    if n_classes < 2:
        raise IngestionError(f"{path}: need at least two classes, saw {n_classes}")
    bad = np.nonzero((lab < 0) | (lab >= n_classes))[0]
    if bad.size:
        raise IngestionError(
            f"{path}: row {bad[0] + 2}: label {lab[bad[0]]} outside [0, {n_classes})"
        )
    if log1p:
        mat = np.log1p(mat)
    return CohortTable(mat, lab, gene_names, n_classes)


def write_csv(table: CohortTable, path) -> None:
    """Write a cohort with 6-decimal expression values."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.gene_names + [LABEL_COLUMN])
        for row, label in zip(table.values, table.labels):
            writer.writerow([f"{v:.6f}" for v in row] + [int(label)])


def split_train_test(table: CohortTable, test_fraction: float, seed: int) -> tuple[CohortTable, CohortTable]:
    """Shuffled train/test split (default pipeline uses 80/20)."""
    if not 0 < test_fraction < 1:
        raise ParameterError(f"test fraction must be in (0, 1), got {test_fraction}")
    rng = generator_from_key(derive_key(seed, "train-test-split"))
    order = rng.permutation(table.n)
    n_test = max(1, int(round(table.n * test_fraction)))
    return table.rows(order[n_test:]), table.rows(order[:n_test])


def split_holders(table: CohortTable, holders: int, seed: int = 0,
                  shuffle: bool = False) -> list[CohortTable]:
    """Partition rows among M data holders (balanced contiguous chunks).

    The concatenation of the parts preserves the input row order, which
    is what makes pipeline outputs independent of M. With shuffle=True a
    seed-keyed permutation is applied first (still M-independent).
    """
    if not 1 <= holders <= table.n:
        raise ParameterError(f"holders must be in [1, {table.n}], got {holders}")
    t = table
    if shuffle:
        rng = generator_from_key(derive_key(seed, "holder-shuffle"))
        t = table.rows(rng.permutation(table.n))
    base, extra = divmod(t.n, holders)
    parts = []
    start = 0
    for i in range(holders):
        size = base + (1 if i < extra else 0)
        parts.append(t.rows(slice(start, start + size)))
        start += size
    return parts


def make_demo_cohort(n: int = 800, d: int = 50, classes: int = 4, seed: int = 0,
                     de_fraction: float = 0.4) -> CohortTable:
    """Gaussian-mixture-per-class cohort shaped like log-normalized counts.

    A de_fraction subset of genes carries class-dependent shifts
    (differentially expressed); the rest share one profile. Values are
    clipped at zero to stay in the non-negative expression domain.
    """
    if classes < 2 or d < 1 or n < classes:
        raise ParameterError("demo cohort needs classes >= 2, d >= 1, n >= classes")
    rng = generator_from_key(derive_key(seed, "demo-cohort"))
    base = rng.uniform(2.0, 9.0, size=d)
    scale = rng.uniform(0.4, 0.9, size=d)
    n_de = max(1, int(round(d * de_fraction)))
    de_genes = rng.choice(d, size=n_de, replace=False)
    shifts = np.zeros((classes, d))
    shifts[:, de_genes] = rng.uniform(0.8, 2.4, size=(classes, n_de)) * \
        rng.choice([-1.0, 1.0], size=(classes, n_de))
    labels = rng.integers(0, classes, size=n)
    # guarantee every class appears
    labels[:classes] = np.arange(classes)
    values = base[None, :] + shifts[labels] + rng.normal(0.0, 1.0, size=(n, d)) * scale[None, :]
    values = np.clip(values, 0.0, None)
    names = [f"g{i:04d}" for i in range(d)]
    return CohortTable(values, labels.astype(np.int64), names, classes)
