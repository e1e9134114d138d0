"""Report rendering: matplotlib figures written next to the delimited outputs.

Single-run figures compare synthetic marginals against the real cohort;
sweep figures chart the metric trends across privacy budgets.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .data import CohortTable
from .metrics import MetricsReport, wasserstein_1d

__all__ = ["render_run_figures", "render_sweep_figures"]


def render_run_figures(real: CohortTable, syn: CohortTable,
                       outdir: str | Path) -> list[Path]:
    """Fidelity snapshots for one run; returns the written file paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []

    w1 = np.array([wasserstein_1d(real.values[:, g], syn.values[:, g])
                   for g in range(real.d)])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(w1, bins=min(30, max(5, real.d // 2)), color="#4878d0", edgecolor="white")
    ax.set_xlabel("per-gene 1-D Wasserstein distance")
    ax.set_ylabel("genes")
    ax.set_title(f"marginal fidelity (mean = {w1.mean():.3f})")
    fig.tight_layout()
    path = outdir / "wasserstein_per_gene.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    # overlay the four most variable genes
    top = np.argsort(-real.values.var(axis=0))[:4]
    fig, axes = plt.subplots(2, 2, figsize=(8, 6))
    for ax, g in zip(axes.ravel(), top):
        lo = min(real.values[:, g].min(), syn.values[:, g].min())
        hi = max(real.values[:, g].max(), syn.values[:, g].max())
        grid = np.linspace(lo, hi, 25)
        ax.hist(real.values[:, g], bins=grid, alpha=0.55, label="real", density=True)
        ax.hist(syn.values[:, g], bins=grid, alpha=0.55, label="synthetic", density=True)
        ax.set_title(real.gene_names[g], fontsize=9)
    axes[0, 0].legend(fontsize=8)
    fig.suptitle("real vs synthetic marginals (top-variance genes)")
    fig.tight_layout()
    path = outdir / "marginals_overlay.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    classes = np.arange(real.classes)
    width = 0.4
    real_freq = np.bincount(real.labels, minlength=real.classes) / real.n
    syn_freq = np.bincount(syn.labels, minlength=real.classes) / syn.n
    ax.bar(classes - width / 2, real_freq, width, label="real")
    ax.bar(classes + width / 2, syn_freq, width, label="synthetic")
    ax.set_xticks(classes)
    ax.set_xticklabels(real.class_names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("class frequency")
    ax.legend()
    fig.tight_layout()
    path = outdir / "label_distribution.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def render_sweep_figures(reports: Sequence[MetricsReport],
                         outdir: str | Path) -> list[Path]:
    """Metric-vs-epsilon trend charts from a collection of run reports."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    eps = sorted({r.epsilon for r in reports})
    metric_fields = [
        ("tstr_accuracy", "TSTR accuracy"),
        ("wasserstein_mean", "mean per-gene Wasserstein distance"),
        ("detpr", "DE-gene recovery rate"),
        ("dcr_mean", "distance to closest record"),
    ]
    paths = []
    for attr, label in metric_fields:
        fig, ax = plt.subplots(figsize=(6, 4))
        med, lo, hi = [], [], []
        for e in eps:
            vals = np.array([getattr(r, attr) for r in reports if r.epsilon == e])
            med.append(np.median(vals))
            lo.append(vals.min())
            hi.append(vals.max())
        ax.plot(eps, med, marker="o", color="#4878d0")
        ax.fill_between(eps, lo, hi, alpha=0.2, color="#4878d0")
        ax.set_xscale("log")
        ax.set_xlabel("privacy budget epsilon")
        ax.set_ylabel(label)
        ax.set_title(f"{label} across privacy budgets")
        fig.tight_layout()
        path = outdir / f"sweep_{attr}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths
