"""Report figures rendered to files (headless, no display required)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import DataError, ParameterError
from .inspector import TABLE1_COLUMNS, TABLE1_ROWS, RiskRecord, Table1Result

__all__ = [
    "scatter_metric_fidelity",
    "plot_table1",
    "plot_attack_curve",
    "plot_bound_curve",
]

_COLUMN_LABELS = {"vma": "VMA", "mrc": "MRC", "vma_mrc": "VMA+MRC"}
_ROW_LABELS = {
    "intra": "Intra-group",
    "inter": "Inter-group",
    "all": "All pairs",
    "all_no_fa": "All pairs (no FA)",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def scatter_metric_fidelity(records: list[RiskRecord], metric: str, path) -> Path:
    """Scatter of attack fidelity against one risk metric, colored per dataset."""
    if metric not in ("vma", "mrc"):
        raise ParameterError(f"metric must be vma or mrc, got {metric!r}")
    if not records:
        raise DataError("no records to plot")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    datasets = sorted({r.dataset_id for r in records})
    cmap = plt.get_cmap("tab10")
    for i, dataset_id in enumerate(datasets):
        subset = [r for r in records if r.dataset_id == dataset_id]
        ax.scatter(
            [getattr(r, metric) for r in subset],
            [r.fidelity for r in subset],
            s=28,
            color=cmap(i % 10),
            label=dataset_id,
            alpha=0.85,
        )
    if metric == "mrc" and all(r.mrc > 0 for r in records):
        ax.set_xscale("log")
    ax.set_xlabel(metric.upper())
    ax.set_ylabel("attack fidelity")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_table1(result: Table1Result, path) -> Path:
    """Grouped bars of comparison accuracy per scope and feature set."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    width = 0.8 / len(TABLE1_COLUMNS)
    base = np.arange(len(TABLE1_ROWS))
    for j, column in enumerate(TABLE1_COLUMNS):
        means = [result.cells[(row, column)]["mean"] for row in TABLE1_ROWS]
        stds = [result.cells[(row, column)]["std"] for row in TABLE1_ROWS]
        ax.bar(base + j * width, means, width=width, yerr=stds, capsize=3,
               label=_COLUMN_LABELS[column])
    ax.set_xticks(base + width)
    ax.set_xticklabels([_ROW_LABELS[row] for row in TABLE1_ROWS], fontsize=9)
    ax.set_ylabel("comparison accuracy")
    ax.set_ylim(0.5, 1.0)
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    return _save(fig, path)


def plot_attack_curve(per_round: list[tuple[int, float]], path) -> Path:
    """Best-so-far fidelity against cumulative query count."""
    if not per_round:
        raise DataError("no per-round history to plot")
    queries = [q for q, _ in per_round]
    fidelities = [f for _, f in per_round]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(queries, fidelities, marker="o")
    ax.set_xlabel("queries used")
    ax.set_ylabel("fidelity")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_bound_curve(reports, path) -> Path:
    """Bound total and its three terms across the margin grid, with the observed gap."""
    if not reports:
        raise DataError("no bound reports to plot")
    gammas = [r.gamma for r in reports]
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    ax.plot(gammas, [r.total for r in reports], marker="o", label="bound total")
    ax.plot(gammas, [r.empirical_margin_term for r in reports], ls="--",
            label="margin term")
    ax.plot(gammas, [r.complexity_term for r in reports], ls="--",
            label="complexity term")
    ax.plot(gammas, [r.sample_term for r in reports], ls="--", label="sample term")
    ax.axhline(reports[0].empirical_gap, color="black", lw=1.0,
               label="empirical gap")
    ax.set_xlabel("margin threshold")
    ax.set_ylabel("fidelity gap")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)
