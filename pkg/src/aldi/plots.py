"""Figure rendering for the benchmark report path.

Writes PNG files next to the delimited output: per-size ensemble panels of
the permeability fields (initial vs final, one column per sampler) and a
summary of bias/spread against ensemble size.
"""

from __future__ import annotations

import os
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _x_grid(d: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(d) / d


def ensemble_figure(panels: Dict[str, Dict[str, np.ndarray]], truth: np.ndarray, path: str) -> None:
    """Permeability ensembles exp(u(x)): rows initial/final, one column per label."""
    labels = list(panels)
    fig, axes = plt.subplots(
        2, len(labels), figsize=(4.5 * len(labels), 6.5), sharex=True, squeeze=False
    )
    x = _x_grid(truth.shape[0])
    for col, label in enumerate(labels):
        for row, stage in enumerate(("initial", "final")):
            ax = axes[row][col]
            ax.plot(x, np.exp(panels[label][stage]), color="tab:blue", alpha=0.35, lw=0.8)
            ax.plot(x, np.exp(truth), "k--", lw=1.6, label="truth")
            ax.set_title(f"{label}, {stage}")
            ax.set_xlabel("x")
            if col == 0:
                ax.set_ylabel("permeability a(x)")
    handles, labels_ = axes[0][0].get_legend_handles_labels()
    axes[0][0].legend(handles[:1], labels_[:1], loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def metrics_figure(agg: Dict, columns: List[tuple], sizes: List[int], path: str) -> None:
    """Bias and spread against ensemble size, one line per sampler column."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for metric, ax in zip(("bias", "spread"), axes):
        for fam, mode in columns:
            values = [agg[(fam, mode, n)][metric] for n in sizes]
            tag = ("gf-" if mode == "gradient_free" else "g-") + fam
            ax.plot(sizes, values, marker="o", label=tag)
        ax.set_xlabel("ensemble size N")
        ax.set_ylabel(metric)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.grid(True, which="both", alpha=0.3)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_benchmark_figures(preset, rows: List[Dict], agg: Dict, out_dir: str) -> None:
    """All figures for one benchmark invocation."""
    from .benchmark import GRADIENT_MODE

    by_size: Dict[int, Dict[str, Dict[str, np.ndarray]]] = {}
    truth = None
    for row in rows:
        if "initial_states" not in row:
            continue
        truth = row["truth"]
        base, mode = row["family"], row["gradient_mode"]
        tag = ("gf-" if mode == "gradient_free" else "g-") + base
        by_size.setdefault(row["N"], {})[tag] = {
            "initial": row["initial_states"],
            "final": row["final_states"],
        }
    if truth is not None:
        for size, panels in sorted(by_size.items()):
            ensemble_figure(
                panels, truth, os.path.join(out_dir, f"ensembles_N{size}.png")
            )
    columns = [GRADIENT_MODE[f] for f in preset.families]
    metrics_figure(
        agg, columns, list(preset.ensemble_sizes), os.path.join(out_dir, "metrics.png")
    )
