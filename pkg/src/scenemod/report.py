"""Delimited result tables and the matplotlib figures rendered next to them."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import BenchRow


def write_table(rows: Sequence[BenchRow], path, delimiter: str = ",") -> Path:
    """Write one header row plus one record per benchmark row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = [row.as_record() for row in rows]
    fields = list(records[0]) if records else ["scenario"]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields, delimiter=delimiter)
        writer.writeheader()
        writer.writerows(records)
    return path


def render_figures(rows: Sequence[BenchRow], outdir) -> list[Path]:
    """Render summary figures for a set of benchmark rows.

    Always writes a per-scenario MOTA/IDF1 chart; when the rows span several
    (selection, strategy) groups, adds a grouped mean-with-error-bar chart.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if not rows:
        return written

    fig, ax = plt.subplots(figsize=(8, 3.2))
    xs = np.arange(len(rows))
    ax.bar(xs - 0.2, [r.metrics.mota for r in rows], width=0.4, label="MOTA")
    ax.bar(xs + 0.2, [r.metrics.idf1 for r in rows], width=0.4, label="IDF1")
    ax.set_xlabel("scenario")
    ax.set_ylabel("score")
    ax.set_title("per-scenario tracking metrics")
    ax.legend(loc="lower right", fontsize=8)
    ax.axhline(0.0, color="k", linewidth=0.6)
    fig.tight_layout()
    per_scenario = outdir / "metrics_by_scenario.png"
    fig.savefig(per_scenario, dpi=120)
    plt.close(fig)
    written.append(per_scenario)

    groups: dict[tuple[str, str, float], list[BenchRow]] = {}
    for row in rows:
        groups.setdefault((row.selection, row.strategy, row.rho), []).append(row)
    if len(groups) > 1:
        labels, means, errs = [], [], []
        for key in sorted(groups):
            motas = np.array([r.metrics.mota for r in groups[key]])
            labels.append(f"{key[0]}/{key[1]}" + (f"\nrho={key[2]}" if key[1] == "weighted" else ""))
            means.append(float(np.mean(motas)))
            errs.append(
                float(np.std(motas, ddof=1) / np.sqrt(len(motas))) if len(motas) > 1 else 0.0
            )
        fig, ax = plt.subplots(figsize=(1.4 * len(labels) + 2, 3.2))
        ax.bar(np.arange(len(labels)), means, yerr=errs, capsize=4, color="#4878a8")
        ax.set_xticks(np.arange(len(labels)))
        ax.set_xticklabels(labels, fontsize=8)
        ax.set_ylabel("mean MOTA")
        ax.set_title("MOTA by selection/strategy")
        ax.axhline(0.0, color="k", linewidth=0.6)
        fig.tight_layout()
        summary = outdir / "mota_by_group.png"
        fig.savefig(summary, dpi=120)
        plt.close(fig)
        written.append(summary)
    return written


def write_loss_figure(losses: Sequence[float], path, window: int = 25) -> Path:
    """Smoothed training-loss curve."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(losses, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(arr, alpha=0.25, label="loss")
    if arr.size >= window:
        kernel = np.ones(window) / window
        ax.plot(
            np.arange(window - 1, arr.size),
            np.convolve(arr, kernel, mode="valid"),
            label=f"mean({window})",
        )
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
