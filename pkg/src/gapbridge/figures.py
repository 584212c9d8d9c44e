"""Matplotlib rendering for the report paths (training history, residual
histograms). Figures are rendered headlessly and with pinned metadata so a
fixed input yields stable bytes across runs on one matplotlib build.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_PNG_META = {"Software": None}  # drop the version string matplotlib embeds


def save_history_plot(history, path: str | Path) -> None:
    """Two panels: loss terms per step, learning rate per step."""
    steps = [row.step for row in history]
    fig, (ax_loss, ax_lr) = plt.subplots(
        2, 1, figsize=(7.0, 5.0), sharex=True, height_ratios=[3, 1]
    )
    series = {
        "map": [row.loss_map for row in history],
        "cosine": [row.loss_cosine for row in history],
        "contrastive": [row.loss_cl for row in history],
        "distill": [row.loss_disti for row in history],
    }
    for label, values in series.items():
        if any(v != 0.0 for v in values):
            ax_loss.plot(steps, values, label=label, linewidth=0.9)
    ax_loss.set_ylabel("loss")
    ax_loss.legend(loc="upper right", fontsize=8)
    ax_loss.grid(True, alpha=0.3)
    ax_lr.plot(steps, [row.lr for row in history], color="tab:gray", linewidth=0.9)
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("step")
    ax_lr.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def save_histogram_plot(rows, path: str | Path) -> None:
    """Step-outline histograms, one panel per exported series."""
    by_series: dict[str, list[tuple[float, float, int]]] = {}
    for label, left, right, count in rows:
        by_series.setdefault(label, []).append((left, right, count))
    n = len(by_series)
    fig, axes = plt.subplots(1, n, figsize=(3.0 * n, 2.8), squeeze=False)
    for ax, (label, bins) in zip(axes[0], by_series.items()):
        edges = [b[0] for b in bins] + [bins[-1][1]]
        counts = [b[2] for b in bins]
        ax.stairs(counts, edges, fill=True, alpha=0.7)
        ax.set_title(f"dim {label}" if label != "global" else "global", fontsize=9)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
