"""Matplotlib rendering of report outputs.

Every CSV the CLI writes gets a PNG sibling so results are inspectable
without extra tooling. Uses the Agg backend; nothing here opens a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_cell_heatmap(matrix: np.ndarray, path, title: str = "Per-cell accuracy") -> None:
    fig, ax = plt.subplots(figsize=(1.2 + 0.5 * matrix.shape[1], 1.2 + 0.4 * matrix.shape[0]))
    im = ax.imshow(matrix, origin="lower", aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xlabel("sentence")
    ax.set_ylabel("layer")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_block_curve(curve: np.ndarray, path, title: str = "Block accuracy") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(curve.shape[0]), curve, marker="o")
    ax.set_xlabel("progression block (sentence index)")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_layer_profile(profile: np.ndarray, acc_thr: float, exit_layer: int | None, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    layers = np.arange(profile.shape[0])
    ax.plot(layers, profile, marker=".", label="layer accuracy")
    ax.axhline(acc_thr, color="grey", linestyle="--", label=f"threshold {acc_thr:.3f}")
    best = int(profile.argmax())
    ax.plot([best], [profile[best]], "o", color="black", label="best layer")
    if exit_layer is not None:
        ax.plot([exit_layer], [profile[exit_layer]], "*", markersize=12,
                color="red", label="first layer above threshold")
    ax.set_xlabel("layer")
    ax.set_ylabel("accuracy")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_tune_heatmaps(grid, acc_map: np.ndarray, spd_map: np.ndarray, acc_thr: float, path) -> None:
    """Two panels: accuracy and speed-up over the threshold grid."""
    fig, axes = plt.subplots(1, 2, figsize=(12, 4))
    labels_ta = [f"{v:.3g}" for v in grid.tau_acc_values.tolist()]
    labels_ti = [f"{v:.2g}" for v in grid.tau_ignore_values.tolist()]
    for ax, data, name, cmap in ((axes[0], acc_map, "accuracy", "viridis"),
                                 (axes[1], spd_map, "speed-up (total ops ratio)", "magma")):
        im = ax.imshow(data, origin="lower", aspect="auto", cmap=cmap)
        ax.set_xticks(range(0, len(labels_ta), max(1, len(labels_ta) // 8)))
        ax.set_xticklabels(labels_ta[::max(1, len(labels_ta) // 8)], rotation=45, fontsize=7)
        ax.set_yticks(range(len(labels_ti)))
        ax.set_yticklabels(labels_ti, fontsize=7)
        ax.set_xlabel("tau_acc")
        ax.set_ylabel("tau_ignore")
        ax.set_title(name)
        fig.colorbar(im, ax=ax)
    feasible = acc_map >= acc_thr
    axes[0].contour(feasible, levels=[0.5], colors="red", linewidths=1.0)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_refine_path(evaluated, path) -> None:
    """Scatter of evaluated settings colored by speed-up."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ta = [e.tau_acc for e in evaluated]
    ti = [e.tau_ignore for e in evaluated]
    spd = [e.speedup_total for e in evaluated]
    sc = ax.scatter(ta, ti, c=spd, cmap="magma", s=40, edgecolors="k", linewidths=0.3)
    ax.set_xlabel("tau_acc")
    ax.set_ylabel("tau_ignore")
    ax.set_title("Refinement evaluations")
    fig.colorbar(sc, ax=ax, label="speed-up")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
