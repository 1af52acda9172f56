"""Report rendering: delimited output plus matplotlib figures on disk."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update(
    {
        "figure.figsize": (6.0, 4.0),
        "figure.dpi": 110,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 10,
    }
)


def write_csv(path, header: list, rows: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def save_roc_figure(curve: np.ndarray, auc_value: float, path) -> None:
    fig, ax = plt.subplots()
    ax.plot(curve[:, 0], curve[:, 1], lw=1.8)
    ax.plot([0, 1], [0, 1], "k--", lw=0.8, alpha=0.5)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"ROC (AUC = {auc_value:.4f})")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_iteration_figure(per_seed_aucs: np.ndarray, initial_aucs, path) -> None:
    """per_seed_aucs: (n_seeds, t) ensemble AUC after each iteration."""
    per_seed_aucs = np.atleast_2d(np.asarray(per_seed_aucs, dtype=float))
    iters = np.arange(1, per_seed_aucs.shape[1] + 1)
    fig, ax = plt.subplots()
    for row in per_seed_aucs:
        ax.plot(iters, row, color="tab:blue", alpha=0.25, lw=0.8)
    ax.plot(iters, np.median(per_seed_aucs, axis=0), color="tab:blue", lw=2.0,
            marker="o", label="median ensemble AUC")
    if initial_aucs is not None:
        ax.axhline(float(np.median(initial_aucs)), color="tab:red", ls="--",
                   lw=1.2, label="initial detection (median)")
    ax.set_xlabel("iteration")
    ax.set_ylabel("AUC")
    ax.set_xticks(iters)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_rate_sweep_figure(rates, initial_aucs, ensemble_aucs, path) -> None:
    """Median AUCs of initial detection vs final ensemble per anomaly rate."""
    fig, ax = plt.subplots()
    ax.plot(rates, initial_aucs, marker="s", label="initial detection")
    ax.plot(rates, ensemble_aucs, marker="o", label="self-trained ensemble")
    ax.set_xlabel("true anomaly rate")
    ax.set_ylabel("median AUC")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_backbone_figure(names, aucs, path) -> None:
    fig, ax = plt.subplots()
    ax.bar(names, aucs, color="tab:blue", width=0.5)
    ax.set_ylabel("median AUC")
    ax.set_ylim(0, 1.02)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_trajectory_figure(trajectories, path) -> None:
    """AUC per feedback round, one faint line per seed plus the median."""
    arr = np.atleast_2d(np.asarray(trajectories, dtype=float))
    rounds = np.arange(arr.shape[1])
    fig, ax = plt.subplots()
    for row in arr:
        ax.plot(rounds, row, color="tab:green", alpha=0.25, lw=0.8)
    ax.plot(rounds, np.median(arr, axis=0), color="tab:green", lw=2.0,
            marker="o", label="median AUC")
    ax.set_xlabel("feedback round")
    ax.set_ylabel("AUC")
    ax.set_xticks(rounds)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_saliency_panel(frame_img: np.ndarray, saliency_norm: np.ndarray, path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(7, 3.2))
    axes[0].imshow(frame_img, cmap="gray", vmin=0, vmax=1)
    axes[0].set_title("frame")
    axes[1].imshow(frame_img, cmap="gray", vmin=0, vmax=1)
    axes[1].imshow(saliency_norm, cmap="jet", alpha=0.45)
    axes[1].set_title("saliency overlay")
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
        ax.grid(False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
