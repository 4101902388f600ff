"""Matplotlib rendering of run reports to image files.

Everything draws on the Agg backend and writes straight to disk; no
interactive windows. Colors and sizing lean on matplotlib defaults.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_figure(history, selected_epoch, per_domain: dict[str, float],
                         path, title: str = "training run") -> None:
    """Validation-accuracy curve plus final per-domain accuracy bars."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(range(len(history)), history, lw=1.2)
    if selected_epoch is not None and history:
        ax1.axvline(selected_epoch, color="tab:red", ls="--", lw=1,
                    label=f"selected epoch {selected_epoch}")
        ax1.legend(fontsize=8)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("validation accuracy")
    ax1.set_ylim(0, 1.02)
    ax1.set_title(title, fontsize=10)

    names = list(per_domain)
    vals = [per_domain[n] for n in names]
    ax2.bar(range(len(names)), vals, color="tab:blue")
    ax2.set_xticks(range(len(names)), names, rotation=30, ha="right", fontsize=8)
    ax2.set_ylim(0, 1.02)
    ax2.set_ylabel("accuracy")
    ax2.set_title("per-domain accuracy", fontsize=10)
    for x, v in enumerate(vals):
        ax2.text(x, v + 0.01, f"{v:.3f}", ha="center", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_sweep_figure(rows: list[dict], path, title: str = "ablation sweep") -> None:
    """Mean accuracy bar per variant with per-run scatter on top."""
    variants: list[str] = []
    for r in rows:
        if r["variant"] not in variants:
            variants.append(r["variant"])
    means = []
    fig, ax = plt.subplots(figsize=(max(5.0, 1.1 * len(variants) + 1.5), 3.6))
    for i, v in enumerate(variants):
        accs = [r["accuracy"] for r in rows if r["variant"] == v]
        means.append(float(np.mean(accs)))
        jitter = np.linspace(-0.18, 0.18, len(accs)) if len(accs) > 1 else [0.0]
        ax.scatter(i + np.asarray(jitter), accs, s=12, color="k", zorder=3, alpha=0.6)
    ax.bar(range(len(variants)), means, color="tab:blue", alpha=0.75, zorder=2)
    ax.set_xticks(range(len(variants)), variants, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("held-out accuracy")
    ax.set_ylim(0, 1.02)
    ax.set_title(title, fontsize=10)
    for x, m in enumerate(means):
        ax.text(x, m + 0.015, f"{m:.3f}", ha="center", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_eval_figure(named_accuracies: list[tuple[str, float]], path,
                     title: str = "evaluation") -> None:
    """Accuracy bar per evaluated model / ensemble."""
    names = [n for n, _ in named_accuracies]
    vals = [v for _, v in named_accuracies]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(names) + 1.5), 3.4))
    ax.bar(range(len(names)), vals, color="tab:green", alpha=0.8)
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.02)
    ax.set_ylabel("accuracy")
    ax.set_title(title, fontsize=10)
    for x, v in enumerate(vals):
        ax.text(x, v + 0.01, f"{v:.3f}", ha="center", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
