"""Figure rendering for training curves and score distributions.

Uses the Agg backend and writes PNG files next to the delimited output.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

SCORE_ORDER = (
    "S_gamma", "S_norm", "S_alpha", "S_beta", "S_svm", "baseline",
)


def plot_loss_curves(report, path):
    epochs = [row["epoch"] for row in report.epochs]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for key in ("total", "am", "mse", "lin_ind"):
        ax1.plot(epochs, [row[key] for row in report.epochs], label=key)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.set_yscale("log")
    ax1.legend()
    ax2.plot(epochs, [row["accuracy"] for row in report.epochs], color="tab:green")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("train accuracy")
    ax2.set_ylim(0.0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_score_histograms(per_score, ood_name, path, bins=50):
    """One panel per score; per_score maps score name -> (id, ood) arrays."""
    names = [n for n in SCORE_ORDER if n in per_score] + [
        n for n in per_score if n not in SCORE_ORDER
    ]
    cols = 3
    rows = int(np.ceil(len(names) / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3 * rows))
    axes = np.atleast_1d(axes).ravel()
    for ax, name in zip(axes, names):
        id_scores, ood_scores = per_score[name]
        lo = min(np.min(id_scores), np.min(ood_scores))
        hi = max(np.max(id_scores), np.max(ood_scores))
        if hi <= lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, bins + 1)
        ax.hist(id_scores, bins=edges, alpha=0.6, label="ID", color="tab:blue")
        ax.hist(ood_scores, bins=edges, alpha=0.6, label="OOD", color="tab:red")
        ax.set_title(name)
        ax.legend(fontsize=8)
    for ax in axes[len(names):]:
        ax.axis("off")
    fig.suptitle(f"score distributions vs {ood_name}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
