"""Report figures written next to the text/JSON reports."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def figsize(scale=1.0, ratio=0.62):
    width = 6.0 * scale
    return (width, width * ratio)


def _save(fig, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_statistics(table, path):
    """Grouped bars of Normal/EPO/SEO/ALL per split."""
    classes = ["Normal", "EPO", "SEO", "ALL"]
    splits = list(table)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize())
        width = 0.8 / max(len(splits), 1)
        for i, split in enumerate(splits):
            xs = [c + i * width for c in range(len(classes))]
            ax.bar(xs, [table[split][c] for c in classes], width, label=split)
        ax.set_xticks([c + 0.4 - width / 2 for c in range(len(classes))])
        ax.set_xticklabels(classes)
        ax.set_ylabel("sentences")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_training(logs, path):
    """Loss and dev F1 per epoch; ``logs`` maps a run label to its epoch log."""
    with plt.rc_context(RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=figsize(1.2, 0.4))
        for label, log in logs.items():
            epochs = [e["epoch"] for e in log]
            ax1.plot(epochs, [e["loss"] for e in log], label=label)
            ax2.plot(epochs, [e["dev_f1"] for e in log], label=label)
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("training loss")
        ax1.set_yscale("log")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("dev F1")
        ax2.set_ylim(0, 1.02)
        if len(logs) > 1:
            ax2.legend(frameon=False)
        return _save(fig, path)


def plot_subsets(reports, path):
    """F1 per subset; ``reports`` maps a match mode to its subset dictionary."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize())
        modes = list(reports)
        names = list(next(iter(reports.values())).keys()) if reports else []
        width = 0.8 / max(len(modes), 1)
        for i, mode in enumerate(modes):
            ax.bar([j + i * width for j in range(len(names))],
                   [100 * reports[mode][n]["f1"] for n in names], width, label=mode)
        ax.set_xticks([j + 0.4 - width / 2 for j in range(len(names))])
        ax.set_xticklabels(names, rotation=30)
        ax.set_ylabel("F1 (%)")
        ax.set_ylim(0, 105)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_ablation(rows, path):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize())
        ok = [r for r in rows if "error" not in r]
        ax.bar([r["variant"] for r in ok], [100 * r["f1"] for r in ok],
               yerr=[100 * r["f1_std"] for r in ok], capsize=3, color="0.5")
        ax.set_ylabel("F1 (%)")
        ax.set_ylim(0, 105)
        ax.tick_params(axis="x", rotation=30)
        return _save(fig, path)
