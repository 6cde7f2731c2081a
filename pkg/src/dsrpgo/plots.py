"""Matplotlib figure rendering for the report paths.

Every command that emits delimited output also renders a figure next to it.
Figures are written through the Agg backend with fixed dpi and empty
metadata so re-runs are byte-stable.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def _save(fig, path):
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def loss_curves(curves, path, title="pretraining loss"):
    """curves: mapping label -> list of {'epoch', 'loss'} rows."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rows in curves.items():
        ax.plot([r["epoch"] for r in rows], [r["loss"] for r in rows], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def metric_curves(rows, path, keys=("fmax", "m-aupr", "M-aupr", "f1", "acc")):
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [r["epoch"] for r in rows if keys[0] in r]
    for key in keys:
        ax.plot(epochs, [r[key] for r in rows if key in r], label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation metric")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def db_bars(db_scores, path):
    """Bar chart of Davies-Bouldin scores per embedding family (lower = better)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    names = list(db_scores)
    ax.bar(range(len(names)), [db_scores[n] for n in names], color="#4878a8")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("Davies-Bouldin score")
    fig.tight_layout()
    _save(fig, path)


def ablation_bars(table, path, metric="fmax"):
    """table: list of (configuration name, {metric: value}) pairs."""
    fig, ax = plt.subplots(figsize=(7, 4))
    names = [name for name, _ in table]
    ax.bar(range(len(names)), [vals[metric] for _, vals in table], color="#6a9a58")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(metric)
    fig.tight_layout()
    _save(fig, path)
