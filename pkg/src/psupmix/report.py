"""Figure rendering for evaluation, training and benchmark reports.

Each CSV the CLI writes gets a companion PNG next to it.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _figure_path(csv_path):
    return str(csv_path).rsplit(".", 1)[0] + ".png"


def render_eval_figure(rows, csv_path) -> str:
    """Grouped bars of mean e_min / d_f per approach.

    ``rows`` are (excerpt, approach, e_min, d_f) tuples, summary excluded.
    """
    approaches = sorted({r[1] for r in rows})
    e_means = [np.mean([r[2] for r in rows if r[1] == a]) for a in approaches]
    d_means = [np.mean([r[3] for r in rows if r[1] == a]) for a in approaches]
    x = np.arange(len(approaches))
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].bar(x, e_means, color="tab:blue")
    axes[0].set_xticks(x, approaches)
    axes[0].set_ylabel("$E_{min}$")
    axes[1].bar(x, d_means, color="tab:orange")
    axes[1].set_xticks(x, approaches)
    axes[1].set_ylabel("$D_F$")
    for ax in axes:
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    out = _figure_path(csv_path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_training_figure(log, csv_path) -> str:
    """Loss and learning-rate curves from (step, lr, loss, w_mean) rows."""
    steps = [r[0] for r in log]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, [r[2] for r in log], color="tab:blue", label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    twin = ax.twinx()
    twin.plot(steps, [r[1] for r in log], color="tab:gray", alpha=0.7, label="lr")
    twin.set_ylabel("learning rate")
    fig.tight_layout()
    out = _figure_path(csv_path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_bench_figure(rows, csv_path) -> str:
    """Real-time-factor bars per approach from (approach, params, rtf) rows."""
    approaches = [r[0] for r in rows]
    rtfs = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(np.arange(len(approaches)), rtfs, color="tab:green")
    ax.set_xticks(np.arange(len(approaches)), approaches)
    ax.set_yscale("log")
    ax.set_ylabel("real-time factor")
    ax.axhline(1.0, color="k", linewidth=0.8, linestyle="--")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    out = _figure_path(csv_path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
