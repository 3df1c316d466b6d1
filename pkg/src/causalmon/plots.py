"""Static figure rendering for the report path: statistic traces with
control limits, loss curves, adjacency heatmaps, and the diagnosis
subgraph.  Everything is written to vector files; nothing is shown."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_statistic_trace(trace, path, title=None, onset=None):
    """Two stacked panels (feature-space and residual statistics) with the
    control limits as dashed lines."""
    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for ax, values, limit, name in (
            (axes[0], trace.t2, trace.alpha_t2, "T2"),
            (axes[1], trace.spe, trace.alpha_spe, "SPE")):
        ax.plot(trace.index, values, lw=0.8, color="tab:blue")
        ax.axhline(limit, color="red", ls="--", lw=1.0, label="control limit")
        if onset is not None:
            ax.axvline(onset, color="green", ls=":", lw=1.0, label="fault onset")
        ax.set_yscale("log")
        ax.set_ylabel(name)
        ax.legend(loc="upper left", fontsize=8)
    axes[1].set_xlabel("sample")
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_loss_curves(history_rows, path):
    """Per-stage epoch curves of the training objective and validation metric."""
    stages = []
    for row in history_rows:
        if row["stage"] not in stages:
            stages.append(row["stage"])
    fig, axes = plt.subplots(1, max(len(stages), 1), figsize=(4 * max(len(stages), 1), 3.2),
                             squeeze=False)
    for ax, stage in zip(axes[0], stages):
        rows = [r for r in history_rows if r["stage"] == stage]
        epochs = [r["epoch"] for r in rows]
        ax.plot(epochs, [r["total"] for r in rows], label="objective")
        ax.plot(epochs, [r["val"] for r in rows], label="validation")
        ax.set_title(stage)
        ax.set_xlabel("epoch")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_adjacency(adjacency, path, tags=None, title=None):
    adjacency = np.asarray(adjacency, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    im = ax.imshow(adjacency, vmin=0.0, vmax=1.0, cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.85)
    if tags is not None and len(tags) <= 30:
        ax.set_xticks(range(len(tags)))
        ax.set_yticks(range(len(tags)))
        ax.set_xticklabels(tags, rotation=90, fontsize=6)
        ax.set_yticklabels(tags, fontsize=6)
    ax.set_xlabel("effect")
    ax.set_ylabel("cause")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_contributions(peak_contributions, alpha_spe, path, tags=None):
    """Peak per-variable contribution over the diagnosis interval against
    the residual control limit."""
    values = np.asarray(peak_contributions, dtype=np.float64)
    n = len(values)
    labels = tags if tags is not None else [str(i + 1) for i in range(n)]
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * n), 3.5))
    colors = ["tab:red" if v > alpha_spe else "tab:blue" for v in values]
    ax.bar(range(n), values, color=colors)
    ax.axhline(alpha_spe, color="red", ls="--", lw=1.0, label="residual limit")
    ax.set_xticks(range(n))
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_ylabel("peak contribution")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_subgraph(subgraph, path, tags=None):
    """Circular layout of the fault-propagation subgraph: fault nodes red,
    added normal nodes grey, sources outlined."""
    nodes = subgraph.nodes
    n = len(nodes)
    angles = np.linspace(0.5 * np.pi, 0.5 * np.pi + 2 * np.pi, n, endpoint=False)
    pos = {v: (np.cos(a), np.sin(a)) for v, a in zip(nodes, angles)}
    fault = set(subgraph.fault_nodes)
    sources = set(subgraph.source_nodes)

    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    for i, j in subgraph.edges:
        x0, y0 = pos[i]
        x1, y1 = pos[j]
        ax.annotate("", xy=(x1, y1), xytext=(x0, y0),
                    arrowprops=dict(arrowstyle="-|>", color="0.5", lw=1.0,
                                    shrinkA=14, shrinkB=14))
    for v in nodes:
        x, y = pos[v]
        color = "tab:red" if v in fault else "0.8"
        edge = "black" if v in sources else "none"
        ax.scatter([x], [y], s=550, c=color, edgecolors=edge, linewidths=2.0, zorder=3)
        name = tags[v] if tags is not None else str(v + 1)
        ax.text(x, y, name, ha="center", va="center", fontsize=7, zorder=4)
    ax.set_xlim(-1.35, 1.35)
    ax.set_ylim(-1.35, 1.35)
    ax.set_aspect("equal")
    ax.axis("off")
    ax.set_title("fault subgraph (red: fault, outlined: source)", fontsize=9)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
