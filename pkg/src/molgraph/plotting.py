"""Figure rendering for CLI report paths; every figure lands next to its CSV."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_line_figure(path, xs, series: dict, xlabel: str, ylabel: str,
                     title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ys in series.items():
        ax.plot(xs, ys, marker="o", markersize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(Path(path), dpi=150)
    plt.close(fig)


def save_heatmap(path, matrix, title: str = "", xlabel: str = "key",
                 ylabel: str = "query") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    image = ax.imshow(matrix, aspect="auto", cmap="viridis")
    fig.colorbar(image, ax=ax)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=150)
    plt.close(fig)


def save_bar_figure(path, labels, values, ylabel: str, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(labels)), values)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=150)
    plt.close(fig)
