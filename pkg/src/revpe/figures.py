"""Matplotlib renderings written next to the delimited report files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_slice_figure", "save_loss_trace_figure", "save_comparison_figure"]


def save_slice_figure(path, data: np.ndarray, title: str, cmap: str = "gray") -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    im = ax.imshow(np.asarray(data), cmap=cmap, interpolation="nearest")
    ax.set_title(title)
    ax.set_xlabel("PE")
    ax.set_ylabel("FE")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)


def save_loss_trace_figure(path, traces: list[list[float]], title: str = "loss trace") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    offset = 0
    for li, trace in enumerate(traces):
        xs = np.arange(offset, offset + len(trace))
        ax.semilogy(xs, trace, marker=".", label=f"level {li}")
        offset += len(trace)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("objective")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)


def save_comparison_figure(path, reference: np.ndarray, test: np.ndarray, title: str) -> None:
    diff = np.abs(np.asarray(reference) - np.asarray(test))
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    for ax, data, sub in zip(
        axes, (reference, test, diff), ("reference", "test", "|difference|")
    ):
        im = ax.imshow(np.asarray(data), cmap="gray", interpolation="nearest")
        ax.set_title(sub)
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)
