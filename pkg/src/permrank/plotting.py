"""Figures written next to the CSV reports (Agg backend, no pyplot state)."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

# PNG output carries no timestamp; pin the software tag so files depend only on data
_PNG_META = {"Software": "permrank"}


def _save(fig: Figure, path: str) -> None:
    FigureCanvasAgg(fig)
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)


def plot_trace(trace: Sequence[float], path: str, ylabel: str = "objective", title: str = "") -> None:
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot(1, 1, 1)
    ax.plot(np.arange(len(trace)), trace, lw=1.5, color="C0")
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_eval(taus: Sequence[float], ndcgs: Sequence[float], k: int, path: str) -> None:
    fig = Figure(figsize=(8, 3.5))
    ax1, ax2 = fig.add_subplot(1, 2, 1), fig.add_subplot(1, 2, 2)
    bins = np.linspace(-1, 1, 21)
    ax1.hist(taus, bins=bins, color="C0", edgecolor="white")
    if len(taus):
        ax1.axvline(float(np.mean(taus)), color="k", ls="--", lw=1)
    ax1.set_xlabel("Kendall tau (held-out)")
    ax1.set_ylabel("users")
    ax2.hist(ndcgs, bins=np.linspace(0, 1, 21), color="C1", edgecolor="white")
    if len(ndcgs):
        ax2.axvline(float(np.mean(ndcgs)), color="k", ls="--", lw=1)
    ax2.set_xlabel(f"NDCG@{k}")
    fig.tight_layout()
    _save(fig, path)


def plot_sample_frequencies(labels: Sequence[str], counts: Sequence[int], path: str, top: int = 30) -> None:
    order = np.argsort(-np.asarray(counts), kind="stable")[:top]
    fig = Figure(figsize=(8, 3.5))
    ax = fig.add_subplot(1, 1, 1)
    ax.bar(np.arange(order.size), np.asarray(counts)[order], color="C2")
    ax.set_xticks(np.arange(order.size))
    ax.set_xticklabels([labels[i] for i in order], rotation=90, fontsize=6)
    ax.set_ylabel("visits")
    fig.tight_layout()
    _save(fig, path)
