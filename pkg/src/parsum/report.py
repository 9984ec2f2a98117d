"""Figure rendering for the pipeline's reporting paths.

All figures go straight to PNG files (headless backend); each helper returns
the path it wrote so callers can mention it in their summary records.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .corpus import HISTOGRAM_EDGES, CorpusStats  # noqa: E402


def _bucket_labels() -> list[str]:
    edges = list(HISTOGRAM_EDGES)
    labels = [f"{lo}–{hi}" for lo, hi in zip(edges, edges[1:])]
    labels.append(f"{edges[-1]}+")
    return labels


def save_length_histogram(stats: CorpusStats, path: str | Path) -> Path:
    """Side-by-side token-count histograms for articles and summaries."""
    path = Path(path)
    labels = _bucket_labels()
    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    for ax, counts, title in (
        (axes[0], stats.article_token_histogram, "Article length (tokens)"),
        (axes[1], stats.summary_token_histogram, "Summary length (tokens)"),
    ):
        ax.bar(range(len(counts)), counts, color="#4878a8")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
        ax.set_title(title)
        ax.set_ylabel("documents")
    fig.suptitle(f"{stats.record_count} records")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_loss_curve(losses, evals, path: str | Path) -> Path:
    """Training loss per step with validation points overlaid."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    if losses:
        ax.plot(range(1, len(losses) + 1), losses, lw=0.8, color="#4878a8",
                label="train loss")
    if evals:
        ax.plot([e.step for e in evals], [e.val_loss for e in evals],
                "o-", color="#c23b22", label="validation loss")
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy")
    ax.set_yscale("log")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_score_histogram(f1_values, path: str | Path) -> Path:
    """Distribution of per-pair F1 scores from an evaluation run."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(list(f1_values), bins=20, range=(0.0, 1.0), color="#4878a8",
            edgecolor="white")
    ax.set_xlabel("pair F1")
    ax.set_ylabel("pairs")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
