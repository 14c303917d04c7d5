"""Inspection plots: annotated mel spectrograms and attention heatmaps."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .corpus.types import Utterance


def plot_mel(utt: Utterance, path, highlight: list[int] | None = None) -> Path:
    """Mel spectrogram with word-span boxes; highlighted words in red."""
    highlight = set(highlight or [])
    mel = utt.mel.data
    fig, ax = plt.subplots(figsize=(max(6, mel.shape[0] / 12), 4))
    ax.imshow(mel.T, origin="lower", aspect="auto", cmap="magma",
              interpolation="nearest")
    for w, (a, b) in enumerate(utt.word_spans):
        color = "red" if w in highlight else "deepskyblue"
        ax.add_patch(plt.Rectangle((a - 0.5, -0.5), b - a, mel.shape[1],
                                   fill=False, edgecolor=color, linewidth=1.5))
        ax.text((a + b) / 2, mel.shape[1] - 1.2, utt.tokens[w], color=color,
                ha="center", va="top", fontsize=8)
    ax.set_xlabel("frame")
    ax.set_ylabel("mel bin")
    ax.set_title(" ".join(utt.tokens))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_attention(weights: np.ndarray, path, tokens1=None, tokens2=None,
                   title: str = "word attention") -> Path:
    """Heatmap of an (l2, l1) or (l1, l2) attention weight matrix."""
    weights = np.asarray(weights)
    if weights.ndim != 2:
        raise ValueError(f"expected a 2-D weight matrix, got {weights.shape}")
    fig, ax = plt.subplots(figsize=(4 + 0.3 * weights.shape[1],
                                    3 + 0.3 * weights.shape[0]))
    im = ax.imshow(weights, origin="upper", aspect="auto", cmap="viridis",
                   vmin=0.0)
    fig.colorbar(im, ax=ax, shrink=0.8)
    if tokens2 is not None:
        ax.set_yticks(range(len(tokens2)), tokens2, fontsize=8)
    if tokens1 is not None:
        ax.set_xticks(range(len(tokens1)), tokens1, fontsize=8, rotation=45)
    ax.set_title(title)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
