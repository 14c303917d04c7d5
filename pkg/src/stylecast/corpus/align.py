"""Frame-to-word alignment weights.

The local style encoder pools frame features into one vector per word using
a (n_frames, n_words) weight matrix whose columns are convex: column w is a
uniform distribution over the frames of word w.  Three providers cover the
cases we need: exact spans carried by the utterance, spans read back from an
alignment file, and a words-don't-matter even split for data without any
timing information.
"""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateAlignmentError
from .types import Utterance

PROVIDERS = ("span", "even")


def spans_to_weights(spans, n_frames: int) -> np.ndarray:
    """Turn word spans into pooling weights.  Raises on empty spans."""
    weights = np.zeros((n_frames, len(spans)), dtype=np.float32)
    for w, (start, end) in enumerate(spans):
        length = end - start
        if length <= 0:
            raise DegenerateAlignmentError(
                f"word {w} has empty span [{start}, {end})")
        if end > n_frames:
            raise DegenerateAlignmentError(
                f"word {w} span [{start}, {end}) exceeds {n_frames} frames")
        weights[start:end, w] = 1.0 / length
    return weights


def even_weights(n_frames: int, n_words: int) -> np.ndarray:
    """Even partition of the frame axis, remainder to the last word."""
    if n_words <= 0 or n_frames < n_words:
        raise DegenerateAlignmentError(
            f"cannot split {n_frames} frames into {n_words} words")
    per = n_frames // n_words
    spans = [(w * per, (w + 1) * per) for w in range(n_words - 1)]
    spans.append(((n_words - 1) * per, n_frames))
    return spans_to_weights(spans, n_frames)


def alignment_weights(utt: Utterance, provider: str = "span") -> np.ndarray:
    if provider == "span":
        return spans_to_weights(utt.word_spans, utt.n_frames)
    if provider == "even":
        return even_weights(utt.n_frames, utt.n_words)
    raise ValueError(f"unknown alignment provider {provider!r}; expected one of {PROVIDERS}")
