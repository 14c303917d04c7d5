"""Text embeddings, local text encoding, and text/style fusion.

Two embedding providers share one interface: a synthetic hash embedder for
the pseudo-language corpus (each word symbol maps to a fixed pseudo-random
vector, and the sentence vector is the mean of the word vectors), and an
adapter that reads precomputed contextual embeddings from disk, averaging
subword vectors into word vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch.nn as nn

from .corpus.io import read_matrix
from .errors import ConfigError, IngestionError, ShapeError
from .nnutil import CBHG, PreNet
from .util import rng_for

_EMBED_SALT = "text-embed-v1"


@dataclass
class TextEmbeddings:
    sentence_vec: np.ndarray        # (d_b,)
    word_vecs: np.ndarray           # (l, d_b)

    def __post_init__(self):
        self.sentence_vec = np.asarray(self.sentence_vec, dtype=np.float32)
        self.word_vecs = np.asarray(self.word_vecs, dtype=np.float32)
        if self.word_vecs.ndim != 2 or self.sentence_vec.ndim != 1:
            raise ShapeError("TextEmbeddings needs (l, d_b) word_vecs and (d_b,) sentence_vec")
        if self.word_vecs.shape[1] != self.sentence_vec.shape[0]:
            raise ShapeError("sentence and word embedding widths disagree")
        if not (np.isfinite(self.sentence_vec).all() and np.isfinite(self.word_vecs).all()):
            raise ShapeError("non-finite text embedding")


class SyntheticEmbedder:
    """Deterministic hash embedder over word symbols.

    Vectors are near-orthogonal at d_b >= 32, which is all the downstream
    encoders need from a stand-in for a contextual model.
    """

    name = "synthetic"

    def __init__(self, d_b: int):
        self.d_b = d_b
        self._cache: dict[str, np.ndarray] = {}

    def word_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            rng = rng_for(_EMBED_SALT, token, self.d_b)
            vec = (rng.standard_normal(self.d_b) / np.sqrt(self.d_b)).astype(np.float32)
            self._cache[token] = vec
        return vec

    def embed(self, tokens, key: str | None = None) -> TextEmbeddings:
        if len(tokens) == 0:
            raise ShapeError("cannot embed an empty token list")
        word_vecs = np.stack([self.word_vector(t) for t in tokens])
        return TextEmbeddings(sentence_vec=word_vecs.mean(axis=0), word_vecs=word_vecs)


def average_subwords(subword_vecs: np.ndarray, word_ids, n_words: int) -> np.ndarray:
    """Average subword vectors into word vectors.

    word_ids[s] is the word index of subword s; every word must own at least
    one subword.
    """
    subword_vecs = np.asarray(subword_vecs, dtype=np.float32)
    if subword_vecs.ndim != 2 or len(word_ids) != subword_vecs.shape[0]:
        raise ShapeError("need one word id per subword vector")
    out = np.zeros((n_words, subword_vecs.shape[1]), dtype=np.float64)
    counts = np.zeros(n_words, dtype=np.int64)
    for s, w in enumerate(word_ids):
        if not 0 <= w < n_words:
            raise ShapeError(f"subword {s} points at word {w}, out of range")
        out[w] += subword_vecs[s]
        counts[w] += 1
    if (counts == 0).any():
        missing = int(np.argmax(counts == 0))
        raise IngestionError(f"word {missing} has no subword embeddings")
    return (out / counts[:, None]).astype(np.float32)


class ExternalEmbedder:
    """Reads precomputed embeddings: per utterance key, a sentence vector
    ("<key>.sent.bin"), a subword matrix ("<key>.sub.bin"), and a text file
    mapping each subword row to its word index ("<key>.map.txt").
    """

    name = "external"

    def __init__(self, directory, d_b: int):
        self.directory = Path(directory)
        self.d_b = d_b
        if not self.directory.is_dir():
            raise ConfigError(f"embeddings directory not found: {self.directory}")

    def embed(self, tokens, key: str | None = None) -> TextEmbeddings:
        if key is None:
            raise IngestionError("external embedder needs an utterance key")
        sent, _, _ = read_matrix(self.directory / f"{key}.sent.bin")
        sub, _, _ = read_matrix(self.directory / f"{key}.sub.bin")
        map_path = self.directory / f"{key}.map.txt"
        try:
            word_ids = [int(line) for line in
                        map_path.read_text().split()]
        except OSError as exc:
            raise IngestionError(f"cannot read {map_path}: {exc}") from exc
        if sent.shape != (1, self.d_b) or sub.shape[1] != self.d_b:
            raise IngestionError(
                f"{key}: embedding width must be {self.d_b}, got "
                f"sent {sent.shape} sub {sub.shape}")
        word_vecs = average_subwords(sub, word_ids, len(tokens))
        return TextEmbeddings(sentence_vec=sent[0], word_vecs=word_vecs)


def get_text_provider(name: str, d_b: int, directory: str = ""):
    if name == "synthetic":
        return SyntheticEmbedder(d_b)
    if name == "external":
        return ExternalEmbedder(directory, d_b)
    raise ConfigError(f"text_provider: unknown provider {name!r}")


def embed_text(utt, provider, key: str | None = None) -> TextEmbeddings:
    emb = provider.embed(utt.tokens, key=key)
    if emb.word_vecs.shape[0] != utt.n_words:
        raise ShapeError(
            f"provider returned {emb.word_vecs.shape[0]} word vectors for "
            f"{utt.n_words} words")
    return emb


class LocalTextEncoder(nn.Module):
    """Pre-net + CBHG word-sequence encoder, one instance per language and
    per role (textual vs multimodal); instances never share parameters."""

    def __init__(self, d_in: int, d_e: int = 64, dropout: float = 0.5):
        super().__init__()
        self.d_in = d_in
        self.prenet = PreNet(d_in, sizes=(128, 64), dropout=dropout)
        self.cbhg = CBHG(in_dim=64)
        self.out = nn.Linear(self.cbhg.out_dim, d_e)

    def forward(self, x, lengths):
        """(B, L, d_in), (B,) -> (B, L, d_e)."""
        if x.size(-1) != self.d_in:
            raise ShapeError(f"encoder expects width {self.d_in}, got {x.size(-1)}")
        y = self.prenet(x)
        y = self.cbhg(y, lengths)
        return self.out(y)


def fuse_global(sentence_vec: np.ndarray, gst_vec: np.ndarray) -> np.ndarray:
    """[sentence; GST] concatenation, the global multimodal feature."""
    sentence_vec = np.asarray(sentence_vec, dtype=np.float32)
    gst_vec = np.asarray(gst_vec, dtype=np.float32)
    if sentence_vec.ndim != 1 or gst_vec.ndim != 1:
        raise ShapeError("fuse_global expects two vectors")
    return np.concatenate([sentence_vec, gst_vec])


def fuse_local_inputs(word_vecs: np.ndarray, lst_rows: np.ndarray) -> np.ndarray:
    """Row-wise [BERT; LST] concatenation feeding the multimodal encoder."""
    word_vecs = np.asarray(word_vecs, dtype=np.float32)
    lst_rows = np.asarray(lst_rows, dtype=np.float32)
    if word_vecs.shape[0] != lst_rows.shape[0]:
        raise ShapeError(
            f"row count mismatch: {word_vecs.shape[0]} word vectors vs "
            f"{lst_rows.shape[0]} style rows")
    return np.concatenate([word_vecs, lst_rows], axis=1)
