"""Objective metrics and corpus statistics.

All metrics are pure functions over numpy arrays.  Predicted and reference
spectrograms rarely share a length, so mel_mse first matches lengths with a
nearest-neighbor resize: index copying keeps duration errors visible in the
score, which is the point of comparing against a fixed reference rather than
time-warping onto it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError, ShapeError

PROPERTIES = ("speaking_rate", "pitch_mean", "pitch_std", "energy_mean", "energy_std")
LEVELS = ("utterance_level", "word_level")

_BAND = 10


@dataclass
class MelMseReport:
    full: float
    high10: float
    low10: float
    direction: str = ""
    method: str = ""

    def __post_init__(self):
        for name in ("full", "high10", "low10"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise NumericalError(f"mel MSE {name} is {v}")


@dataclass
class CorrelationReport:
    """Pearson r and sample size per (property, level)."""

    r: dict = field(default_factory=dict)       # (property, level) -> float
    n: dict = field(default_factory=dict)       # (property, level) -> int

    def set(self, prop: str, level: str, r: float, n: int) -> None:
        if not -1.0 - 1e-9 <= r <= 1.0 + 1e-9:
            raise NumericalError(f"correlation {prop}/{level} out of range: {r}")
        self.r[(prop, level)] = float(np.clip(r, -1.0, 1.0))
        self.n[(prop, level)] = int(n)

    def get(self, prop: str, level: str) -> float:
        return self.r[(prop, level)]


def nn_resize(mel: np.ndarray, target_len: int) -> np.ndarray:
    """Length-match a (T, M) matrix by nearest-neighbor frame copying."""
    mel = np.asarray(mel)
    if mel.ndim != 2:
        raise ShapeError(f"expected (frames, bins), got shape {mel.shape}")
    if target_len < 1:
        raise ShapeError(f"target_len must be >= 1, got {target_len}")
    n_src = mel.shape[0]
    idx = (np.arange(target_len) * n_src) // target_len
    return mel[idx]


def mel_mse(pred: np.ndarray, truth: np.ndarray, direction: str = "",
            method: str = "") -> MelMseReport:
    """Full-band and band-split MSE after resizing pred to truth's length."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.ndim != 2 or truth.ndim != 2:
        raise ShapeError("mel_mse expects 2-D (frames, bins) inputs")
    if pred.shape[1] != truth.shape[1]:
        raise ShapeError(
            f"mel bin mismatch: pred has {pred.shape[1]}, truth has {truth.shape[1]}")
    if truth.shape[1] < 2 * _BAND:
        raise ShapeError(f"band-split MSE needs >= {2 * _BAND} bins, got {truth.shape[1]}")
    aligned = nn_resize(pred, truth.shape[0])
    err = (aligned - truth) ** 2
    return MelMseReport(
        full=float(err.mean()),
        high10=float(err[:, -_BAND:].mean()),
        low10=float(err[:, :_BAND].mean()),
        direction=direction, method=method)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"pearson expects equal-length vectors, got {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ShapeError("pearson needs at least 2 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0.0 or sy == 0.0:
        raise NumericalError("correlation undefined: an input has zero variance")
    return float((xc * yc).sum() / (sx * sy))


def utterance_speaking_rate(n_words: int, n_frames: int, frame_shift_ms: float) -> float:
    return n_words / (n_frames * frame_shift_ms / 1000.0)


def _utt_props(utt) -> dict:
    f0 = utt.f0_track
    voiced = f0[f0 > 0]
    if voiced.size == 0:
        voiced = f0
    return {
        "speaking_rate": utterance_speaking_rate(
            utt.n_words, utt.n_frames, utt.mel.frame_shift_ms),
        "pitch_mean": float(voiced.mean()),
        "pitch_std": float(voiced.std()),
        "energy_mean": float(utt.energy_track.mean()),
        "energy_std": float(utt.energy_track.std()),
    }


def _word_props(utt, w: int) -> dict:
    a, b = utt.word_spans[w]
    f0 = utt.f0_track[a:b]
    en = utt.energy_track[a:b]
    n_phon = sum(1 for x in utt.word_of_phoneme if x == w)
    dur_s = (b - a) * utt.mel.frame_shift_ms / 1000.0
    voiced = f0[f0 > 0]
    if voiced.size == 0:
        voiced = f0
    return {
        "speaking_rate": n_phon / dur_s,
        "pitch_mean": float(voiced.mean()),
        "pitch_std": float(voiced.std()),
        "energy_mean": float(en.mean()),
        "energy_std": float(en.std()),
    }


def corpus_statistics(pairs) -> CorrelationReport:
    """Cross-language Pearson correlations of audio properties.

    Utterance-level rows pair whole utterances; word-level rows pair only the
    mapped words, skipping pairs with an empty word map.
    """
    if len(pairs) < 2:
        raise DataError(f"corpus statistics need >= 2 pairs, got {len(pairs)}")

    report = CorrelationReport()
    u1 = [_utt_props(p.utt1) for p in pairs]
    u2 = [_utt_props(p.utt2) for p in pairs]
    for prop in PROPERTIES:
        x = [d[prop] for d in u1]
        y = [d[prop] for d in u2]
        report.set(prop, "utterance_level", pearson(x, y), len(x))

    w1, w2 = [], []
    for p in pairs:
        for i, j in p.word_map.items():
            w1.append(_word_props(p.utt1, i))
            w2.append(_word_props(p.utt2, j))
    if len(w1) < 2:
        raise DataError("corpus statistics need >= 2 mapped words for word-level rows")
    for prop in PROPERTIES:
        x = [d[prop] for d in w1]
        y = [d[prop] for d in w2]
        report.set(prop, "word_level", pearson(x, y), len(x))
    return report
