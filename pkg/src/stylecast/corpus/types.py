"""Core data types for parallel utterance pairs."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import ShapeError


class Lang(Enum):
    L1 = 1
    L2 = 2

    @property
    def other(self) -> "Lang":
        return Lang.L2 if self is Lang.L1 else Lang.L1


@dataclass
class MelSpectrogram:
    """Log-mel magnitude matrix, frames along axis 0."""

    data: np.ndarray                 # (n_frames, n_mels) float32
    frame_shift_ms: float = 10.0
    window_ms: float = 25.0

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ShapeError(f"mel data must be 2-D, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ShapeError("mel data contains non-finite entries")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_mels(self) -> int:
        return self.data.shape[1]


@dataclass
class Utterance:
    lang: Lang
    tokens: list[str]
    phonemes: list[str]
    word_of_phoneme: list[int]       # phoneme index -> word index
    speaker_id: int
    mel: MelSpectrogram
    f0_track: np.ndarray             # (n_frames,) Hz, 0 where unvoiced
    energy_track: np.ndarray         # (n_frames,) linear RMS
    word_spans: list[tuple[int, int]]  # half-open frame intervals, per word

    def __post_init__(self) -> None:
        self.f0_track = np.asarray(self.f0_track, dtype=np.float32)
        self.energy_track = np.asarray(self.energy_track, dtype=np.float32)
        self.validate()

    def validate(self) -> None:
        n = self.mel.n_frames
        if n < 1 or len(self.tokens) < 1:
            raise ShapeError("utterance needs at least one frame and one word")
        if len(self.word_spans) != len(self.tokens):
            raise ShapeError("word_spans and tokens disagree on word count")
        if len(self.phonemes) != len(self.word_of_phoneme):
            raise ShapeError("each phoneme needs exactly one word index")
        prev_end = 0
        for w, (a, b) in enumerate(self.word_spans):
            if not (0 <= a < b <= n):
                raise ShapeError(f"word {w} span [{a},{b}) outside [0,{n})")
            if a < prev_end:
                raise ShapeError(f"word {w} span overlaps its predecessor")
            prev_end = b
        if any(not 0 <= w < len(self.tokens) for w in self.word_of_phoneme):
            raise ShapeError("word_of_phoneme index out of range")
        if self.f0_track.shape != (n,) or self.energy_track.shape != (n,):
            raise ShapeError("f0/energy tracks must have one value per frame")

    @property
    def n_words(self) -> int:
        return len(self.tokens)

    @property
    def n_frames(self) -> int:
        return self.mel.n_frames

    def word_durations_seconds(self) -> np.ndarray:
        shift_s = self.mel.frame_shift_ms / 1000.0
        return np.asarray([(b - a) * shift_s for a, b in self.word_spans], dtype=np.float64)

    def phoneme_durations(self) -> np.ndarray:
        """Per-phoneme durations in frames (even split inside each word,
        remainder on the last phoneme)."""
        durs = np.zeros(len(self.phonemes), dtype=np.int64)
        for w, (a, b) in enumerate(self.word_spans):
            idx = [p for p, wo in enumerate(self.word_of_phoneme) if wo == w]
            frames = b - a
            q, r = divmod(frames, len(idx))
            for p in idx[:-1]:
                durs[p] = q
            durs[idx[-1]] = q + r
        return durs


@dataclass
class SyntheticStyleSpec:
    """Ground-truth style parameters used to render a synthetic pair."""

    global_params: dict[str, float]          # pitch_offset, rate_factor, energy_offset
    word_params_l1: np.ndarray               # (l1, 3): emphasis, pitch excursion, log-lengthening
    word_params_l2: np.ndarray               # (l2, 3)
    rho: float
    permutation: list[int]                   # order in which mapped L1 words appear in L2

    PARAM_NAMES = ("emphasis_gain", "pitch_excursion", "log_lengthening")


@dataclass
class ParallelPair:
    pair_id: str
    utt1: Utterance
    utt2: Utterance
    word_map: dict[int, int]                 # L1 word index -> L2 word index
    style_truth: SyntheticStyleSpec | None = None

    def __post_init__(self) -> None:
        if len(set(self.word_map.values())) != len(self.word_map):
            raise ShapeError(f"{self.pair_id}: word_map is not injective")
        for i, j in self.word_map.items():
            if not (0 <= i < self.utt1.n_words and 0 <= j < self.utt2.n_words):
                raise ShapeError(f"{self.pair_id}: word_map entry ({i},{j}) out of range")


@dataclass
class ManifestEntry:
    pair_id: str
    lang1_text: str
    lang2_text: str
    lang1_mel_path: str
    lang2_mel_path: str
    speaker1: int
    speaker2: int
    alignment_path: str


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    split: str = "train"                     # train | test

    def __post_init__(self) -> None:
        ids = [e.pair_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ShapeError("manifest pair_ids are not unique")


@dataclass
class Corpus:
    """A set of pairs plus the statistics the models need for normalization."""

    pairs: list[ParallelPair]
    mel_mean: float = 0.0
    mel_std: float = 1.0
    pitch_mean: float = 0.0
    pitch_std: float = 1.0
    energy_mean: float = 0.0
    energy_std: float = 1.0
    stats_by_lang: dict[str, dict[str, float]] = field(default_factory=dict)

    def compute_stats(self) -> None:
        mels = np.concatenate([u.mel.data.ravel() for p in self.pairs for u in (p.utt1, p.utt2)])
        self.mel_mean = float(mels.mean())
        self.mel_std = float(mels.std() + 1e-8)
        for lang in Lang:
            utts = [p.utt1 if lang is Lang.L1 else p.utt2 for p in self.pairs]
            f0 = np.concatenate([u.f0_track[u.f0_track > 0] for u in utts])
            en = np.concatenate([u.energy_track for u in utts])
            self.stats_by_lang[lang.name] = {
                "pitch_mean": float(f0.mean()),
                "pitch_std": float(f0.std() + 1e-8),
                "energy_mean": float(en.mean()),
                "energy_std": float(en.std() + 1e-8),
            }
        self.pitch_mean = float(np.mean([s["pitch_mean"] for s in self.stats_by_lang.values()]))
        self.pitch_std = float(np.mean([s["pitch_std"] for s in self.stats_by_lang.values()]))
        self.energy_mean = float(np.mean([s["energy_mean"] for s in self.stats_by_lang.values()]))
        self.energy_std = float(np.mean([s["energy_std"] for s in self.stats_by_lang.values()]))
