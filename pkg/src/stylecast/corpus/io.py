"""On-disk corpus formats: mel container, alignment files, JSONL manifests.

The mel container is a small self-describing binary: magic, version, shape,
frame timing, then float32 rows.  Pitch and energy tracks ride along as
sidecar files next to each mel ("<mel>.f0.bin", "<mel>.en.bin") so a written
corpus round-trips exactly; when sidecars are missing the loader falls back
to proxies recovered from the spectrogram itself.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..config import CorpusConfig
from ..errors import IngestionError
from . import lexicon
from .render import mel_bin_centers
from .types import Corpus, Lang, ManifestEntry, MelSpectrogram, ParallelPair, Utterance

_MAGIC = b"MELB"
_VERSION = 1
_HEADER = struct.Struct("<4sBIIff")


def write_matrix(data: np.ndarray, path, frame_shift_ms: float = 0.0,
                 window_ms: float = 0.0) -> None:
    data = np.ascontiguousarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {data.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, data.shape[0], data.shape[1],
                              frame_shift_ms, window_ms))
        fh.write(data.tobytes())


def read_matrix(path):
    """Returns (data, frame_shift_ms, window_ms)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise IngestionError(f"{path}: truncated header")
    magic, version, rows, cols, shift, window = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise IngestionError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise IngestionError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * rows * cols
    if len(blob) != expected:
        raise IngestionError(
            f"{path}: payload is {len(blob)} bytes, header implies {expected}")
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    return data.copy(), shift, window


def write_mel(mel: MelSpectrogram, path) -> None:
    write_matrix(mel.data, path, mel.frame_shift_ms, mel.window_ms)


def read_mel(path) -> MelSpectrogram:
    data, shift, window = read_matrix(path)
    return MelSpectrogram(data=data, frame_shift_ms=shift, window_ms=window)


def write_track(track: np.ndarray, path) -> None:
    write_matrix(np.asarray(track, dtype=np.float32).reshape(-1, 1), path)


def read_track(path) -> np.ndarray:
    data, _, _ = read_matrix(path)
    return data.reshape(-1)


def write_alignment(pair: ParallelPair, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["[lang1]"]
    lines += [f"{s} {e}" for s, e in pair.utt1.word_spans]
    lines.append("[lang2]")
    lines += [f"{s} {e}" for s, e in pair.utt2.word_spans]
    if pair.word_map:
        lines.append("[word_map]")
        lines += [f"{i} {j}" for i, j in sorted(pair.word_map.items())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_alignment(path):
    """Returns (spans1, spans2, word_map)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    sections: dict[str, list[tuple[int, int]]] = {"lang1": [], "lang2": [], "word_map": []}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current not in sections:
                raise IngestionError(f"{path}:{lineno}: unknown section [{current}]")
            continue
        if current is None:
            raise IngestionError(f"{path}:{lineno}: data before any section header")
        parts = line.split()
        if len(parts) != 2:
            raise IngestionError(f"{path}:{lineno}: expected two integers, got {line!r}")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError:
            raise IngestionError(f"{path}:{lineno}: non-integer field in {line!r}") from None
        sections[current].append((a, b))
    word_map = dict(sections["word_map"])
    if len(word_map) != len(sections["word_map"]):
        raise IngestionError(f"{path}: duplicate source index in [word_map]")
    return sections["lang1"], sections["lang2"], word_map


def _entry_to_record(entry: ManifestEntry) -> dict:
    return {
        "pair_id": entry.pair_id,
        "lang1_text": entry.lang1_text,
        "lang2_text": entry.lang2_text,
        "lang1_mel": entry.lang1_mel_path,
        "lang2_mel": entry.lang2_mel_path,
        "speaker1": entry.speaker1,
        "speaker2": entry.speaker2,
        "alignment": entry.alignment_path,
    }


def write_corpus(corpus: Corpus, out_dir, split: str = "train",
                 force: bool = False) -> Path:
    """Write mels, sidecar tracks, alignment files and the JSONL manifest.

    Paths inside the manifest are relative to the manifest's directory.
    """
    out_dir = Path(out_dir)
    manifest_path = out_dir / f"manifest_{split}.jsonl"
    if manifest_path.exists() and not force:
        raise FileExistsError(f"{manifest_path} already exists (use force to overwrite)")
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for pair in corpus.pairs:
        rel_mel1 = f"mels/{pair.pair_id}_l1.mel"
        rel_mel2 = f"mels/{pair.pair_id}_l2.mel"
        rel_align = f"align/{pair.pair_id}.align"
        for utt, rel in ((pair.utt1, rel_mel1), (pair.utt2, rel_mel2)):
            write_mel(utt.mel, out_dir / rel)
            write_track(utt.f0_track, out_dir / (rel + ".f0.bin"))
            write_track(utt.energy_track, out_dir / (rel + ".en.bin"))
        write_alignment(pair, out_dir / rel_align)
        entries.append(ManifestEntry(
            pair_id=pair.pair_id,
            lang1_text=" ".join(pair.utt1.tokens),
            lang2_text=" ".join(pair.utt2.tokens),
            lang1_mel_path=rel_mel1, lang2_mel_path=rel_mel2,
            speaker1=pair.utt1.speaker_id, speaker2=pair.utt2.speaker_id,
            alignment_path=rel_align))

    with open(manifest_path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(_entry_to_record(entry)) + "\n")
    return manifest_path


def _proxy_tracks(mel: MelSpectrogram):
    """Recover approximate energy and pitch tracks from a spectrogram."""
    power = np.exp(mel.data.astype(np.float64))
    energy = np.sqrt(power.mean(axis=1))
    centers = mel_bin_centers(mel.n_mels)
    low = max(2, mel.n_mels // 3)
    f0 = (power[:, :low] * centers[None, :low]).sum(axis=1) / \
        np.maximum(power[:, :low].sum(axis=1), 1e-12)
    return f0.astype(np.float32), energy.astype(np.float32)


def _load_utterance(base: Path, rel_mel: str, text: str, speaker: int,
                    spans, lang: Lang, cfg: CorpusConfig, pair_id: str) -> Utterance:
    mel_path = base / rel_mel
    if not mel_path.exists():
        raise IngestionError(f"pair {pair_id}: mel file not found: {mel_path}")
    mel = read_mel(mel_path)

    tokens = text.split()
    if not tokens:
        raise IngestionError(f"pair {pair_id}: empty {lang.value} text")
    if len(spans) != len(tokens):
        raise IngestionError(
            f"pair {pair_id}: alignment has {len(spans)} spans for "
            f"{len(tokens)} {lang.value} words")

    f0_path = Path(str(mel_path) + ".f0.bin")
    en_path = Path(str(mel_path) + ".en.bin")
    if f0_path.exists() and en_path.exists():
        f0, energy = read_track(f0_path), read_track(en_path)
        if f0.shape[0] != mel.n_frames or energy.shape[0] != mel.n_frames:
            raise IngestionError(
                f"pair {pair_id}: sidecar track length does not match "
                f"{mel.n_frames} frames")
    else:
        f0, energy = _proxy_tracks(mel)

    max_len = cfg.phonemes_max_l1 if lang is Lang.L1 else cfg.phonemes_max_l2
    phonemes, word_of_phoneme = [], []
    for w, tok in enumerate(tokens):
        ph = lexicon.phonemes_of(tok, lang, cfg.n_phoneme_symbols, max_len)
        phonemes.extend(ph)
        word_of_phoneme.extend([w] * len(ph))

    try:
        return Utterance(
            lang=lang, tokens=tokens, phonemes=phonemes,
            word_of_phoneme=word_of_phoneme, speaker_id=speaker, mel=mel,
            f0_track=f0, energy_track=energy,
            word_spans=[tuple(s) for s in spans])
    except ValueError as exc:
        raise IngestionError(f"pair {pair_id}: {exc}") from exc


def load_manifest(manifest_path, cfg: CorpusConfig) -> Corpus:
    """Read a JSONL manifest back into an in-memory corpus.

    Any malformed record is reported with its pair id rather than a bare
    stack trace, since manifests are the main ingestion point for external
    data.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise IngestionError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent

    pairs = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(
                    f"{manifest_path}:{lineno}: invalid JSON: {exc}") from exc
            missing = [k for k in ("pair_id", "lang1_text", "lang2_text",
                                   "lang1_mel", "lang2_mel", "speaker1",
                                   "speaker2", "alignment") if k not in rec]
            if missing:
                raise IngestionError(
                    f"{manifest_path}:{lineno}: record is missing {missing}")
            pair_id = rec["pair_id"]

            align_path = base / rec["alignment"]
            if not align_path.exists():
                raise IngestionError(
                    f"pair {pair_id}: alignment file not found: {align_path}")
            spans1, spans2, word_map = read_alignment(align_path)

            utt1 = _load_utterance(base, rec["lang1_mel"], rec["lang1_text"],
                                   int(rec["speaker1"]), spans1, Lang.L1, cfg, pair_id)
            utt2 = _load_utterance(base, rec["lang2_mel"], rec["lang2_text"],
                                   int(rec["speaker2"]), spans2, Lang.L2, cfg, pair_id)

            try:
                pair = ParallelPair(pair_id=pair_id, utt1=utt1, utt2=utt2,
                                    word_map=word_map, style_truth=None)
            except ValueError as exc:
                raise IngestionError(f"pair {pair_id}: {exc}") from exc
            pairs.append(pair)

    corpus = Corpus(pairs=pairs)
    corpus.compute_stats()
    return corpus
