"""Synthetic parallel-corpus generator.

Each pair couples two pseudo-language utterances that share a translation
relation, a common global style, and correlated word-level styles on the
translated words.  Everything downstream (style extraction, cross-lingual
transfer, evaluation) is exercised against corpora produced here.
"""

from __future__ import annotations

import numpy as np

from ..config import CorpusConfig
from ..util import stable_seed
from . import lexicon
from .render import StyleSlice, WordRenderSpec, render_mel
from .types import (Corpus, Lang, ParallelPair, SyntheticStyleSpec, Utterance)

# Hard clips keep rendered f0 and durations in a sane range; 2.5 sigma at the
# default widths, so the correlation structure is barely attenuated.
_CLIP_SIGMA = 2.5


def _draw_correlated(rng: np.random.Generator, z1: np.ndarray, rho: float) -> np.ndarray:
    eps = rng.standard_normal(z1.shape)
    return rho * z1 + np.sqrt(max(0.0, 1.0 - rho * rho)) * eps


def _scale_clip(z: np.ndarray, sigma: float) -> np.ndarray:
    return np.clip(z * sigma, -_CLIP_SIGMA * sigma, _CLIP_SIGMA * sigma)


def _word_params(rng, cfg: CorpusConfig, z_emph, z_exc, z_len) -> np.ndarray:
    cols = [
        _scale_clip(z_emph, cfg.word_energy_std),
        _scale_clip(z_exc, cfg.word_pitch_std),
        _scale_clip(z_len, cfg.word_length_std),
    ]
    return np.stack(cols, axis=1).astype(np.float64)


def _render_utterance(tokens, lang, speaker_id, style: StyleSlice,
                      cfg: CorpusConfig) -> Utterance:
    max_len = cfg.phonemes_max_l1 if lang is Lang.L1 else cfg.phonemes_max_l2
    phonemes_per_word = [
        lexicon.phonemes_of(tok, lang, cfg.n_phoneme_symbols, max_len)
        for tok in tokens
    ]
    words = [
        WordRenderSpec(phonemes=ph, base_frames=len(ph) * cfg.frames_per_phoneme)
        for ph in phonemes_per_word
    ]
    mel, f0, energy, spans, word_of_phoneme = render_mel(
        words, style, speaker_id, lang, cfg)
    flat = [p for ph in phonemes_per_word for p in ph]
    return Utterance(
        lang=lang, tokens=list(tokens), phonemes=flat,
        word_of_phoneme=word_of_phoneme, speaker_id=speaker_id, mel=mel,
        f0_track=f0, energy_track=energy, word_spans=spans)


def generate_pair(cfg: CorpusConfig, seed: int, pair_id: str | None = None) -> ParallelPair:
    """Deterministically generate one parallel pair from (config, seed)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    vocab = lexicon.vocabulary(Lang.L1, cfg.vocab_size)

    n1 = int(rng.integers(cfg.words_min, cfg.words_max + 1))
    l1_tokens = [vocab[int(i)] for i in rng.choice(cfg.vocab_size, size=n1, replace=False)]

    m = max(1, int(np.rint(cfg.match_fraction * n1)))
    mapped_l1 = sorted(int(i) for i in rng.choice(n1, size=m, replace=False))
    perm = rng.permutation(m) if cfg.shuffle_l2 else np.arange(m)

    n_extra = max(0, int(np.rint(m / cfg.match_fraction)) - m)
    mapped_tokens2 = {lexicon.translate(l1_tokens[i], cfg.vocab_size) for i in mapped_l1}
    vocab2 = [t for t in lexicon.vocabulary(Lang.L2, cfg.vocab_size)
              if t not in mapped_tokens2]
    extra_tokens = [vocab2[int(i)]
                    for i in rng.choice(len(vocab2), size=n_extra, replace=False)]

    # L2 word order: translated words in permuted order, extras spliced in at
    # random positions.  Track where each mapped slot ends up.
    items: list[tuple[str, int]] = [("mapped", int(k)) for k in perm]
    for tok_idx in range(n_extra):
        slot = int(rng.integers(0, len(items) + 1))
        items.insert(slot, ("extra", tok_idx))

    l2_tokens, word_map = [], {}
    for pos, (kind, idx) in enumerate(items):
        if kind == "mapped":
            i1 = mapped_l1[idx]
            l2_tokens.append(lexicon.translate(l1_tokens[i1], cfg.vocab_size))
            word_map[i1] = pos
        else:
            l2_tokens.append(extra_tokens[idx])
    n2 = len(l2_tokens)

    # Global style, shared exactly across the pair.
    pitch_offset = float(np.clip(rng.normal(0.0, cfg.global_pitch_std),
                                 -_CLIP_SIGMA * cfg.global_pitch_std,
                                 _CLIP_SIGMA * cfg.global_pitch_std))
    rate_factor = float(np.clip(np.exp(rng.normal(0.0, cfg.global_rate_std)), 0.7, 1.4))
    energy_offset = float(np.clip(rng.normal(0.0, cfg.global_energy_std),
                                  -_CLIP_SIGMA * cfg.global_energy_std,
                                  _CLIP_SIGMA * cfg.global_energy_std))

    # Word styles: unit draws first, then the mapped L2 words get a rho-mixed
    # copy of their L1 counterpart before scaling.
    z1 = rng.standard_normal((n1, 3))
    z2 = rng.standard_normal((n2, 3))
    for i1, j2 in word_map.items():
        z2[j2] = _draw_correlated(rng, z1[i1], cfg.rho)
    params1 = _word_params(rng, cfg, z1[:, 0], z1[:, 1], z1[:, 2])
    params2 = _word_params(rng, cfg, z2[:, 0], z2[:, 1], z2[:, 2])

    spk1 = int(rng.integers(0, cfg.n_speakers))
    spk2 = int(rng.integers(0, cfg.n_speakers))

    utt1 = _render_utterance(
        l1_tokens, Lang.L1, spk1,
        StyleSlice(pitch_offset, rate_factor, energy_offset, params1), cfg)
    utt2 = _render_utterance(
        l2_tokens, Lang.L2, spk2,
        StyleSlice(pitch_offset, rate_factor, energy_offset, params2), cfg)

    truth = SyntheticStyleSpec(
        global_params={"pitch_offset": pitch_offset, "rate_factor": rate_factor,
                       "energy_offset": energy_offset},
        word_params_l1=params1, word_params_l2=params2, rho=cfg.rho,
        permutation=[int(k) for k in perm])

    return ParallelPair(
        pair_id=pair_id if pair_id is not None else f"pair{seed:016x}",
        utt1=utt1, utt2=utt2, word_map=word_map, style_truth=truth)


def build_corpus(cfg: CorpusConfig, master_seed: int, n_pairs: int,
                 id_prefix: str = "pair") -> Corpus:
    """Generate a corpus of n_pairs pairs with per-pair hashed seeds."""
    pairs = []
    for i in range(n_pairs):
        seed = stable_seed(master_seed, i)
        pairs.append(generate_pair(cfg, seed, pair_id=f"{id_prefix}_{i:05d}"))
    corpus = Corpus(pairs=pairs)
    corpus.compute_stats()
    return corpus
