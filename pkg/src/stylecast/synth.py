"""Non-autoregressive synthesis backbone with multiscale style conditioning.

One model per language.  Phoneme encodings pass through attention blocks,
get concatenated with speaker/global/local style rows upsampled to phoneme
level, then a variance adaptor predicts duration, pitch, and energy and
expands to frame level for the mel decoder.  During pretraining the style
encoders train jointly with the backbone, and three adversarial heads behind
a gradient reversal layer strip speaker identity from both style scales and
text content from the local scale.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import PretrainConfig
from .corpus.align import spans_to_weights
from .corpus.types import MelSpectrogram, Utterance
from .corpus import lexicon
from .errors import NumericalError, ShapeError, TrainingDivergenceError
from .nnutil import (FFTBlock, LengthRegulator, VariancePredictor,
                     get_mask_from_lengths, grad_reverse, sinusoid_positions)
from .styleenc import GlobalStyleEncoder, LocalStyleEncoder

_DIVERGENCE_CEILING = 1e4


def split_word_frames(frames: int, n_phonemes: int) -> list[int]:
    """Distribute a word's frames evenly over its phonemes, remainder last."""
    if n_phonemes < 1:
        raise ShapeError("word needs at least one phoneme")
    q = frames // n_phonemes
    out = [q] * n_phonemes
    out[-1] = frames - q * (n_phonemes - 1)
    return out


def upsample_styles(gst_vec, lst_vecs, speaker_vec, word_of_phoneme) -> np.ndarray:
    """Phoneme-level conditioning rows [speaker; gst; lst[word_of[p]]].

    gst_vec or lst_vecs may be None when the corresponding scale is disabled;
    the layout simply omits that slice.
    """
    speaker_vec = np.asarray(speaker_vec, dtype=np.float32)
    parts_fixed = [speaker_vec]
    if gst_vec is not None:
        parts_fixed.append(np.asarray(gst_vec, dtype=np.float32))
    rows = []
    for p, w in enumerate(word_of_phoneme):
        parts = list(parts_fixed)
        if lst_vecs is not None:
            lst_vecs = np.asarray(lst_vecs, dtype=np.float32)
            if not 0 <= w < lst_vecs.shape[0]:
                raise ShapeError(
                    f"phoneme {p} maps to word {w}, but only "
                    f"{lst_vecs.shape[0]} style rows exist")
            parts.append(lst_vecs[w])
        rows.append(np.concatenate(parts))
    return np.stack(rows)


class AdversarialHeads(nn.Module):
    """Speaker heads on both style scales and a text head on the local
    scale, each behind a gradient reversal layer.  Pretraining only.

    Two-layer heads: a linear probe is too weak to create real pressure on
    the style encoders, so the reversed gradient barely strips anything."""

    def __init__(self, d_st: int, d_speaker: int, d_b: int, grl_lambda: float = 1.0,
                 hidden: int = 64):
        super().__init__()

        def head(out_dim):
            return nn.Sequential(nn.Linear(d_st, hidden), nn.ReLU(),
                                 nn.Linear(hidden, out_dim))

        self.spk_from_gst = head(d_speaker)
        self.spk_from_lst = head(d_speaker)
        self.bert_from_lst = head(d_b)
        self.grl_lambda = grl_lambda

    def forward(self, gst: torch.Tensor, lst: torch.Tensor):
        s_g = self.spk_from_gst(grad_reverse(gst, self.grl_lambda))
        s_l = self.spk_from_lst(grad_reverse(lst, self.grl_lambda))
        bert = self.bert_from_lst(grad_reverse(lst, self.grl_lambda))
        return s_g, s_l, bert


class SynthesisModel(nn.Module):
    def __init__(self, n_phonemes: int, n_mels: int, n_speakers: int,
                 d_model: int = 64, n_heads: int = 2, d_speaker: int = 16,
                 d_st: int = 64, d_b: int = 32, use_gst: bool = True,
                 use_lst: bool = True, grl_lambda: float = 1.0,
                 max_len: int = 4096):
        super().__init__()
        self.n_mels = n_mels
        self.use_gst = use_gst
        self.use_lst = use_lst
        self.d_st = d_st
        self.frame_shift_ms = 10.0
        self.window_ms = 25.0

        self.phoneme_emb = nn.Embedding(n_phonemes, d_model)
        self.speaker_emb = nn.Embedding(n_speakers, d_speaker)
        self.register_buffer("positions", sinusoid_positions(max_len, d_model))

        self.encoder = nn.ModuleList([FFTBlock(d_model, n_heads) for _ in range(2)])
        cond = d_speaker + (d_st if use_gst else 0) + (d_st if use_lst else 0)
        self.cond_proj = nn.Linear(d_model + cond, d_model)

        self.duration_pred = VariancePredictor(d_model)
        self.pitch_pred = VariancePredictor(d_model)
        self.energy_pred = VariancePredictor(d_model)
        self.pitch_emb = nn.Linear(1, d_model)
        self.energy_emb = nn.Linear(1, d_model)
        self.length_regulator = LengthRegulator()

        self.decoder = nn.ModuleList([FFTBlock(d_model, n_heads) for _ in range(2)])
        self.mel_out = nn.Linear(d_model, n_mels)

        self.adversarial = AdversarialHeads(d_st, d_speaker, d_b, grl_lambda) \
            if (use_gst or use_lst) else None

        for name in ("mel_mean", "mel_std", "pitch_mean", "pitch_std",
                     "energy_mean", "energy_std"):
            default = 1.0 if name.endswith("std") else 0.0
            self.register_buffer(name, torch.tensor(float(default)))

    def set_normalization(self, stats: dict, frame_shift_ms: float, window_ms: float) -> None:
        for name, value in stats.items():
            getattr(self, name).fill_(float(value))
        self.frame_shift_ms = frame_shift_ms
        self.window_ms = window_ms

    def encode_text(self, phon_ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        x = self.phoneme_emb(phon_ids) + self.positions[: phon_ids.size(1)]
        x = x.masked_fill(pad_mask.unsqueeze(-1), 0.0)
        for block in self.encoder:
            x = block(x, pad_mask)
        return x

    def condition(self, enc: torch.Tensor, speaker_ids: torch.Tensor,
                  gst: torch.Tensor | None, lst: torch.Tensor | None,
                  word_of_phoneme: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        b, p, _ = enc.shape
        parts = [enc, self.speaker_emb(speaker_ids)[:, None, :].expand(b, p, -1)]
        if self.use_gst:
            if gst is None:
                raise ShapeError("model conditions on a global style but none was given")
            parts.append(gst[:, None, :].expand(b, p, -1))
        if self.use_lst:
            if lst is None:
                raise ShapeError("model conditions on local styles but none were given")
            idx = word_of_phoneme.unsqueeze(-1).expand(b, p, lst.size(-1))
            parts.append(torch.gather(lst, 1, idx))
        x = self.cond_proj(torch.cat(parts, dim=-1))
        return x.masked_fill(pad_mask.unsqueeze(-1), 0.0)

    def variance_adapt(self, x: torch.Tensor, pad_mask: torch.Tensor,
                       durations: torch.Tensor | None = None,
                       pitch_target: torch.Tensor | None = None,
                       energy_target: torch.Tensor | None = None):
        """Returns (predictions dict, frame encodings, frame lengths).

        With teacher targets the length regulator uses ground-truth
        durations, so the output grid matches the reference mel exactly.
        """
        log_dur = self.duration_pred(x, pad_mask)
        pitch = self.pitch_pred(x, pad_mask)
        energy = self.energy_pred(x, pad_mask)
        if not (torch.isfinite(log_dur).all() and torch.isfinite(pitch).all()
                and torch.isfinite(energy).all()):
            raise NumericalError("variance predictor produced non-finite values")

        p_used = pitch_target if pitch_target is not None else pitch
        e_used = energy_target if energy_target is not None else energy
        x = x + self.pitch_emb(p_used.unsqueeze(-1)) + self.energy_emb(e_used.unsqueeze(-1))
        x = x.masked_fill(pad_mask.unsqueeze(-1), 0.0)

        if durations is None:
            durations = torch.clamp(torch.round(torch.exp(log_dur)), min=1.0).long()
            durations = durations.masked_fill(pad_mask, 0)
        frames, mel_lens = self.length_regulator(x, durations)
        preds = {"log_dur": log_dur, "pitch": pitch, "energy": energy}
        return preds, frames, mel_lens

    def decode_mel(self, frames: torch.Tensor, mel_lens: torch.Tensor) -> torch.Tensor:
        pad_mask = get_mask_from_lengths(mel_lens, frames.size(1))
        x = frames + self.positions[: frames.size(1)]
        x = x.masked_fill(pad_mask.unsqueeze(-1), 0.0)
        for block in self.decoder:
            x = block(x, pad_mask)
        mel = self.mel_out(x)
        if not torch.isfinite(mel).all():
            raise NumericalError("decoder produced non-finite mel")
        return mel

    @staticmethod
    def _center_lst(lst: torch.Tensor, word_valid: torch.Tensor | None) -> torch.Tensor:
        """Word styles condition the decoder as deviations from their
        utterance mean, so any utterance-wide offset can only reach the
        decoder through the global style."""
        if word_valid is None:
            return lst - lst.mean(dim=1, keepdim=True)
        wv = word_valid.unsqueeze(-1)
        mean = (lst * wv).sum(dim=1, keepdim=True) / wv.sum(dim=1, keepdim=True).clamp(min=1.0)
        return lst - mean

    def forward_train(self, batch: dict, gst: torch.Tensor | None,
                      lst: torch.Tensor | None) -> dict:
        """Teacher-forced training pass; returns per-component losses."""
        pad_mask = get_mask_from_lengths(batch["phon_lens"])
        enc = self.encode_text(batch["phon_ids"], pad_mask)
        if lst is not None and self.use_lst:
            word_valid = (~get_mask_from_lengths(batch["word_counts"])).float()
            lst = self._center_lst(lst, word_valid)
        x = self.condition(enc, batch["speaker_ids"], gst, lst,
                           batch["word_of_phoneme"], pad_mask)
        preds, frames, mel_lens = self.variance_adapt(
            x, pad_mask, durations=batch["durations"],
            pitch_target=batch["pitch_targets"],
            energy_target=batch["energy_targets"])
        mel_pred = self.decode_mel(frames, mel_lens)

        valid = (~pad_mask).float()
        n_valid = valid.sum()
        log_dur_target = torch.log(batch["durations"].clamp(min=1).float())
        dur_loss = (((preds["log_dur"] - log_dur_target) ** 2) * valid).sum() / n_valid
        pitch_loss = (((preds["pitch"] - batch["pitch_targets"]) ** 2) * valid).sum() / n_valid
        energy_loss = (((preds["energy"] - batch["energy_targets"]) ** 2) * valid).sum() / n_valid

        mel_mask = (~get_mask_from_lengths(mel_lens, mel_pred.size(1))).float().unsqueeze(-1)
        mel_target = batch["mel_targets"][:, : mel_pred.size(1)]
        mel_loss = (((mel_pred - mel_target) ** 2) * mel_mask).sum() / (mel_mask.sum() * self.n_mels)

        return {"mel": mel_loss, "dur": dur_loss, "pitch": pitch_loss,
                "energy": energy_loss, "mel_pred": mel_pred, "mel_lens": mel_lens}

    @torch.no_grad()
    def synthesize(self, phon_ids, word_of_phoneme, speaker_id: int,
                   gst_vec=None, lst_vecs=None, duration_override=None) -> MelSpectrogram:
        """Inference for one utterance.

        duration_override is per-WORD frame counts; each word's total is
        split evenly over its phonemes with the remainder on the last one.
        """
        was_training = self.training
        self.eval()
        try:
            device = self.mel_mean.device
            ids = torch.as_tensor(phon_ids, dtype=torch.long, device=device).unsqueeze(0)
            if int(self.speaker_emb.num_embeddings) <= speaker_id or speaker_id < 0:
                raise ShapeError(f"unknown speaker id {speaker_id}")
            wop = torch.as_tensor(word_of_phoneme, dtype=torch.long, device=device).unsqueeze(0)
            spk = torch.tensor([speaker_id], device=device)
            gst = None if gst_vec is None else \
                torch.as_tensor(np.asarray(gst_vec), dtype=torch.float32).unsqueeze(0)
            lst = None if lst_vecs is None else \
                torch.as_tensor(np.asarray(lst_vecs), dtype=torch.float32).unsqueeze(0)
            if lst is not None and self.use_lst:
                lst = self._center_lst(lst, None)

            pad_mask = torch.zeros(1, ids.size(1), dtype=torch.bool, device=device)
            enc = self.encode_text(ids, pad_mask)
            x = self.condition(enc, spk, gst, lst, wop, pad_mask)

            durations = None
            if duration_override is not None:
                n_words = int(max(word_of_phoneme)) + 1
                if len(duration_override) != n_words:
                    raise ShapeError(
                        f"duration override has {len(duration_override)} entries "
                        f"for {n_words} words")
                per_phone = []
                for w, total in enumerate(duration_override):
                    n_ph = sum(1 for x_ in word_of_phoneme if x_ == w)
                    per_phone.extend(split_word_frames(int(total), n_ph))
                durations = torch.tensor(per_phone, dtype=torch.long,
                                         device=device).unsqueeze(0)

            _, frames, mel_lens = self.variance_adapt(x, pad_mask, durations=durations)
            mel_norm = self.decode_mel(frames, mel_lens)[0]
            mel = mel_norm * self.mel_std + self.mel_mean
            return MelSpectrogram(
                data=mel.cpu().numpy().astype(np.float32),
                frame_shift_ms=self.frame_shift_ms, window_ms=self.window_ms)
        finally:
            self.train(was_training)


class LanguageModel(nn.Module):
    """Bundle of one language's style encoders and synthesis backbone.

    The vanilla backbone used by the duration and no-transfer baselines has
    no style encoders; gst/lst stay None there.
    """

    def __init__(self, tts: SynthesisModel,
                 gst: GlobalStyleEncoder | None = None,
                 lst: LocalStyleEncoder | None = None):
        super().__init__()
        self.tts = tts
        self.gst = gst
        self.lst = lst

    def freeze(self) -> None:
        self.requires_grad_(False)
        self.eval()


def prepare_utterance(utt: Utterance, bert_word_vecs: np.ndarray,
                      n_phoneme_symbols: int, stats: dict) -> dict:
    """Precompute per-utterance training tensors (teacher targets included)."""
    phon_ids = lexicon.phoneme_ids(utt.phonemes, utt.lang, n_phoneme_symbols)
    durations = utt.phoneme_durations()
    pitch_t, energy_t = [], []
    pos = 0
    bounds = []
    for p, d in enumerate(durations):
        bounds.append((pos, pos + int(d)))
        pos += int(d)
    for (a, b) in bounds:
        f0 = utt.f0_track[a:b]
        voiced = f0[f0 > 0]
        pv = float(voiced.mean()) if voiced.size else float(stats["pitch_mean"])
        pitch_t.append((pv - stats["pitch_mean"]) / stats["pitch_std"])
        ev = float(utt.energy_track[a:b].mean()) if b > a else float(stats["energy_mean"])
        energy_t.append((ev - stats["energy_mean"]) / stats["energy_std"])
    mel_norm = (utt.mel.data - stats["mel_mean"]) / stats["mel_std"]
    return {
        "phon_ids": np.asarray(phon_ids, dtype=np.int64),
        "word_of_phoneme": np.asarray(utt.word_of_phoneme, dtype=np.int64),
        "durations": np.asarray(durations, dtype=np.int64),
        "pitch_targets": np.asarray(pitch_t, dtype=np.float32),
        "energy_targets": np.asarray(energy_t, dtype=np.float32),
        "mel": mel_norm.astype(np.float32),
        "w_asr": spans_to_weights(utt.word_spans, utt.n_frames),
        "bert": np.asarray(bert_word_vecs, dtype=np.float32),
        "speaker_id": utt.speaker_id,
        "n_words": utt.n_words,
        "n_frames": utt.n_frames,
    }


def collate(items: list[dict]) -> dict:
    """Zero-pad a list of prepared utterances into batch tensors."""
    b = len(items)
    p_max = max(len(it["phon_ids"]) for it in items)
    t_max = max(it["n_frames"] for it in items)
    l_max = max(it["n_words"] for it in items)
    d_b = items[0]["bert"].shape[1]
    n_mels = items[0]["mel"].shape[1]

    out = {
        "phon_ids": torch.zeros(b, p_max, dtype=torch.long),
        "word_of_phoneme": torch.zeros(b, p_max, dtype=torch.long),
        "durations": torch.zeros(b, p_max, dtype=torch.long),
        "pitch_targets": torch.zeros(b, p_max),
        "energy_targets": torch.zeros(b, p_max),
        "mel_targets": torch.zeros(b, t_max, n_mels),
        "w_asr": torch.zeros(b, t_max, l_max),
        "bert": torch.zeros(b, l_max, d_b),
        "phon_lens": torch.zeros(b, dtype=torch.long),
        "mel_lens": torch.zeros(b, dtype=torch.long),
        "word_counts": torch.zeros(b, dtype=torch.long),
        "speaker_ids": torch.zeros(b, dtype=torch.long),
    }
    for i, it in enumerate(items):
        np_, nt, nw = len(it["phon_ids"]), it["n_frames"], it["n_words"]
        out["phon_ids"][i, :np_] = torch.from_numpy(it["phon_ids"])
        out["word_of_phoneme"][i, :np_] = torch.from_numpy(it["word_of_phoneme"])
        out["durations"][i, :np_] = torch.from_numpy(it["durations"])
        out["pitch_targets"][i, :np_] = torch.from_numpy(it["pitch_targets"])
        out["energy_targets"][i, :np_] = torch.from_numpy(it["energy_targets"])
        out["mel_targets"][i, :nt] = torch.from_numpy(it["mel"])
        out["w_asr"][i, :nt, :nw] = torch.from_numpy(it["w_asr"])
        out["bert"][i, :nw] = torch.from_numpy(it["bert"])
        out["phon_lens"][i] = np_
        out["mel_lens"][i] = nt
        out["word_counts"][i] = nw
        out["speaker_ids"][i] = it["speaker_id"]
    return out


def pretrain(prepared: list[dict], model: LanguageModel, cfg: PretrainConfig,
             seed: int, log_path=None) -> list[dict]:
    """Joint training of style encoders and backbone on one language.

    Batches are length-bucketed (sorted by frame count, fixed membership)
    and visited in a shuffled order each sweep.  Returns the logged history;
    the model is frozen on return.
    """
    tts = model.tts
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)

    order = sorted(range(len(prepared)), key=lambda i: prepared[i]["n_frames"])
    groups = [order[k:k + cfg.batch_size]
              for k in range(0, len(order), cfg.batch_size)]
    if len(groups) > 1 and len(groups[-1]) == 1:
        # singleton batches break batch statistics in the conv stacks
        groups[-2].extend(groups.pop())
    batches = [collate([prepared[i] for i in g]) for g in groups]

    history = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        model.train()
        step = 0
        t0 = time.time()
        while step < cfg.steps:
            for bi in rng.permutation(len(batches)):
                if step >= cfg.steps:
                    break
                batch = batches[int(bi)]
                step += 1

                gst = lst = None
                if tts.use_gst and model.gst is not None:
                    _, gst = model.gst(batch["mel_targets"], batch["mel_lens"])
                if tts.use_lst and model.lst is not None:
                    _, lst = model.lst(batch["mel_targets"], batch["mel_lens"],
                                       batch["w_asr"])
                losses = tts.forward_train(batch, gst, lst)
                total = losses["mel"] + losses["dur"] + losses["pitch"] + losses["energy"]

                comp = {k: float(losses[k].detach())
                        for k in ("mel", "dur", "pitch", "energy")}
                word_valid = (~get_mask_from_lengths(batch["word_counts"])).float()
                if lst is not None and cfg.style_mean_weight > 0:
                    # Utterance-wide offsets must live in the global style:
                    # push each utterance's mean local style to zero so the
                    # local scale only keeps word-to-word deviations.
                    wv = word_valid.unsqueeze(-1)
                    mean_style = (lst * wv).sum(1) / wv.sum(1).clamp(min=1.0)
                    cm = (mean_style ** 2).mean()
                    total = total + cfg.style_mean_weight * cm
                    comp["style_mean"] = float(cm.detach())
                if tts.adversarial is not None and cfg.adversarial_weight > 0:
                    spk_target = tts.speaker_emb(batch["speaker_ids"]).detach()
                    gst_in = gst if gst is not None else torch.zeros(
                        batch["mel_targets"].size(0), tts.d_st)
                    lst_in = lst if lst is not None else torch.zeros(
                        batch["mel_targets"].size(0), word_valid.size(1), tts.d_st)
                    s_g, s_l, bert_pred = tts.adversarial(gst_in, lst_in)
                    adv_g = F.mse_loss(s_g, spk_target) if gst is not None else total * 0
                    if lst is not None:
                        wv = word_valid.unsqueeze(-1)
                        n_w = wv.sum()
                        adv_l = (((s_l - spk_target[:, None, :]) ** 2) * wv).sum() / \
                            (n_w * s_l.size(-1))
                        adv_b = (((bert_pred - batch["bert"]) ** 2) * wv).sum() / \
                            (n_w * bert_pred.size(-1))
                    else:
                        adv_l = adv_b = total * 0
                    total = total + cfg.adversarial_weight * (adv_g + adv_l + adv_b)
                    comp.update(adv_spk_gst=float(adv_g.detach()),
                                adv_spk_lst=float(adv_l.detach()),
                                adv_bert=float(adv_b.detach()))

                total_val = float(total.detach())
                if not np.isfinite(total_val) or total_val > _DIVERGENCE_CEILING:
                    raise TrainingDivergenceError(
                        f"pretraining loss {total_val:.3g} at step {step}", step=step)

                opt.zero_grad()
                total.backward()
                torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
                opt.step()

                if step % cfg.log_every == 0 or step == cfg.steps:
                    rec = {"step": step, "total": total_val,
                           "elapsed_s": round(time.time() - t0, 2), **comp}
                    history.append(rec)
                    if log_fh:
                        log_fh.write(json.dumps(rec) + "\n")
                        log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    model.freeze()
    return history
