"""Synthesis backbone: conditioning layout, duration control, adversarial
gradient direction, and the pretraining loop contracts."""

import numpy as np
import pytest
import torch

from stylecast.config import CorpusConfig, PretrainConfig
from stylecast.corpus.generator import build_corpus
from stylecast.corpus.types import Lang
from stylecast.errors import ShapeError, TrainingDivergenceError
from stylecast.pipeline import lang_stats
from stylecast.styleenc import GlobalStyleEncoder, LocalStyleEncoder
from stylecast.synth import (AdversarialHeads, LanguageModel, SynthesisModel,
                             collate, prepare_utterance, pretrain,
                             split_word_frames, upsample_styles)
from stylecast.textfeat import SyntheticEmbedder

D_ST = 16
D_B = 8
D_SPK = 8


class TestSplitWordFrames:
    def test_remainder_goes_last(self):
        assert split_word_frames(10, 3) == [3, 3, 4]

    def test_single_phoneme_takes_all(self):
        assert split_word_frames(7, 1) == [7]

    def test_total_is_conserved(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            frames = int(rng.integers(0, 40))
            n_ph = int(rng.integers(1, 7))
            parts = split_word_frames(frames, n_ph)
            assert len(parts) == n_ph
            assert sum(parts) == frames

    def test_zero_phonemes_rejected(self):
        with pytest.raises(ShapeError):
            split_word_frames(5, 0)


class TestUpsampleStyles:
    def test_row_layout_speaker_gst_lst(self):
        spk = np.array([1.0, 2.0], dtype=np.float32)
        gst = np.array([3.0], dtype=np.float32)
        lst = np.array([[4.0], [5.0]], dtype=np.float32)
        rows = upsample_styles(gst, lst, spk, word_of_phoneme=[0, 0, 1])
        assert rows.shape == (3, 4)
        np.testing.assert_array_equal(rows[0], [1, 2, 3, 4])
        np.testing.assert_array_equal(rows[1], [1, 2, 3, 4])
        np.testing.assert_array_equal(rows[2], [1, 2, 3, 5])

    def test_disabled_scales_are_omitted(self):
        spk = np.array([1.0], dtype=np.float32)
        lst = np.array([[7.0]], dtype=np.float32)
        rows = upsample_styles(None, lst, spk, [0])
        np.testing.assert_array_equal(rows, [[1, 7]])
        rows = upsample_styles(np.array([9.0], dtype=np.float32), None, spk, [0, 0])
        np.testing.assert_array_equal(rows, [[1, 9], [1, 9]])

    def test_word_index_out_of_range(self):
        spk = np.array([1.0], dtype=np.float32)
        lst = np.array([[7.0]], dtype=np.float32)
        with pytest.raises(ShapeError, match="maps to word"):
            upsample_styles(None, lst, spk, [0, 1])


def _corpus_cfg():
    return CorpusConfig(n_train=6, n_test=2, words_min=2, words_max=4)


@pytest.fixture(scope="module")
def corpus():
    c = build_corpus(_corpus_cfg(), 51, 6, id_prefix="t")
    c.compute_stats()
    return c


def _small_model(use_gst=True, use_lst=True, seed=0):
    torch.manual_seed(seed)
    tts = SynthesisModel(n_phonemes=24, n_mels=20, n_speakers=4,
                         d_model=32, n_heads=2, d_speaker=D_SPK,
                         d_st=D_ST, d_b=D_B, use_gst=use_gst, use_lst=use_lst)
    gst = lst = None
    if use_gst:
        gst = GlobalStyleEncoder(20, D_ST, channels=(4, 4, 8, 8, 8, 8), gru_dim=16)
    if use_lst:
        lst = LocalStyleEncoder(20, D_ST, channels=(4, 4, 8, 8, 8, 8), gru_dim=16)
    return LanguageModel(tts, gst, lst)


def _prepared(corpus, scale_mel=1.0):
    emb = SyntheticEmbedder(D_B)
    stats = lang_stats(corpus, Lang.L1)
    items = []
    for pair in corpus.pairs:
        utt = pair.utt1
        item = prepare_utterance(utt, emb.embed(utt.tokens).word_vecs, 24, stats)
        if scale_mel != 1.0:
            item["mel"] = item["mel"] * scale_mel
        items.append(item)
    return items


@pytest.fixture(scope="module")
def model(corpus):
    m = _small_model()
    m.tts.set_normalization(lang_stats(corpus, Lang.L1), 10.0, 25.0)
    return m


class TestForwardTrain:
    def test_losses_and_grid(self, corpus, model):
        batch = collate(_prepared(corpus)[:3])
        gst = model.gst(batch["mel_targets"], batch["mel_lens"])[1]
        lst = model.lst(batch["mel_targets"], batch["mel_lens"], batch["w_asr"])[1]
        out = model.tts.forward_train(batch, gst, lst)
        for key in ("mel", "dur", "pitch", "energy"):
            val = float(out[key].detach())
            assert np.isfinite(val) and val >= 0
        # teacher durations fix the frame grid exactly
        assert torch.equal(out["mel_lens"], batch["durations"].sum(1))
        assert out["mel_pred"].shape == (3, int(out["mel_lens"].max()), 20)

    def test_missing_styles_rejected(self, corpus, model):
        batch = collate(_prepared(corpus)[:2])
        with pytest.raises(ShapeError, match="global style"):
            model.tts.forward_train(batch, None, None)


class TestSynthesize:
    def test_deterministic_and_mode_restoring(self, model):
        model.tts.train()
        gst = np.zeros(D_ST, dtype=np.float32)
        lst = np.zeros((2, D_ST), dtype=np.float32)
        a = model.tts.synthesize([1, 2, 3], [0, 0, 1], 0, gst, lst)
        assert model.tts.training
        model.tts.eval()
        b = model.tts.synthesize([1, 2, 3], [0, 0, 1], 0, gst, lst)
        np.testing.assert_array_equal(a.data, b.data)
        assert a.data.shape[1] == 20
        assert np.isfinite(a.data).all()

    def test_duration_override_is_exact(self, model):
        gst = np.zeros(D_ST, dtype=np.float32)
        lst = np.zeros((2, D_ST), dtype=np.float32)
        mel = model.tts.synthesize([1, 2, 3, 4], [0, 0, 1, 1], 1, gst, lst,
                                   duration_override=[5, 7])
        assert mel.data.shape == (12, 20)

    def test_duration_override_word_count_checked(self, model):
        gst = np.zeros(D_ST, dtype=np.float32)
        lst = np.zeros((2, D_ST), dtype=np.float32)
        with pytest.raises(ShapeError, match="duration override"):
            model.tts.synthesize([1, 2], [0, 1], 0, gst, lst,
                                 duration_override=[4])

    def test_unknown_speaker_rejected(self, model):
        gst = np.zeros(D_ST, dtype=np.float32)
        lst = np.zeros((1, D_ST), dtype=np.float32)
        with pytest.raises(ShapeError, match="speaker"):
            model.tts.synthesize([1], [0], 99, gst, lst)

    def test_required_style_must_be_given(self, model):
        lst = np.zeros((1, D_ST), dtype=np.float32)
        with pytest.raises(ShapeError, match="global style"):
            model.tts.synthesize([1], [0], 0, None, lst)

    def test_mel_mean_shifts_output_exactly(self, corpus):
        m = _small_model(seed=3)
        stats = lang_stats(corpus, Lang.L1)
        m.tts.set_normalization(stats, 10.0, 25.0)
        gst = np.zeros(D_ST, dtype=np.float32)
        lst = np.zeros((1, D_ST), dtype=np.float32)
        a = m.tts.synthesize([2, 3], [0, 0], 0, gst, lst)
        m.tts.set_normalization({**stats, "mel_mean": stats["mel_mean"] + 2.5},
                                10.0, 25.0)
        b = m.tts.synthesize([2, 3], [0, 0], 0, gst, lst)
        np.testing.assert_allclose(b.data, a.data + 2.5, rtol=0, atol=1e-5)


class TestAdversarialHeads:
    def _grads(self, grl_lambda):
        torch.manual_seed(7)
        heads = AdversarialHeads(D_ST, D_SPK, D_B, grl_lambda=grl_lambda)
        gst = torch.randn(3, D_ST, requires_grad=True)
        target = torch.randn(3, D_SPK)
        loss = ((heads(gst, torch.zeros(3, 2, D_ST))[0] - target) ** 2).sum()
        loss.backward()
        reversed_grad = gst.grad.clone()

        control = gst.detach().clone().requires_grad_(True)
        loss2 = ((heads.spk_from_gst(control) - target) ** 2).sum()
        loss2.backward()
        return reversed_grad, control.grad

    def test_gradient_is_reversed(self):
        rev, ctl = self._grads(1.0)
        torch.testing.assert_close(rev, -ctl)

    def test_lambda_scales_reversal(self):
        rev, ctl = self._grads(0.5)
        torch.testing.assert_close(rev, -0.5 * ctl)


def _pretrain_cfg(**kw):
    base = dict(steps=8, batch_size=4, lr=1e-3, grad_clip=1.0,
                adversarial_weight=1.0, grl_lambda=1.0,
                style_mean_weight=1.0, log_every=4)
    base.update(kw)
    return PretrainConfig(**base)


class TestPretrain:
    def test_styled_run_logs_all_components(self, corpus, tmp_path):
        model = _small_model(seed=11)
        model.tts.set_normalization(lang_stats(corpus, Lang.L1), 10.0, 25.0)
        log = tmp_path / "log.jsonl"
        history = pretrain(_prepared(corpus), model, _pretrain_cfg(),
                           seed=5, log_path=log)
        assert [h["step"] for h in history] == [4, 8]
        for key in ("mel", "dur", "pitch", "energy", "style_mean",
                    "adv_spk_gst", "adv_spk_lst", "adv_bert", "total"):
            assert key in history[-1], key
            assert np.isfinite(history[-1][key])
        assert log.exists() and len(log.read_text().splitlines()) == 2
        # frozen on return
        assert not model.training
        assert all(not p.requires_grad for p in model.parameters())

    def test_plain_backbone_has_no_auxiliary_terms(self, corpus):
        model = _small_model(use_gst=False, use_lst=False, seed=12)
        model.tts.set_normalization(lang_stats(corpus, Lang.L1), 10.0, 25.0)
        history = pretrain(_prepared(corpus), model, _pretrain_cfg(), seed=5)
        assert "adv_spk_gst" not in history[-1]
        assert "style_mean" not in history[-1]

    def test_divergence_raises_with_step(self, corpus):
        model = _small_model(seed=13)
        model.tts.set_normalization(lang_stats(corpus, Lang.L1), 10.0, 25.0)
        with pytest.raises(TrainingDivergenceError, match="step 1"):
            pretrain(_prepared(corpus, scale_mel=1e4), model,
                     _pretrain_cfg(), seed=5)

    def test_loss_decreases_over_short_run(self, corpus):
        model = _small_model(seed=14)
        model.tts.set_normalization(lang_stats(corpus, Lang.L1), 10.0, 25.0)
        history = pretrain(_prepared(corpus), model,
                           _pretrain_cfg(steps=40, log_every=1), seed=6)
        first = np.mean([h["total"] for h in history[:5]])
        last = np.mean([h["total"] for h in history[-5:]])
        assert last < first
