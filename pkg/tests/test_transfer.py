"""Transfer heads, joint loss, duration baseline, and training loop."""

import numpy as np
import pytest
import torch

from stylecast.biattn import BiAttentionResult
from stylecast.config import TransferConfig
from stylecast.errors import ConfigError, ShapeError, TrainingDivergenceError
from stylecast.transfer import (PairFeatures, TransferModel, TransferTarget,
                                alignment_accuracy, durations_to_frames,
                                joint_loss, loss_terms, train_transfer)

D_B, D_E, D_ST, D_A = 8, 16, 6, 8


def _pair(l1=3, l2=4, seed=0, word_map=None):
    g = torch.Generator().manual_seed(seed)

    def r(*shape):
        return torch.randn(*shape, generator=g)

    return PairFeatures(
        pair_id=f"p{seed}", bert1=r(l1, D_B), bert2=r(l2, D_B),
        sbert1=r(D_B), sbert2=r(D_B), gst1=r(D_ST), gst2=r(D_ST),
        lst1=r(l1, D_ST), lst2=r(l2, D_ST),
        dur1=torch.rand(l1, generator=g) * 0.5 + 0.05,
        dur2=torch.rand(l2, generator=g) * 0.5 + 0.05,
        word_map=word_map if word_map is not None else {})


def _model(**kw):
    torch.manual_seed(kw.pop("seed", 0))
    return TransferModel(D_B, D_E, D_ST, D_A, **kw)


class TestConstruction:
    def test_unknown_mode(self):
        with pytest.raises(ConfigError, match="mode"):
            _model(mode="banana")

    def test_unknown_directions(self):
        with pytest.raises(ConfigError, match="directions"):
            _model(directions="sideways")

    def test_both_scales_disabled_rejected(self):
        with pytest.raises(ConfigError, match="use_global/use_local"):
            _model(use_global=False, use_local=False)

    def test_heads_start_at_zero(self):
        model = _model()
        model.eval()
        t1, t2, _ = model.transfer_forward(_pair())
        for t in (t1, t2):
            assert torch.equal(t.gst_pred, torch.zeros(D_ST))
            assert torch.equal(t.lst_pred, torch.zeros_like(t.lst_true))


class TestPredictGlobal:
    def test_zero_weights_bias_passthrough(self):
        model = _model()
        b = torch.arange(D_ST, dtype=torch.float32)
        model.g_1to2.bias.data = b.clone()
        out = model.predict_global(torch.randn(D_B + D_ST), torch.randn(D_B), "1to2")
        torch.testing.assert_close(out, b)

    def test_block_swap_changes_output(self):
        model = _model()
        model.g_1to2.weight.data.normal_()
        g_m = torch.randn(D_B + D_ST)
        g_t = torch.randn(D_B)
        a = model.predict_global(g_m, g_t, "1to2")
        # feeding blocks in the wrong order must not silently agree
        swapped = model.g_1to2(torch.cat([g_t, g_m]))
        assert not torch.allclose(a, swapped)

    def test_width_checked(self):
        model = _model()
        with pytest.raises(ShapeError, match="width"):
            model.predict_global(torch.randn(D_B), torch.randn(D_B), "1to2")

    def test_directions_use_distinct_heads(self):
        model = _model()
        model.g_1to2.weight.data.normal_()
        model.g_2to1.weight.data.normal_()
        x, y = torch.randn(D_B + D_ST), torch.randn(D_B)
        assert not torch.allclose(model.predict_global(x, y, "1to2"),
                                  model.predict_global(x, y, "2to1"))


class TestPredictLocal:
    def test_position_wise_permutation(self):
        model = _model()
        model.l_1to2.weight.data.normal_()
        O = torch.randn(5, D_E)
        s_t = torch.randn(5, D_E)
        out = model.predict_local(O, s_t, "1to2")
        perm = torch.tensor([3, 1, 4, 0, 2])
        out_p = model.predict_local(O[perm], s_t[perm], "1to2")
        torch.testing.assert_close(out_p, out[perm])

    def test_row_mismatch(self):
        model = _model()
        with pytest.raises(ShapeError, match="row mismatch"):
            model.predict_local(torch.randn(3, D_E), torch.randn(4, D_E), "1to2")

    def test_single_word_shape(self):
        model = _model()
        out = model.predict_local(torch.randn(1, D_E), torch.randn(1, D_E), "1to2")
        assert out.shape == (1, D_ST)


class TestTransferForward:
    def test_shapes_both_directions(self):
        model = _model()
        model.eval()
        pf = _pair(l1=3, l2=5)
        t1, t2, res = model.transfer_forward(pf)
        assert t1.gst_pred.shape == (D_ST,) and t1.lst_pred.shape == (3, D_ST)
        assert t2.gst_pred.shape == (D_ST,) and t2.lst_pred.shape == (5, D_ST)
        assert res.A.shape == (3, 5)
        torch.testing.assert_close(t1.lst_true, pf.lst1)
        torch.testing.assert_close(t2.gst_true, pf.gst2)

    def test_single_word_pair_degenerates(self):
        model = _model()
        model.eval()
        pf = _pair(l1=1, l2=1)
        enc = model.encode_features([pf])[0]
        t1, t2, res = model.forward_encoded(pf, enc)
        torch.testing.assert_close(res.W12, torch.ones(1, 1))
        torch.testing.assert_close(res.W21, torch.ones(1, 1))
        torch.testing.assert_close(res.O1[0], enc[2][0])  # s1m row
        torch.testing.assert_close(res.O2[0], enc[3][0])  # s2m row

    def test_one_direction_only(self):
        model = _model(directions="1to2")
        model.eval()
        t1, t2, _ = model.transfer_forward(_pair())
        assert t1.gst_pred is None and t1.lst_pred is None
        assert t2.gst_pred is not None and t2.lst_pred is not None

    def test_batched_encoding_matches_unbatched(self):
        model = _model(seed=4)
        model.eval()
        feats = [_pair(3, 4, seed=1), _pair(6, 2, seed=2), _pair(1, 5, seed=3)]
        batched = model.encode_features(feats)
        for pf, enc in zip(feats, batched):
            single = model.encode_features([pf])[0]
            for got, want in zip(enc, single):
                torch.testing.assert_close(got, want, rtol=1e-4, atol=1e-5)

    def test_finite_on_random_pairs(self):
        model = _model(seed=5)
        model.eval()
        for i in range(100):
            l1 = int(np.random.default_rng(i).integers(1, 8))
            l2 = int(np.random.default_rng(i + 1000).integers(1, 8))
            t1, t2, res = model.transfer_forward(_pair(l1, l2, seed=i))
            for t in (t1.gst_pred, t1.lst_pred, t2.gst_pred, t2.lst_pred, res.A):
                assert torch.isfinite(t).all()


class TestJointLoss:
    def _targets(self, seed=0, scale=1.0):
        g = torch.Generator().manual_seed(seed)

        def r(*shape):
            return torch.randn(*shape, generator=g)

        def t(l):
            true_g, true_l = r(D_ST), r(l, D_ST)
            return TransferTarget(gst_pred=true_g + scale * r(D_ST),
                                  gst_true=true_g,
                                  lst_pred=true_l + scale * r(l, D_ST),
                                  lst_true=true_l)
        return t(3), t(5)

    def test_component_sum_oracle(self):
        t1, t2 = self._targets()
        terms = loss_terms(t1, t2)
        assert set(terms) == {"gst1", "lst1", "gst2", "lst2"}
        total = joint_loss(t1, t2)
        ref = sum(float(v) for v in terms.values())
        assert abs(float(total) - ref) < 1e-12

    def test_manual_mse_oracle(self):
        t1, t2 = self._targets(seed=3)
        want = 0.0
        for t in (t1, t2):
            want += float(np.mean((t.gst_pred.numpy().astype(np.float64)
                                   - t.gst_true.numpy().astype(np.float64)) ** 2))
            want += float(np.mean((t.lst_pred.numpy().astype(np.float64)
                                   - t.lst_true.numpy().astype(np.float64)) ** 2))
        assert abs(float(joint_loss(t1, t2)) - want) < 1e-12

    def test_perfect_prediction_is_zero(self):
        t1, t2 = self._targets(scale=0.0)
        assert float(joint_loss(t1, t2)) == 0.0

    def test_doubling_errors_quadruples(self):
        a1, a2 = self._targets(seed=9, scale=1.0)
        b1, b2 = self._targets(seed=9, scale=2.0)
        assert float(joint_loss(b1, b2)) == pytest.approx(
            4.0 * float(joint_loss(a1, a2)), rel=1e-6)

    def test_empty_targets_rejected(self):
        empty = TransferTarget(None, None, None, None)
        with pytest.raises(ShapeError):
            joint_loss(empty, empty)

    def test_disabled_direction_drops_terms(self):
        t1, t2 = self._targets()
        t1 = TransferTarget(None, None, None, None)
        terms = loss_terms(t1, t2)
        assert set(terms) == {"gst2", "lst2"}


class TestDurationBaseline:
    def test_seconds_to_frames(self):
        frames, clamped = durations_to_frames(np.array([0.10, 0.004, -0.2]), 10.0)
        np.testing.assert_array_equal(frames, [10, 1, 1])
        assert clamped == 2

    def test_no_clamp_counts_zero(self):
        frames, clamped = durations_to_frames(np.array([0.25]), 10.0)
        np.testing.assert_array_equal(frames, [25])
        assert clamped == 0

    def test_duration_mode_targets_are_log_durations(self):
        model = _model(mode="duration_only")
        model.eval()
        pf = _pair()
        t1, t2, _ = model.transfer_forward(pf)
        assert t1.gst_pred is None and t2.gst_pred is None
        torch.testing.assert_close(t1.lst_true, torch.log(pf.dur1).unsqueeze(-1))
        assert t1.lst_pred.shape == (3, 1)

    def test_duration_forward_exponentiates(self):
        model = _model(mode="duration_only")
        model.eval()
        d1, d2 = model.duration_transfer_forward(_pair())
        assert (d1 > 0).all() and (d2 > 0).all()
        assert d1.shape == (3,) and d2.shape == (4,)

    def test_duration_forward_needs_duration_mode(self):
        model = _model()
        with pytest.raises(ConfigError, match="duration_only"):
            model.duration_transfer_forward(_pair())


def _feats(n=8):
    return [_pair(l1=2 + i % 3, l2=2 + (i + 1) % 3, seed=100 + i) for i in range(n)]


def _cfg(**kw):
    base = dict(epochs=3, batch_size=4, lr=1e-3, grad_clip=1.0,
                temperature=0.5, prenet_dropout=0.1)
    base.update(kw)
    return TransferConfig(**base)


class TestTrainTransfer:
    def test_history_shape_and_keys(self, tmp_path):
        model = _model(seed=21)
        log = tmp_path / "xfer.jsonl"
        history = train_transfer(_feats(), model, _cfg(), seed=7, log_path=log)
        assert len(history) == 3
        for i, rec in enumerate(history, start=1):
            assert rec["epoch"] == i and rec["split"] == "train"
            assert np.isfinite(rec["loss"])
            assert set(rec["components"]) == {"gst1", "gst2", "lst1", "lst2"}
        assert len(log.read_text().splitlines()) == 3
        assert not model.training

    def test_deterministic_under_fixed_seed(self):
        torch.set_num_threads(1)
        runs = []
        for _ in range(2):
            model = _model(seed=33)
            history = train_transfer(_feats(), model, _cfg(), seed=13)
            runs.append((history, {k: v.clone() for k, v in model.state_dict().items()}))
        assert runs[0][0] == runs[1][0]
        assert all(torch.equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1])

    def test_loss_decreases(self):
        model = _model(seed=2)
        history = train_transfer(_feats(16), model, _cfg(epochs=8), seed=3)
        assert history[-1]["loss"] < history[0]["loss"]

    def test_frozen_contract_passes_for_untouched_module(self):
        model = _model(seed=5)
        bystander = torch.nn.Linear(3, 3)
        train_transfer(_feats(), model, _cfg(epochs=1), seed=1,
                       frozen_modules=[bystander])

    def test_frozen_contract_detects_updates(self):
        model = _model(seed=6)
        with pytest.raises(TrainingDivergenceError, match="frozen"):
            train_transfer(_feats(), model, _cfg(epochs=1), seed=1,
                           frozen_modules=[model.e1t])

    def test_empty_feature_list_rejected(self):
        with pytest.raises(ShapeError, match="no training pairs"):
            train_transfer([], _model(), _cfg(), seed=0)


class TestAlignmentAccuracy:
    def _result(self, W21):
        l2, l1 = W21.shape
        return BiAttentionResult(A=W21.t().clone(), W12=W21.t().clone(),
                                 W21=W21, O1=torch.zeros(l2, 1),
                                 O2=torch.zeros(l1, 1))

    def test_counts_argmax_hits(self):
        W21 = torch.tensor([[0.9, 0.2], [0.1, 0.8]])
        res = self._result(W21)
        assert alignment_accuracy(res, {0: 0, 1: 1}) == 1.0
        assert alignment_accuracy(res, {0: 1, 1: 1}) == 0.5

    def test_empty_map_is_nan(self):
        res = self._result(torch.ones(2, 2) / 2)
        assert np.isnan(alignment_accuracy(res, {}))
