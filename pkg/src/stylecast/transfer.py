"""Cross-lingual style transfer heads and their training loop.

Both dubbing directions train jointly.  Word-level textual features from the
two languages score one shared attention matrix; each direction summarizes
the other language's multimodal features through it and predicts the target
styles with position-wise linear heads.  The upstream style encoders and
synthesis backbones stay frozen throughout; this module only ever trains the
text encoders, attention projections, and prediction heads.

The duration baseline reuses the same machinery with the local style vector
replaced by each word's duration in seconds and the global path removed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .biattn import BiAttentionResult, bi_attend, multiplicative_scores
from .config import TransferConfig
from .errors import ConfigError, ShapeError, TrainingDivergenceError
from .textfeat import LocalTextEncoder

MODES = ("multiscale", "duration_only", "none")
DIRECTIONS = ("both", "1to2", "2to1")


@dataclass
class PairFeatures:
    """Frozen per-pair inputs for transfer training and evaluation."""

    pair_id: str
    bert1: torch.Tensor          # (l1, d_b)
    bert2: torch.Tensor          # (l2, d_b)
    sbert1: torch.Tensor         # (d_b,)
    sbert2: torch.Tensor         # (d_b,)
    gst1: torch.Tensor           # (d_st,)
    gst2: torch.Tensor
    lst1: torch.Tensor           # (l1, d_st)
    lst2: torch.Tensor
    dur1: torch.Tensor           # (l1,) word durations, seconds
    dur2: torch.Tensor
    word_map: dict = field(default_factory=dict)


@dataclass
class TransferTarget:
    """Predictions and ground truth for one language's styles.

    In duration mode the lst slots hold per-word log-second durations of
    shape (l, 1) and the gst slots are None.
    """

    gst_pred: torch.Tensor | None
    gst_true: torch.Tensor | None
    lst_pred: torch.Tensor | None
    lst_true: torch.Tensor | None


class TransferModel(nn.Module):
    def __init__(self, d_b: int = 32, d_e: int = 64, d_st: int = 64,
                 d_a: int = 64, mode: str = "multiscale",
                 use_global: bool = True, use_local: bool = True,
                 directions: str = "both", temperature: float = 1.0,
                 prenet_dropout: float = 0.5):
        super().__init__()
        if mode not in MODES:
            raise ConfigError(f"mode: unknown mode {mode!r}")
        if directions not in DIRECTIONS:
            raise ConfigError(f"directions: must be one of {DIRECTIONS}")
        if mode == "duration_only":
            use_global = False
            use_local = True
        elif mode == "none":
            use_global = False
            use_local = False
        elif not (use_global or use_local):
            raise ConfigError("at least one of use_global/use_local must be set")
        self.mode = mode
        self.use_global = use_global
        self.use_local = use_local
        self.directions = directions
        self.temperature = temperature

        local_width = 1 if mode == "duration_only" else d_st
        out_width = 1 if mode == "duration_only" else d_st

        if use_local:
            self.e1t = LocalTextEncoder(d_b, d_e, dropout=prenet_dropout)
            self.e2t = LocalTextEncoder(d_b, d_e, dropout=prenet_dropout)
            self.e1m = LocalTextEncoder(d_b + local_width, d_e, dropout=prenet_dropout)
            self.e2m = LocalTextEncoder(d_b + local_width, d_e, dropout=prenet_dropout)
            self.f1 = nn.Linear(d_e, d_a)
            self.f2 = nn.Linear(d_e, d_a)
            self.l_1to2 = nn.Linear(2 * d_e, out_width)
            self.l_2to1 = nn.Linear(2 * d_e, out_width)
        if use_global:
            self.g_1to2 = nn.Linear(2 * d_b + d_st, d_st)
            self.g_2to1 = nn.Linear(2 * d_b + d_st, d_st)
        # Prediction heads start at zero so the first-epoch loss reads as the
        # raw target second moment instead of random-projection noise.
        for name in ("l_1to2", "l_2to1", "g_1to2", "g_2to1"):
            head = getattr(self, name, None)
            if head is not None:
                nn.init.zeros_(head.weight)
                nn.init.zeros_(head.bias)

    def predict_global(self, g_m_src: torch.Tensor, g_t_tgt: torch.Tensor,
                       direction: str) -> torch.Tensor:
        """Affine map of [source multimodal global; target textual global]."""
        head = self.g_1to2 if direction == "1to2" else self.g_2to1
        x = torch.cat([g_m_src, g_t_tgt], dim=-1)
        if x.shape[-1] != head.in_features:
            raise ShapeError(
                f"global head expects width {head.in_features}, got {x.shape[-1]}")
        return head(x)

    def predict_local(self, summarized: torch.Tensor, s_t_tgt: torch.Tensor,
                      direction: str) -> torch.Tensor:
        """Position-wise affine map of [O_dir; target textual rows]."""
        if summarized.shape[0] != s_t_tgt.shape[0]:
            raise ShapeError(
                f"row mismatch: summaries have {summarized.shape[0]} rows, "
                f"target features {s_t_tgt.shape[0]}")
        head = self.l_1to2 if direction == "1to2" else self.l_2to1
        return head(torch.cat([summarized, s_t_tgt], dim=-1))

    def _local_true(self, pf: PairFeatures):
        if self.mode == "duration_only":
            return torch.log(pf.dur1).unsqueeze(-1), torch.log(pf.dur2).unsqueeze(-1)
        return pf.lst1, pf.lst2

    def encode_features(self, feats: list) -> list:
        """Word-level encodings for many pairs in two padded batches.

        Padding rows are masked inside the encoders, so per-pair slices match
        the unbatched forward exactly in eval mode.  Returns one
        (s1t, s2t, s1m, s2m) tuple per pair.
        """
        if not self.use_local:
            return [None] * len(feats)
        lens1 = torch.tensor([pf.bert1.shape[0] for pf in feats])
        lens2 = torch.tensor([pf.bert2.shape[0] for pf in feats])
        locals_ = [self._local_true(pf) for pf in feats]

        def pad(rows_list):
            width = rows_list[0].shape[1]
            out = torch.zeros(len(rows_list), int(max(r.shape[0] for r in rows_list)), width)
            for i, rows in enumerate(rows_list):
                out[i, :rows.shape[0]] = rows
            return out

        s1t = self.e1t(pad([pf.bert1 for pf in feats]), lens1)
        s2t = self.e2t(pad([pf.bert2 for pf in feats]), lens2)
        s1m = self.e1m(pad([torch.cat([pf.bert1, loc[0]], dim=-1)
                            for pf, loc in zip(feats, locals_)]), lens1)
        s2m = self.e2m(pad([torch.cat([pf.bert2, loc[1]], dim=-1)
                            for pf, loc in zip(feats, locals_)]), lens2)
        return [(s1t[i, :lens1[i]], s2t[i, :lens2[i]],
                 s1m[i, :lens1[i]], s2m[i, :lens2[i]]) for i in range(len(feats))]

    def forward_encoded(self, pf: PairFeatures, encoded):
        """Transfer pass for one pair given its word-level encodings."""
        t1 = TransferTarget(None, None, None, None)
        t2 = TransferTarget(None, None, None, None)
        result = None

        if self.use_local:
            s1t, s2t, s1m, s2m = encoded
            result = bi_attend(s1t, s1m, s2t, s2m,
                               lambda a, b: multiplicative_scores(a, b, self.f1, self.f2),
                               temperature=self.temperature)
            local1_true, local2_true = self._local_true(pf)
            if self.directions in ("both", "1to2"):
                t2.lst_pred = self.predict_local(result.O1, s2t, "1to2")
                t2.lst_true = local2_true
            if self.directions in ("both", "2to1"):
                t1.lst_pred = self.predict_local(result.O2, s1t, "2to1")
                t1.lst_true = local1_true

        if self.use_global:
            g1m = torch.cat([pf.sbert1, pf.gst1])
            g2m = torch.cat([pf.sbert2, pf.gst2])
            if self.directions in ("both", "1to2"):
                t2.gst_pred = self.predict_global(g1m, pf.sbert2, "1to2")
                t2.gst_true = pf.gst2
            if self.directions in ("both", "2to1"):
                t1.gst_pred = self.predict_global(g2m, pf.sbert1, "2to1")
                t1.gst_true = pf.gst1

        return t1, t2, result

    def transfer_forward(self, pf: PairFeatures):
        """-> (TransferTarget for L1, TransferTarget for L2, BiAttentionResult).

        Both directions come from one shared score matrix; direction 1->2
        predicts L2's styles and vice versa.
        """
        return self.forward_encoded(pf, self.encode_features([pf])[0])

    def duration_transfer_forward(self, pf: PairFeatures):
        """-> predicted word durations in seconds for (L1, L2)."""
        if self.mode != "duration_only":
            raise ConfigError("duration_transfer_forward needs a duration_only model")
        with torch.no_grad():
            t1, t2, _ = self.transfer_forward(pf)
        d1 = torch.exp(t1.lst_pred.squeeze(-1)) if t1.lst_pred is not None else None
        d2 = torch.exp(t2.lst_pred.squeeze(-1)) if t2.lst_pred is not None else None
        return d1, d2


def loss_terms(t1: TransferTarget, t2: TransferTarget) -> dict:
    """Per-scale MSE terms, keyed gst1/lst1/gst2/lst2, absent terms omitted.

    Accumulated in float64 so the summed loss agrees with independent
    double-precision oracles to 1e-10; gradients still reach the float32
    parameters through the cast."""
    terms = {}
    for name, t in (("1", t1), ("2", t2)):
        if t.gst_pred is not None:
            terms["gst" + name] = ((t.gst_pred.double() - t.gst_true.double()) ** 2).mean()
        if t.lst_pred is not None:
            terms["lst" + name] = ((t.lst_pred.double() - t.lst_true.double()) ** 2).mean()
    return terms


def joint_loss(t1: TransferTarget, t2: TransferTarget) -> torch.Tensor:
    """Sum of the per-scale MSEs over whichever terms exist."""
    terms = loss_terms(t1, t2)
    if not terms:
        raise ShapeError("joint_loss got two empty transfer targets")
    return torch.stack(list(terms.values())).sum()


def durations_to_frames(seconds: np.ndarray, frame_shift_ms: float):
    """Seconds -> integer frames, clamped to >= 1.

    Returns (frames, n_clamped); the clamp count feeds a warning counter so
    degenerate predictions are visible rather than silent.
    """
    raw = np.rint(np.asarray(seconds, dtype=np.float64) * 1000.0 / frame_shift_ms)
    clamped = int((raw < 1).sum())
    return np.maximum(raw, 1).astype(np.int64), clamped


def _snapshot(module: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def _snapshots_equal(a: dict, b: dict) -> bool:
    return set(a) == set(b) and all(torch.equal(a[k], b[k]) for k in a)


def train_transfer(features: list[PairFeatures], model: TransferModel,
                   cfg: TransferConfig, seed: int, log_path=None,
                   frozen_modules: list[nn.Module] | None = None) -> list[dict]:
    """Joint two-direction training; returns per-epoch mean loss history.

    frozen_modules, when given, are snapshotted before and verified
    bit-identical after training (the frozen-encoder contract).
    """
    if not features:
        raise ShapeError("no training pairs given")
    before = [_snapshot(m) for m in (frozen_modules or [])]

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)

    history = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        model.train()
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(features))
            total = 0.0
            comp_sums: dict = {}
            count = 0
            for k in range(0, len(order), cfg.batch_size):
                idx = order[k:k + cfg.batch_size]
                opt.zero_grad()
                batch = [features[int(i)] for i in idx]
                encoded = model.encode_features(batch)
                batch_terms = []
                batch_comps: dict = {}
                for pf, enc in zip(batch, encoded):
                    t1, t2, _ = model.forward_encoded(pf, enc)
                    terms = loss_terms(t1, t2)
                    if not terms:
                        raise ShapeError("model produced no loss terms")
                    batch_terms.append(torch.stack(list(terms.values())).sum())
                    for name, term in terms.items():
                        batch_comps[name] = batch_comps.get(name, 0.0) + float(term.detach())
                loss = torch.stack(batch_terms).mean()
                val = float(loss.detach())
                if not np.isfinite(val):
                    raise TrainingDivergenceError(
                        f"transfer loss non-finite in epoch {epoch}", step=epoch)
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                opt.step()
                total += val * len(batch)
                for name, s in batch_comps.items():
                    comp_sums[name] = comp_sums.get(name, 0.0) + s
                count += len(batch)
            rec = {"epoch": epoch, "split": "train", "loss": total / count,
                   "components": {k: v / count for k, v in sorted(comp_sums.items())}}
            history.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()

    for module, snap in zip(frozen_modules or [], before):
        if not _snapshots_equal(snap, _snapshot(module)):
            raise TrainingDivergenceError(
                "frozen module changed during transfer training", step=-1)
    model.eval()
    return history


def alignment_accuracy(result: BiAttentionResult, word_map: dict) -> float:
    """Fraction of mapped words whose W21-column argmax hits the map."""
    if not word_map:
        return float("nan")
    hits = 0
    cols = result.W21.detach()
    for i1, j2 in word_map.items():
        if int(torch.argmax(cols[:, i1])) == j2:
            hits += 1
    return hits / len(word_map)
