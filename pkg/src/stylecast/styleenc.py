"""Global and local speaking-style extraction from mel spectrograms.

Both encoders share the same skeleton: a 6-layer strided CNN, a GRU, and a
style attention over a 10-row learned token table.  The global branch
downsamples time and keeps only the final recurrent state; the local branch
keeps time resolution (stride 1 along frames), returns every frame's output,
and pools frames into one query per word with the frame-to-word attention
weights.  Styles are the attention-weighted sums over the token table; the
weights themselves are kept alongside, since both views get used downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .errors import NumericalError, ShapeError

N_TOKENS = 10


@dataclass
class GlobalStyle:
    token_weights: np.ndarray     # (10,)
    vec: np.ndarray               # (d_st,)


@dataclass
class LocalStyleSeq:
    token_weights: np.ndarray     # (l, 10)
    vecs: np.ndarray              # (l, d_st)


def _check_mel(mel: torch.Tensor) -> None:
    if mel.dim() != 3:
        raise ShapeError(f"expected (batch, frames, bins) mel, got {tuple(mel.shape)}")
    if mel.size(1) < 1:
        raise ShapeError("mel must have at least one frame")
    if not torch.isfinite(mel).all():
        raise NumericalError("mel contains non-finite values")


class _ConvStack(nn.Module):
    """Six 3x3 conv layers with BatchNorm and ReLU.

    time_stride 2 halves the frame axis per layer (global branch); 1 keeps
    it (local branch).  Padded frames are re-zeroed after every layer so
    valid outputs match an unbatched forward pass exactly in eval mode.
    """

    def __init__(self, channels=(16, 16, 32, 32, 64, 64), time_stride=2):
        super().__init__()
        self.time_stride = time_stride
        layers = []
        in_ch = 1
        for out_ch in channels:
            layers.append(nn.Conv2d(in_ch, out_ch, 3, stride=(time_stride, 2),
                                    padding=1, bias=False))
            layers.append(nn.BatchNorm2d(out_ch))
            in_ch = out_ch
        self.layers = nn.ModuleList(layers)
        self.out_channels = in_ch

    @staticmethod
    def out_freq(n_mels: int, n_layers: int = 6) -> int:
        m = n_mels
        for _ in range(n_layers):
            m = (m + 1) // 2
        return m

    def forward(self, mel: torch.Tensor, lengths: torch.Tensor):
        """(B, T, M), (B,) -> (B, T', C * M'), per-sample T' lengths."""
        x = mel.unsqueeze(1)
        lens = lengths.clone()
        in_mask = torch.arange(x.size(2), device=x.device)[None, :] >= lens[:, None]
        x = x.masked_fill(in_mask[:, None, :, None], 0.0)
        for i in range(0, len(self.layers), 2):
            x = self.layers[i](x)
            x = F.relu(x)
            x = self.layers[i + 1](x)
            if self.time_stride == 2:
                lens = (lens + 1) // 2
            mask = torch.arange(x.size(2), device=x.device)[None, :] >= lens[:, None]
            x = x.masked_fill(mask[:, None, :, None], 0.0)
        b, c, t, m = x.shape
        return x.permute(0, 2, 1, 3).reshape(b, t, c * m), lens


class GlobalStyleEncoder(nn.Module):
    """Utterance-level style: strided CNN, GRU final state, token attention."""

    def __init__(self, n_mels: int, d_st: int = 64,
                 channels=(16, 16, 32, 32, 64, 64), gru_dim: int = 128):
        super().__init__()
        self.cnn = _ConvStack(channels, time_stride=2)
        freq = _ConvStack.out_freq(n_mels)
        self.gru = nn.GRU(channels[-1] * freq, gru_dim, batch_first=True)
        self.proj = nn.Linear(gru_dim, d_st)
        self.table = nn.Parameter(torch.randn(N_TOKENS, d_st) * 0.5)

    def forward(self, mel: torch.Tensor, lengths: torch.Tensor):
        """(B, T, M), (B,) -> token weights (B, 10), style vecs (B, d_st)."""
        _check_mel(mel)
        feats, lens = self.cnn(mel, lengths)
        packed = pack_padded_sequence(feats, lens.cpu(), batch_first=True,
                                      enforce_sorted=False)
        _, h_n = self.gru(packed)
        q = self.proj(h_n[-1])
        scores = q @ self.table.t()
        weights = F.softmax(scores, dim=-1)
        return weights, weights @ self.table

    @torch.no_grad()
    def encode(self, mel: np.ndarray) -> GlobalStyle:
        was_training = self.training
        self.eval()
        try:
            x = torch.as_tensor(np.asarray(mel), dtype=torch.float32).unsqueeze(0)
            w, v = self.forward(x, torch.tensor([x.size(1)]))
        finally:
            self.train(was_training)
        return GlobalStyle(token_weights=w[0].numpy(), vec=v[0].numpy())


class LocalStyleEncoder(nn.Module):
    """Word-level styles: time-preserving CNN, per-frame GRU outputs pooled
    into word queries by the frame-to-word weights, then token attention."""

    def __init__(self, n_mels: int, d_st: int = 64,
                 channels=(16, 16, 32, 32, 64, 64), gru_dim: int = 128):
        super().__init__()
        self.cnn = _ConvStack(channels, time_stride=1)
        freq = _ConvStack.out_freq(n_mels)
        self.gru = nn.GRU(channels[-1] * freq, gru_dim, batch_first=True)
        self.proj = nn.Linear(gru_dim, d_st)
        self.table = nn.Parameter(torch.randn(N_TOKENS, d_st) * 0.5)

    def frame_features(self, mel: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """(B, T, M) -> (B, T, gru_dim), zero past each sample's length."""
        _check_mel(mel)
        feats, lens = self.cnn(mel, lengths)
        if feats.size(1) != mel.size(1):
            raise ShapeError("local conv stack must preserve frame count")
        packed = pack_padded_sequence(feats, lens.cpu(), batch_first=True,
                                      enforce_sorted=False)
        out, _ = self.gru(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=mel.size(1))
        return out

    def forward(self, mel: torch.Tensor, lengths: torch.Tensor,
                w_asr: torch.Tensor):
        """w_asr: (B, T, L) frame-to-word weights, zero-padded both axes.

        Returns token weights (B, L, 10) and style vecs (B, L, d_st); rows
        for padded words are whatever softmax makes of a zero query and must
        be masked by the caller via its word counts.
        """
        frames = self.frame_features(mel, lengths)
        if w_asr.size(1) != frames.size(1):
            raise ShapeError(
                f"w_asr has {w_asr.size(1)} frame rows, mel produced {frames.size(1)}")
        q = torch.matmul(w_asr.transpose(1, 2), frames)   # (B, L, gru_dim)
        scores = self.proj(q) @ self.table.t()
        weights = F.softmax(scores, dim=-1)
        return weights, weights @ self.table

    @torch.no_grad()
    def encode(self, mel: np.ndarray, w_asr: np.ndarray) -> LocalStyleSeq:
        was_training = self.training
        self.eval()
        try:
            x = torch.as_tensor(np.asarray(mel), dtype=torch.float32).unsqueeze(0)
            w = torch.as_tensor(np.asarray(w_asr), dtype=torch.float32).unsqueeze(0)
            tw, v = self.forward(x, torch.tensor([x.size(1)]), w)
        finally:
            self.train(was_training)
        return LocalStyleSeq(token_weights=tw[0].numpy(), vecs=v[0].numpy())
