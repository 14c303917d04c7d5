"""Shared network building blocks.

Everything here is variable-length aware.  The convention throughout is that
a boolean mask marks PADDED positions with True, so `masked_fill(mask, ...)`
reads naturally and batched results match their unbatched equivalents.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence


def get_mask_from_lengths(lengths: torch.Tensor, max_len: int | None = None) -> torch.Tensor:
    """(B,) lengths -> (B, T) bool mask, True at padded positions."""
    if max_len is None:
        max_len = int(lengths.max().item())
    ids = torch.arange(max_len, device=lengths.device).unsqueeze(0)
    return ids >= lengths.unsqueeze(1)


def lengths_to_float_mask(lengths: torch.Tensor, max_len: int | None = None) -> torch.Tensor:
    """(B, T, 1) float mask, 1 at valid positions."""
    return (~get_mask_from_lengths(lengths, max_len)).unsqueeze(-1).float()


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor | None, dim: int) -> torch.Tensor:
    if mask is not None:
        scores = scores.masked_fill(mask, -1e9)
    return F.softmax(scores, dim=dim)


def sinusoid_positions(n_positions: int, dim: int) -> torch.Tensor:
    """Standard fixed sinusoidal position table, (n_positions, dim)."""
    pos = np.arange(n_positions)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, 2 * (i // 2) / dim)
    table = np.zeros((n_positions, dim), dtype=np.float32)
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return torch.from_numpy(table)


class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.lam, None


def grad_reverse(x: torch.Tensor, lam: float = 1.0) -> torch.Tensor:
    """Identity forward, gradient scaled by -lam backward."""
    return _GradReverse.apply(x, lam)


class PreNet(nn.Module):
    def __init__(self, in_dim, sizes=(128, 64), dropout=0.5):
        super().__init__()
        dims = [in_dim] + list(sizes)
        self.layers = nn.ModuleList(
            [nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:])])
        self.dropout = dropout

    def forward(self, x):
        for layer in self.layers:
            x = F.dropout(F.relu(layer(x)), self.dropout, training=self.training)
        return x


class BatchNormConv1d(nn.Module):
    def __init__(self, in_ch, out_ch, kernel_size, activation=None, padding=None):
        super().__init__()
        if padding is None:
            padding = (kernel_size - 1) // 2
        self.conv = nn.Conv1d(in_ch, out_ch, kernel_size, padding=padding, bias=False)
        self.bn = nn.BatchNorm1d(out_ch)
        self.activation = activation

    def forward(self, x):
        x = self.conv(x)
        if self.activation is not None:
            x = self.activation(x)
        return self.bn(x)


class Highway(nn.Module):
    def __init__(self, size):
        super().__init__()
        self.h = nn.Linear(size, size)
        self.t = nn.Linear(size, size)
        self.t.bias.data.fill_(-1.0)

    def forward(self, x):
        h = F.relu(self.h(x))
        t = torch.sigmoid(self.t(x))
        return h * t + x * (1.0 - t)


class CBHG(nn.Module):
    """Conv bank + highway + bidirectional GRU over short sequences.

    Padded positions are re-zeroed between stages so conv receptive fields
    never leak padding into valid frames, and the GRU runs packed.
    """

    def __init__(self, in_dim=64, bank_k=8, bank_channels=128,
                 proj_channels=128, highway_depth=4, rnn_dim=64):
        super().__init__()
        self.bank = nn.ModuleList([
            BatchNormConv1d(in_dim, bank_channels, k, activation=F.relu, padding=0)
            for k in range(1, bank_k + 1)
        ])
        # kernel k with symmetric-ish padding; even kernels overshoot by one
        # frame on the right, trimmed in forward.
        self._pads = [((k - 1) // 2, k // 2) for k in range(1, bank_k + 1)]
        self.maxpool = nn.MaxPool1d(kernel_size=2, stride=1, padding=1)
        self.proj1 = BatchNormConv1d(bank_k * bank_channels, proj_channels, 3,
                                     activation=F.relu)
        self.proj2 = BatchNormConv1d(proj_channels, in_dim, 3)
        self.highways = nn.ModuleList([Highway(in_dim) for _ in range(highway_depth)])
        self.rnn = nn.GRU(in_dim, rnn_dim, batch_first=True, bidirectional=True)
        self.out_dim = 2 * rnn_dim

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """(B, L, in_dim), (B,) -> (B, L, out_dim)."""
        valid = lengths_to_float_mask(lengths, x.size(1))
        x = x * valid
        xc = x.transpose(1, 2)

        outs = []
        for conv, (lp, rp) in zip(self.bank, self._pads):
            y = conv.conv(F.pad(xc, (lp, rp)))
            y = conv.bn(F.relu(y))
            outs.append(y)
        y = torch.cat(outs, dim=1)

        # Max pooling must not see zeros standing in for padding: fill with
        # -inf, pool, then re-zero.
        pad3 = get_mask_from_lengths(lengths, x.size(1)).unsqueeze(1)
        y = y.masked_fill(pad3, float("-inf"))
        y = self.maxpool(y)[:, :, :x.size(1)]
        y = y.masked_fill(pad3, 0.0)

        y = self.proj1(y) * valid.transpose(1, 2)
        y = self.proj2(y) * valid.transpose(1, 2)
        y = y.transpose(1, 2) + x

        for hw in self.highways:
            y = hw(y)
        y = y * valid

        packed = pack_padded_sequence(y, lengths.cpu(), batch_first=True,
                                      enforce_sorted=False)
        out, _ = self.rnn(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=x.size(1))
        return out


class FFTBlock(nn.Module):
    """Transformer block with a conv feed-forward, as used in duration-based
    acoustic models."""

    def __init__(self, d_model=64, n_heads=2, d_inner=128, kernel=(3, 1), dropout=0.1):
        super().__init__()
        self.attn = nn.MultiheadAttention(d_model, n_heads, dropout=dropout,
                                          batch_first=True)
        self.ln1 = nn.LayerNorm(d_model)
        self.conv1 = nn.Conv1d(d_model, d_inner, kernel[0], padding=(kernel[0] - 1) // 2)
        self.conv2 = nn.Conv1d(d_inner, d_model, kernel[1], padding=(kernel[1] - 1) // 2)
        self.ln2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        """(B, T, d), (B, T) True-at-pad -> (B, T, d)."""
        residual = x
        y, _ = self.attn(x, x, x, key_padding_mask=pad_mask, need_weights=False)
        x = self.ln1(residual + self.dropout(y))
        x = x.masked_fill(pad_mask.unsqueeze(-1), 0.0)

        residual = x
        y = self.conv2(F.relu(self.conv1(x.transpose(1, 2)))).transpose(1, 2)
        x = self.ln2(residual + self.dropout(y))
        return x.masked_fill(pad_mask.unsqueeze(-1), 0.0)


class VariancePredictor(nn.Module):
    """Two masked conv layers then a scalar per position."""

    def __init__(self, d_model=64, d_hidden=64, kernel=3, dropout=0.1):
        super().__init__()
        pad = (kernel - 1) // 2
        self.conv1 = nn.Conv1d(d_model, d_hidden, kernel, padding=pad)
        self.ln1 = nn.LayerNorm(d_hidden)
        self.conv2 = nn.Conv1d(d_hidden, d_hidden, kernel, padding=pad)
        self.ln2 = nn.LayerNorm(d_hidden)
        self.out = nn.Linear(d_hidden, 1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        x = x.masked_fill(pad_mask.unsqueeze(-1), 0.0)
        y = F.relu(self.conv1(x.transpose(1, 2))).transpose(1, 2)
        y = self.dropout(self.ln1(y))
        y = y.masked_fill(pad_mask.unsqueeze(-1), 0.0)
        y = F.relu(self.conv2(y.transpose(1, 2))).transpose(1, 2)
        y = self.dropout(self.ln2(y))
        y = self.out(y).squeeze(-1)
        return y.masked_fill(pad_mask, 0.0)


class LengthRegulator(nn.Module):
    """Repeat each position by its integer duration."""

    def forward(self, x: torch.Tensor, durations: torch.Tensor):
        """(B, P, d), (B, P) int -> (B, T_max, d), (B,) output lengths.

        Output row b has exactly durations[b].sum() real frames, zero padded
        to the batch maximum.
        """
        out_lens = durations.sum(dim=1)
        max_len = int(out_lens.max().item())
        outs = []
        for b in range(x.size(0)):
            reps = durations[b]
            expanded = torch.repeat_interleave(x[b], reps, dim=0)
            if expanded.size(0) < max_len:
                pad = torch.zeros(max_len - expanded.size(0), x.size(2),
                                  dtype=x.dtype, device=x.device)
                expanded = torch.cat([expanded, pad], dim=0)
            outs.append(expanded)
        return torch.stack(outs, dim=0), out_lens
