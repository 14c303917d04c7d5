"""Bidirectional attention over two key/value sets.

One score matrix serves both directions: A scores set 1 against set 2, and
the reverse direction reuses A transposed rather than recomputing scores.
Softmax always normalizes over the value-providing axis, so each output row
is a convex combination of value rows; that choice is what makes O1 a
summary of set 1 addressed by set 2 and vice versa.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import NumericalError, ShapeError


@dataclass
class BiAttentionResult:
    A: torch.Tensor      # (n1, n2) shared scores
    W12: torch.Tensor    # (n1, n2), columns sum to 1
    W21: torch.Tensor    # (n2, n1), columns sum to 1
    O1: torch.Tensor     # (n2, d_v1) summaries of set 1
    O2: torch.Tensor     # (n1, d_v2) summaries of set 2


def _check_pair(K: torch.Tensor, V: torch.Tensor, which: str) -> None:
    if K.dim() != 2 or V.dim() != 2:
        raise ShapeError(f"set {which}: keys and values must be 2-D")
    if K.size(0) < 1:
        raise ShapeError(f"set {which} is empty")
    if K.size(0) != V.size(0):
        raise ShapeError(
            f"set {which}: {K.size(0)} keys but {V.size(0)} value rows")


def bi_attend(K1: torch.Tensor, V1: torch.Tensor, K2: torch.Tensor,
              V2: torch.Tensor, score_fn, temperature: float = 1.0) -> BiAttentionResult:
    """Attend both ways through one score matrix A = score_fn(K1, K2)."""
    _check_pair(K1, V1, "1")
    _check_pair(K2, V2, "2")
    A = score_fn(K1, K2)
    if A.shape != (K1.size(0), K2.size(0)):
        raise ShapeError(
            f"score_fn returned {tuple(A.shape)}, expected "
            f"({K1.size(0)}, {K2.size(0)})")
    if not torch.isfinite(A).all():
        raise NumericalError("attention scores contain non-finite values")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    W12 = F.softmax(A / temperature, dim=0)
    W21 = F.softmax(A.t() / temperature, dim=0)
    O1 = W12.t() @ V1
    O2 = W21.t() @ V2
    return BiAttentionResult(A=A, W12=W12, W21=W21, O1=O1, O2=O2)


def multiplicative_scores(s1t: torch.Tensor, s2t: torch.Tensor, f1, f2) -> torch.Tensor:
    """A = f1(s1t) f2(s2t)^T with no scaling factor."""
    p1 = f1(s1t)
    p2 = f2(s2t)
    if p1.dim() != 2 or p2.dim() != 2 or p1.size(1) != p2.size(1):
        raise ShapeError(
            f"projections must share a width: got {tuple(p1.shape)} and {tuple(p2.shape)}")
    return p1 @ p2.t()
