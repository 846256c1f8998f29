"""Shared differentiable primitives: MHSA, MHCA, FFN, layer norm, and the blocks
built from them.

Attention projections carry no biases; FFN layers do. GELU is the exact
Gaussian-CDF form. All blocks are pre-norm with residuals after each sublayer.
Attention is written with explicit matmuls so operation-level FLOP counters see
every product.
"""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

LAYER_NORM_EPS = 1e-6


def _check_finite(x: torch.Tensor, where: str) -> None:
    if not torch.isfinite(x).all():
        raise ValueError(f"non-finite values in {where} input")


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor,
               eps: float = LAYER_NORM_EPS) -> torch.Tensor:
    """Per-row standardization over the last axis, then affine."""
    return F.layer_norm(x, (x.shape[-1],), gain, bias, eps)


def init_weights(module: nn.Module) -> None:
    """Truncated-normal(0.02) projections, zero biases, unit/zero layer norms."""
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Conv1d):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class MultiHeadAttention(nn.Module):
    """Multi-head scaled dot-product attention over the last two axes.

    Without a context this is self-attention; with one, queries come from `x`
    and keys/values from `context` so information flows context -> x.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.proj = nn.Linear(dim, dim, bias=False)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # (..., N, C) -> (..., heads, N, head_dim)
        return x.unflatten(-1, (self.heads, self.head_dim)).transpose(-3, -2)

    def forward(self, x: torch.Tensor,
                context: Optional[torch.Tensor] = None) -> torch.Tensor:
        _check_finite(x, "attention")
        if context is None:
            context = x
        else:
            _check_finite(context, "attention context")
        q = self._split(self.to_q(x))
        k = self._split(self.to_k(context))
        v = self._split(self.to_v(context))
        attn = torch.matmul(q, k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = torch.matmul(attn, v)
        out = out.transpose(-3, -2).flatten(-2)
        return self.proj(out)


class FeedForward(nn.Module):
    """Two linear layers with an exact GELU in between; hidden width 4x."""

    def __init__(self, dim: int, hidden_dim: Optional[int] = None):
        super().__init__()
        hidden_dim = 4 * dim if hidden_dim is None else hidden_dim
        self.fc1 = nn.Linear(dim, hidden_dim)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden_dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_finite(x, "feed-forward")
        return self.fc2(self.act(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Standard pre-norm block: MHSA then FFN, residual after each."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=LAYER_NORM_EPS)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, eps=LAYER_NORM_EPS)
        self.ffn = FeedForward(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.ffn(self.norm2(x))
        return x


class SBTBlock(nn.Module):
    """Bottleneck block: cross-attention from the stage input into the
    bottleneck tokens, self-attention over all bottlenecks, then FFN.

    One norm per sublayer (three pairs total); the cross-attention norm is
    shared between the bottleneck queries and the context tokens.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm_cross = nn.LayerNorm(dim, eps=LAYER_NORM_EPS)
        self.cross = MultiHeadAttention(dim, heads)
        self.norm_self = nn.LayerNorm(dim, eps=LAYER_NORM_EPS)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm_ffn = nn.LayerNorm(dim, eps=LAYER_NORM_EPS)
        self.ffn = FeedForward(dim)

    def forward(self, bottlenecks: torch.Tensor,
                context: torch.Tensor) -> torch.Tensor:
        b = bottlenecks
        b = b + self.cross(self.norm_cross(b), self.norm_cross(context))
        b = b + self.attn(self.norm_self(b))
        b = b + self.ffn(self.norm_ffn(b))
        return b


class ReverseSBTBlock(nn.Module):
    """Resolution-restoring block: the stage input queries the final
    bottlenecks through cross-attention, then an FFN; two norm pairs.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm_cross = nn.LayerNorm(dim, eps=LAYER_NORM_EPS)
        self.cross = MultiHeadAttention(dim, heads)
        self.norm_ffn = nn.LayerNorm(dim, eps=LAYER_NORM_EPS)
        self.ffn = FeedForward(dim)

    def forward(self, x: torch.Tensor, bottlenecks: torch.Tensor) -> torch.Tensor:
        x = x + self.cross(self.norm_cross(x), self.norm_cross(bottlenecks))
        x = x + self.ffn(self.norm_ffn(x))
        return x
