"""Lightweight reconstruction decoder and the masked-patch loss.

The decoder projects encoder features down to its own width, fills masked
lattice positions with a single shared trainable token, adds its own sinusoid
positions over the full lattice, runs a short stack of standard blocks, and
maps every token back to pixel-patch space.
"""

from __future__ import annotations

from typing import Union

import torch
import torch.nn as nn

from .config import ArchConfig, validate
from .layers import LAYER_NORM_EPS, TransformerBlock, init_weights
from .masking import TubeMask
from .tokenizer import positions


class ReconstructionDecoder(nn.Module):
    """Full-lattice pixel reconstruction from encoded visible tokens."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        validate(cfg)
        self.cfg = cfg
        dim = cfg.decoder_dim
        self.proj = nn.Linear(cfg.embed_dim, dim)
        self.mask_token = nn.Parameter(torch.zeros(dim))
        table = torch.from_numpy(positions(cfg.num_tokens, dim)).to(torch.float32)
        self.register_buffer("pos_table", table)
        self.blocks = nn.ModuleList(
            TransformerBlock(dim, cfg.decoder_heads)
            for _ in range(cfg.decoder_depth))
        self.norm = nn.LayerNorm(dim, eps=LAYER_NORM_EPS)
        self.head = nn.Linear(dim, cfg.patch_dim)
        self.apply(init_weights)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    def forward(self, visible: torch.Tensor,
                visible_index: torch.Tensor) -> torch.Tensor:
        """visible: (B, N_vis, C); visible_index: (B, N_vis) or (N_vis,) lattice
        positions of those rows. Returns (B, N, patch_dim) over the full lattice.
        """
        if visible.ndim != 3:
            raise ValueError(
                f"expected visible tokens of shape (batch, tokens, channels), "
                f"got {tuple(visible.shape)}")
        batch, n_vis, _ = visible.shape
        index = visible_index.to(device=visible.device, dtype=torch.long)
        if index.ndim == 1:
            index = index.expand(batch, -1)
        if index.shape != (batch, n_vis):
            raise ValueError(
                f"visible_index shape {tuple(index.shape)} does not match "
                f"visible tokens {(batch, n_vis)}")
        dim = self.mask_token.shape[0]
        n = self.pos_table.shape[0]
        v = self.proj(visible)
        full = self.mask_token.expand(batch, n, dim).clone()
        full.scatter_(1, index.unsqueeze(-1).expand(-1, -1, dim), v)
        x = full + self.pos_table
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm(x))


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor,
                        mask: Union[TubeMask, torch.Tensor]) -> torch.Tensor:
    """Mean over masked lattice positions of the per-patch mean squared error.

    Positions outside the masked set contribute nothing; `mask` is a TubeMask
    or a tensor of masked lattice indices, (M,) or (B, M).
    """
    if pred.shape != target.shape:
        raise ValueError(
            f"prediction shape {tuple(pred.shape)} does not match target "
            f"{tuple(target.shape)}")
    if isinstance(mask, TubeMask):
        index = torch.as_tensor(mask.masked_tokens(), device=pred.device)
    else:
        index = mask.to(device=pred.device, dtype=torch.long)
    if index.numel() == 0:
        raise ValueError("no masked positions; the loss is undefined")
    if pred.ndim == 2:
        if index.ndim != 1:
            raise ValueError("batched mask indices with unbatched predictions")
        pred_m = pred.index_select(0, index)
        target_m = target.index_select(0, index)
    elif pred.ndim == 3:
        if index.ndim == 1:
            index = index.expand(pred.shape[0], -1)
        gather = index.unsqueeze(-1).expand(-1, -1, pred.shape[-1])
        pred_m = torch.gather(pred, 1, gather)
        target_m = torch.gather(target, 1, gather)
    else:
        raise ValueError(
            f"expected (tokens, patch_dim) or (batch, tokens, patch_dim), "
            f"got {tuple(pred.shape)}")
    return ((pred_m - target_m) ** 2).mean()
