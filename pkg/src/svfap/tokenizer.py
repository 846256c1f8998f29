"""Clip-to-token conversion: patch rearrangement, sinusoid positions, linear embedding.

`patchify` / `unpatchify` are exact mutual inverses. Token order is time-major
then row-major spatial; within a patch the flattening order is
(time, height, width, channel), row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch
import torch.nn as nn
from einops import rearrange


@dataclass(frozen=True)
class TokenGrid:
    """Token embeddings with explicit (t, h, w) lattice geometry."""

    tokens: np.ndarray  # (N, C)
    grid: Tuple[int, int, int]

    def __post_init__(self):
        t, h, w = self.grid
        if self.tokens.shape[0] != t * h * w:
            raise ValueError(
                f"token count {self.tokens.shape[0]} does not match grid "
                f"{self.grid} (expected {t * h * w})")


def patchify(pixels: np.ndarray, patch: Tuple[int, int, int]) -> np.ndarray:
    """Split a (T, H, W, 3) clip into a (N, pt*ph*pw*3) patch matrix."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 4 or pixels.shape[-1] != 3:
        raise ValueError(f"expected a (T, H, W, 3) clip, got shape {pixels.shape}")
    pt, ph, pw = patch
    t_in, h_in, w_in, _ = pixels.shape
    if t_in % pt or h_in % ph or w_in % pw:
        raise ValueError(
            f"clip shape {pixels.shape[:3]} not divisible by patch {patch}")
    return rearrange(
        pixels, "(t pt) (h ph) (w pw) c -> (t h w) (pt ph pw c)",
        pt=pt, ph=ph, pw=pw)


def unpatchify(patches: np.ndarray, grid: Tuple[int, int, int],
               patch: Tuple[int, int, int]) -> np.ndarray:
    """Inverse of `patchify`: rebuild the (T, H, W, 3) clip from patch rows."""
    patches = np.asarray(patches)
    t, h, w = grid
    pt, ph, pw = patch
    if patches.ndim != 2 or patches.shape != (t * h * w, pt * ph * pw * 3):
        raise ValueError(
            f"expected shape {(t * h * w, pt * ph * pw * 3)} for grid {grid} "
            f"and patch {patch}, got {patches.shape}")
    return rearrange(
        patches, "(t h w) (pt ph pw c) -> (t pt) (h ph) (w pw) c",
        t=t, h=h, w=w, pt=pt, ph=ph, pw=pw)


def positions(n: int, dim: int) -> np.ndarray:
    """Fixed 1-D sine/cosine table over the flattened token index.

    Row n holds pairs (sin(n / 10000^(2j/dim)), cos(n / 10000^(2j/dim))) at
    columns (2j, 2j+1).
    """
    if dim % 2 != 0:
        raise ValueError(f"position dimension must be even, got {dim}")
    index = np.arange(n, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = index * freq[None, :]
    table = np.empty((n, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


class PatchEmbed(nn.Module):
    """Linear patch projection plus the fixed positional table."""

    def __init__(self, patch_dim: int, embed_dim: int, num_tokens: int):
        super().__init__()
        self.proj = nn.Linear(patch_dim, embed_dim)
        table = torch.from_numpy(positions(num_tokens, embed_dim)).to(torch.float32)
        self.register_buffer("pos_table", table)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        if patches.shape[-2] != self.pos_table.shape[0]:
            raise ValueError(
                f"expected {self.pos_table.shape[0]} patches per clip, "
                f"got {patches.shape[-2]}")
        return self.proj(patches) + self.pos_table
