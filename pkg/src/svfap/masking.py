"""Tube masks: one spatial visibility pattern replicated along the time axis.

Visible-token order everywhere is time-major, then ascending spatial index.
All functions accept numpy arrays or torch tensors and return the same kind.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch


@dataclass(frozen=True)
class TubeMask:
    """Per-spatial-position visibility pattern shared by every temporal slice."""

    visible_spatial: np.ndarray  # sorted unique indices into [0, h*w)
    grid: Tuple[int, int, int]
    ratio: float

    def __post_init__(self):
        vis = np.asarray(self.visible_spatial, dtype=np.int64)
        object.__setattr__(self, "visible_spatial", vis)
        _, h, w = self.grid
        s_full = h * w
        if vis.ndim != 1 or len(np.unique(vis)) != len(vis):
            raise ValueError("visible_spatial must be a flat set of unique indices")
        if len(vis) and (vis.min() < 0 or vis.max() >= s_full):
            raise ValueError(f"visible_spatial indices out of range [0, {s_full})")
        if np.any(np.diff(vis) < 0):
            raise ValueError("visible_spatial must be sorted ascending")

    @property
    def spatial_full(self) -> int:
        _, h, w = self.grid
        return h * w

    @property
    def num_tokens(self) -> int:
        t, h, w = self.grid
        return t * h * w

    @property
    def num_visible(self) -> int:
        return self.grid[0] * len(self.visible_spatial)

    @property
    def num_masked(self) -> int:
        return self.num_tokens - self.num_visible

    def visible_tokens(self) -> np.ndarray:
        """Flattened lattice indices of visible tokens, time-major order."""
        t = self.grid[0]
        offsets = np.arange(t, dtype=np.int64)[:, None] * self.spatial_full
        return (offsets + self.visible_spatial[None, :]).reshape(-1)

    def masked_tokens(self) -> np.ndarray:
        """Flattened lattice indices of masked tokens, time-major order."""
        hidden = np.setdiff1d(np.arange(self.spatial_full, dtype=np.int64),
                              self.visible_spatial)
        t = self.grid[0]
        offsets = np.arange(t, dtype=np.int64)[:, None] * self.spatial_full
        return (offsets + hidden[None, :]).reshape(-1)


def visible_count(spatial_full: int, ratio: float) -> int:
    """Spatial tokens kept per slice: round(S * (1 - ratio))."""
    return int(round(spatial_full * (1.0 - ratio)))


def make_tube_mask(grid: Tuple[int, int, int], ratio: float,
                   rng: np.random.Generator) -> TubeMask:
    """Draw a tube mask with visible positions uniform without replacement."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"masking ratio must lie in [0, 1), got {ratio}")
    _, h, w = grid
    s_full = h * w
    keep = visible_count(s_full, ratio)
    if keep < 1:
        raise ValueError(
            f"masking ratio {ratio} leaves zero visible tokens on a "
            f"{h}x{w} spatial grid")
    visible = np.sort(rng.choice(s_full, size=keep, replace=False))
    return TubeMask(visible_spatial=visible, grid=grid, ratio=ratio)


def _check_rows(tokens, mask: TubeMask) -> None:
    if tokens.shape[-2] != mask.num_tokens:
        raise ValueError(
            f"token count {tokens.shape[-2]} does not match mask grid "
            f"{mask.grid} (expected {mask.num_tokens})")


def gather_visible(tokens, mask: TubeMask):
    """Select visible token rows; pure selection, time-major output order."""
    _check_rows(tokens, mask)
    index = mask.visible_tokens()
    if torch.is_tensor(tokens):
        return tokens.index_select(-2, torch.as_tensor(index, device=tokens.device))
    return np.take(tokens, index, axis=-2)


def scatter_full(visible, mask: TubeMask, mask_token):
    """Place visible rows at their lattice positions, mask_token everywhere else."""
    if visible.shape[-2] != mask.num_visible:
        raise ValueError(
            f"visible row count {visible.shape[-2]} does not match mask "
            f"(expected {mask.num_visible})")
    index = mask.visible_tokens()
    n = mask.num_tokens
    if torch.is_tensor(visible):
        token = torch.as_tensor(mask_token, dtype=visible.dtype,
                                device=visible.device)
        shape = visible.shape[:-2] + (n, visible.shape[-1])
        out = token.expand(shape).clone()
        out[..., index, :] = visible
        return out
    visible = np.asarray(visible)
    out = np.broadcast_to(np.asarray(mask_token, dtype=visible.dtype),
                          visible.shape[:-2] + (n, visible.shape[-1])).copy()
    out[..., index, :] = visible
    return out
