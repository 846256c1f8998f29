"""The three-stage encoder: standard blocks in stage 1, temporal downsampling,
spatial-bottleneck stages with a resolution-restoring block, and optional
summation-based multi-scale fusion of the stage outputs.

Stage tensors are kept as (batch, slices, spatial, channels); block stacks see
them flattened to (batch, tokens, channels).
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
from einops import rearrange

from .config import ArchConfig, validate
from .complexity import stage_plan
from .layers import (TransformerBlock, SBTBlock, ReverseSBTBlock,
                     init_weights)
from .masking import TubeMask
from .tokenizer import PatchEmbed

DOWNSAMPLE_MODES = ("conv", "avg", "max")


class TemporalDownsample(nn.Module):
    """Per-spatial-position temporal reduction by the stride factor.

    The default is a strided 1-D convolution over time with matching kernel
    size and stride; "avg" and "max" pooling are parameter-free alternatives.
    """

    def __init__(self, dim: int, stride: int, mode: str = "conv"):
        super().__init__()
        if mode not in DOWNSAMPLE_MODES:
            raise ValueError(f"unknown downsample mode {mode!r}; "
                             f"choose from {DOWNSAMPLE_MODES}")
        self.stride = stride
        self.mode = mode
        if mode == "conv":
            self.op = nn.Conv1d(dim, dim, kernel_size=stride, stride=stride)
        elif mode == "avg":
            self.op = nn.AvgPool1d(kernel_size=stride, stride=stride)
        else:
            self.op = nn.MaxPool1d(kernel_size=stride, stride=stride)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, T, S, C) -> (B, T/stride, S, C)
        slices = x.shape[-3]
        if slices % self.stride != 0:
            raise ValueError(
                f"temporal length {slices} not divisible by stride {self.stride}")
        b, t, s, c = x.shape
        y = rearrange(x, "b t s c -> (b s) c t")
        y = self.op(y)
        return rearrange(y, "(b s) c t -> b t s c", b=b, s=s)


class SpatialAttention(nn.Module):
    """Per-slice compression of the spatial tokens into a few bottleneck tokens.

    Scores come from a two-layer network over each token; the bottlenecks are
    the score-weighted sums of the slice's tokens. The published form carries
    no normalization over the spatial axis; `normalize=True` applies a softmax
    over it instead, kept as an explicit switch.
    """

    def __init__(self, dim: int, num_tokens: int, normalize: bool = False):
        super().__init__()
        self.num_tokens = num_tokens
        self.normalize = normalize
        self.fc1 = nn.Linear(dim, 4 * dim)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(4 * dim, num_tokens)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, T, S, C) -> (B, T, G, C)
        scores = self.fc2(self.act(self.fc1(x)))
        if self.normalize:
            scores = scores.softmax(dim=-2)
        z = torch.matmul(x.transpose(-2, -1), scores)
        return z.transpose(-2, -1)


def temporal_upsample(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Nearest-neighbor temporal upsampling: repeat each slice `factor` times."""
    if factor < 1:
        raise ValueError(f"upsampling factor must be positive, got {factor}")
    if factor == 1:
        return x
    return torch.repeat_interleave(x, factor, dim=-3)


class StandardStage(nn.Module):
    """A stack of standard transformer blocks over the flattened stage tokens."""

    def __init__(self, dim: int, heads: int, depth: int):
        super().__init__()
        self.blocks = nn.ModuleList(TransformerBlock(dim, heads)
                                    for _ in range(depth))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, s, c = x.shape
        y = x.reshape(b, t * s, c)
        for block in self.blocks:
            y = block(y)
        return y.reshape(b, t, s, c)


class BottleneckStage(nn.Module):
    """Spatial-attention summary, bottleneck blocks cross-attending to the
    stage input, then one resolution-restoring block."""

    def __init__(self, dim: int, heads: int, depth: int, num_tokens: int,
                 normalize_scores: bool = False):
        super().__init__()
        self.spatial = SpatialAttention(dim, num_tokens, normalize_scores)
        self.blocks = nn.ModuleList(SBTBlock(dim, heads)
                                    for _ in range(depth - 1))
        self.reverse = ReverseSBTBlock(dim, heads)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, s, c = x.shape
        z = self.spatial(x).reshape(b, -1, c)
        context = x.reshape(b, t * s, c)
        for block in self.blocks:
            z = block(z, context)
        out = self.reverse(context, z)
        return out.reshape(b, t, s, c)


MaskArg = Union[TubeMask, Sequence[TubeMask], torch.Tensor, None]


class TPSBTEncoder(nn.Module):
    """Encoder over patch rows; masked pretraining mode and full fine-tuning mode.

    With a mask, only visible tokens are processed and the default output is
    the fused sum of all three stage outputs upsampled to stage-1 length.
    Without one, all tokens are processed and the default output is the final
    stage only. `fused` overrides the default; `return_stages` additionally
    returns each stage output.
    """

    def __init__(self, cfg: ArchConfig, variant: str = "full",
                 downsample: str = "conv", normalize_scores: bool = False):
        super().__init__()
        validate(cfg)
        if downsample not in DOWNSAMPLE_MODES:
            raise ValueError(f"unknown downsample mode {downsample!r}; "
                             f"choose from {DOWNSAMPLE_MODES}")
        self.cfg = cfg
        self.variant = variant
        self.plans = stage_plan(cfg, variant)
        c, heads, g = cfg.embed_dim, cfg.heads, cfg.bottleneck_tokens
        self.patch_embed = PatchEmbed(cfg.patch_dim, c, cfg.num_tokens)
        self.downsamples = nn.ModuleDict()
        stages = []
        for i, plan in enumerate(self.plans, start=1):
            if plan.downsample:
                self.downsamples[str(i)] = TemporalDownsample(
                    c, cfg.temporal_stride, downsample)
            if plan.kind == "standard":
                stages.append(StandardStage(c, heads, plan.depth))
            else:
                stages.append(BottleneckStage(c, heads, plan.depth, g,
                                              normalize_scores))
        self.stages = nn.ModuleList(stages)
        self.apply(init_weights)

    def visible_index(self, mask: MaskArg, batch: int,
                      device) -> Optional[torch.Tensor]:
        """Normalize a mask argument to a (batch, visible) index tensor."""
        if mask is None:
            return None
        if isinstance(mask, TubeMask):
            mask = [mask] * batch
        if torch.is_tensor(mask):
            index = mask.to(device=device, dtype=torch.long)
            if index.ndim == 1:
                index = index.expand(batch, -1)
        else:
            masks = list(mask)
            if len(masks) != batch:
                raise ValueError(
                    f"got {len(masks)} masks for a batch of {batch}")
            for m in masks:
                if m.grid != self.cfg.grid:
                    raise ValueError(
                        f"mask grid {m.grid} does not match config grid "
                        f"{self.cfg.grid}")
            stacked = np.stack([m.visible_tokens() for m in masks])
            index = torch.as_tensor(stacked, device=device)
        slices = self.cfg.grid[0]
        if index.shape[-1] % slices != 0:
            raise ValueError(
                f"visible token count {index.shape[-1]} is not a multiple of "
                f"the slice count {slices}")
        return index

    def forward(self, patches: torch.Tensor, mask: MaskArg = None, *,
                fused: Optional[bool] = None, return_stages: bool = False):
        if patches.ndim != 3:
            raise ValueError(
                f"expected patches of shape (batch, tokens, patch_dim), "
                f"got {tuple(patches.shape)}")
        batch = patches.shape[0]
        tokens = self.patch_embed(patches)
        index = self.visible_index(mask, batch, patches.device)
        if index is not None:
            gather = index.unsqueeze(-1).expand(-1, -1, tokens.shape[-1])
            tokens = torch.gather(tokens, 1, gather)
        slices = self.cfg.grid[0]
        spatial = tokens.shape[1] // slices
        x = tokens.reshape(batch, slices, spatial, -1)

        outs: List[torch.Tensor] = []
        for i, plan in enumerate(self.plans, start=1):
            if plan.downsample:
                x = self.downsamples[str(i)](x)
            x = self.stages[i - 1](x)
            outs.append(x)

        if fused is None:
            fused = index is not None
        if fused:
            top = outs[0].shape[-3]
            merged = outs[0]
            for x_i in outs[1:]:
                factor, rem = divmod(top, x_i.shape[-3])
                if rem:
                    raise ValueError(
                        f"stage length {x_i.shape[-3]} does not divide the "
                        f"stage-1 length {top}")
                merged = merged + temporal_upsample(x_i, factor)
            out = merged.reshape(batch, -1, merged.shape[-1])
        else:
            out = outs[2].reshape(batch, -1, outs[2].shape[-1])
        if return_stages:
            flat = [o.reshape(batch, -1, o.shape[-1]) for o in outs]
            return flat[0], flat[1], flat[2], out
        return out
