"""Downstream heads and losses: pooled affine prediction, cross-entropy,
mean-squared-error, and deterministic two-clip inference averaging."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import init_weights


class PredictionHead(nn.Module):
    """Global average pooling over tokens followed by one affine layer."""

    def __init__(self, dim: int, num_outputs: int):
        super().__init__()
        if num_outputs < 1:
            raise ValueError("num_outputs must be a positive integer")
        self.fc = nn.Linear(dim, num_outputs)
        self.apply(init_weights)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return pool_and_predict(tokens, self.fc)


def pool_and_predict(tokens: torch.Tensor, head: nn.Module) -> torch.Tensor:
    """Mean over the token axis, then the affine head."""
    if tokens.shape[-2] < 1:
        raise ValueError("cannot pool an empty token sequence")
    return head(tokens.mean(dim=-2))


def ce_loss(logits: torch.Tensor, target) -> torch.Tensor:
    """Cross-entropy of softmaxed logits against integer class targets.

    Accepts a single (K,) logit vector with an int target, or batched (B, K)
    logits with (B,) targets.
    """
    if logits.ndim == 1:
        logits = logits.unsqueeze(0)
        target = torch.as_tensor([int(target)], device=logits.device)
    else:
        target = torch.as_tensor(target, device=logits.device, dtype=torch.long)
    k = logits.shape[-1]
    if target.min() < 0 or target.max() >= k:
        raise ValueError(f"target class out of range [0, {k})")
    return F.cross_entropy(logits, target)


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Squared error averaged over the output dimensions (and any batch)."""
    if pred.shape != target.shape:
        raise ValueError(
            f"prediction shape {tuple(pred.shape)} does not match target "
            f"{tuple(target.shape)}")
    return F.mse_loss(pred, target)


def eval_clip_starts(num_frames: int, clip_len: int, stride: int) -> Sequence[int]:
    """The two deterministic clip starts used at evaluation time.

    The starts sit at the two uniform offsets over the sampleable range: 0 and
    num_frames - span for span = (clip_len - 1) * stride + 1, clamped at 0.
    """
    if num_frames < 1:
        raise ValueError("empty video")
    span = (clip_len - 1) * stride + 1
    return (0, max(0, num_frames - span))


def two_clip_inference(frames: np.ndarray,
                       predict: Callable[[np.ndarray], np.ndarray],
                       clip_len: int, stride: int,
                       classify: bool = True) -> np.ndarray:
    """Average the predictions of the two uniformly placed evaluation clips.

    `predict` maps a (clip_len, H, W, 3) clip to a score vector; classification
    scores are softmax-normalized before averaging, regression outputs are
    averaged raw. Frame indices wrap modulo the frame count.
    """
    from .data import sample_clip

    frames = np.asarray(frames)
    if frames.shape[0] < 1:
        raise ValueError("empty video")
    scores = []
    for start in eval_clip_starts(frames.shape[0], clip_len, stride):
        clip = sample_clip(frames, clip_len, stride, start)
        out = np.asarray(predict(clip), dtype=np.float64)
        if classify:
            shifted = out - out.max()
            out = np.exp(shifted) / np.exp(shifted).sum()
        scores.append(out)
    return (scores[0] + scores[1]) / 2.0
