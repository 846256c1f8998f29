"""Optimization loops for masked pretraining and supervised finetuning.

Both loops share the same machinery: AdamW with decoupled weight decay (the
normalization gains/biases and the decoder's learned placeholder vector are
excluded from decay), a linear-warmup-then-cosine schedule evaluated per
optimization step, a learning rate scaled by batch_size / 256, checkpoints at
epoch boundaries, and an abort on the first non-finite loss or gradient.

Setting the environment variable SVFAP_DETERMINISTIC=1 pins the run to
deterministic kernels on a single thread; runs are seeded either way.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .config import ArchConfig, TrainConfig, serialize, validate
from .data import ClipDataset, crop_face_region
from .decoder import ReconstructionDecoder, reconstruction_loss
from .encoder import TPSBTEncoder
from .heads import PredictionHead, ce_loss, mse_loss, two_clip_inference
from .masking import make_tube_mask
from .metrics import acc_personality, ccc, pcc, uar, war, weighted_f1
from .tokenizer import patchify

CHECKPOINT_VERSION = 1
ADAM_EPS = 1e-8
LR_REFERENCE_BATCH = 256


def configure_determinism() -> bool:
    """Honor SVFAP_DETERMINISTIC=1; returns whether strict mode is active."""
    strict = os.environ.get("SVFAP_DETERMINISTIC", "") == "1"
    if strict:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)
    return strict


def scaled_lr(base_lr: float, batch_size: int) -> float:
    """Linear scaling rule: base_lr * batch_size / 256."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    return base_lr * batch_size / LR_REFERENCE_BATCH


def lr_at(step: int, total_steps: int, warmup_steps: int,
          peak_lr: float) -> float:
    """Per-step schedule: linear ramp to the peak, then a cosine decay to 0."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if warmup_steps >= total_steps:
        raise ValueError("warmup_steps must be smaller than total_steps")
    if step < warmup_steps:
        return peak_lr * (step + 1) / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def no_decay_param_names(model: nn.Module) -> set:
    """Parameters kept out of weight decay: normalization parameters and any
    parameter named mask_token."""
    names = set()
    for mod_name, module in model.named_modules():
        if isinstance(module, nn.LayerNorm):
            for p_name, _ in module.named_parameters(recurse=False):
                names.add(f"{mod_name}.{p_name}" if mod_name else p_name)
    for name, _ in model.named_parameters():
        if name.split(".")[-1] == "mask_token":
            names.add(name)
    return names


def build_optimizer(model: nn.Module, cfg: TrainConfig,
                    lr: Optional[float] = None) -> torch.optim.AdamW:
    if lr is None:
        lr = scaled_lr(cfg.base_lr, cfg.batch_size)
    skip = no_decay_param_names(model)
    decay, no_decay = [], []
    for name, param in model.named_parameters():
        if not param.requires_grad:
            continue
        (no_decay if name in skip else decay).append(param)
    groups = [
        {"params": decay, "weight_decay": cfg.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(groups, lr=lr, betas=(cfg.beta1, cfg.beta2),
                             eps=ADAM_EPS)


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


class MaskedAutoencoder(nn.Module):
    """Encoder plus reconstruction decoder used during pretraining."""

    def __init__(self, cfg: ArchConfig, variant: str = "full",
                 downsample: str = "conv", normalize_scores: bool = False):
        super().__init__()
        self.cfg = cfg
        self.encoder = TPSBTEncoder(cfg, variant=variant,
                                    downsample=downsample,
                                    normalize_scores=normalize_scores)
        self.decoder = ReconstructionDecoder(cfg)

    def forward(self, patches: torch.Tensor, mask) -> Tuple[torch.Tensor,
                                                            torch.Tensor]:
        index = self.encoder.visible_index(mask, patches.shape[0],
                                           patches.device)
        if index is None:
            raise ValueError("pretraining requires a mask")
        latent = self.encoder(patches, index)
        return self.decoder(latent, index), index


class FinetunePredictor(nn.Module):
    """Encoder over the full token lattice plus a pooled prediction head."""

    def __init__(self, cfg: ArchConfig, num_outputs: int,
                 variant: str = "full", downsample: str = "conv",
                 normalize_scores: bool = False):
        super().__init__()
        self.cfg = cfg
        self.encoder = TPSBTEncoder(cfg, variant=variant,
                                    downsample=downsample,
                                    normalize_scores=normalize_scores)
        self.head = PredictionHead(cfg.embed_dim, num_outputs)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        tokens = self.encoder(patches)
        return self.head(tokens)


class RngBundle:
    """Independent streams for clip order, window starts, and masks."""

    _NAMES = ("order", "start", "mask")

    def __init__(self, seed: int):
        children = np.random.SeedSequence(seed).spawn(len(self._NAMES))
        for name, child in zip(self._NAMES, children):
            setattr(self, name, np.random.default_rng(child))

    def state(self) -> Dict[str, dict]:
        return {name: getattr(self, name).bit_generator.state
                for name in self._NAMES}

    def restore(self, state: Dict[str, dict]) -> None:
        for name in self._NAMES:
            getattr(self, name).bit_generator.state = state[name]


@dataclass
class TrainLog:
    """Per-step and per-epoch loss history of one run."""

    step_losses: List[float] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)
    lrs: List[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        if not self.epoch_losses:
            raise ValueError("no epochs recorded")
        return self.epoch_losses[-1]


def save_checkpoint(path, model: nn.Module,
                    optimizer: Optional[torch.optim.Optimizer],
                    epoch: int, arch: ArchConfig, train: TrainConfig,
                    rngs: Optional[RngBundle] = None,
                    log: Optional[TrainLog] = None) -> None:
    """Versioned training-state container written with torch.save."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "config": serialize(arch, train),
        "torch_rng": torch.get_rng_state(),
        "numpy_rng": rngs.state() if rngs is not None else None,
        "log": {"step_losses": list(log.step_losses),
                "epoch_losses": list(log.epoch_losses),
                "lrs": list(log.lrs)} if log is not None else None,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    """Read a checkpoint written by save_checkpoint (trusted local file)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint format_version {version!r}, "
            f"expected {CHECKPOINT_VERSION}")
    return payload


def _restore_log(payload: Optional[dict]) -> TrainLog:
    if not payload:
        return TrainLog()
    return TrainLog(step_losses=list(payload["step_losses"]),
                    epoch_losses=list(payload["epoch_losses"]),
                    lrs=list(payload["lrs"]))


def _check_finite_loss(loss: torch.Tensor, step: int) -> None:
    if not torch.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss {loss.item()!r} at step {step}")


def _check_finite_grads(model: nn.Module, step: int) -> None:
    for name, param in model.named_parameters():
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise FloatingPointError(
                f"non-finite gradient in parameter {name!r} at step {step}")


def clip_to_patches(clip: np.ndarray, dataset: ClipDataset,
                    arch: ArchConfig) -> np.ndarray:
    """Standardize one [0, 1] clip and patchify it to (N, patch_dim) float32.

    Oversized frames are reduced to the model's input window first (top rows,
    horizontally centered columns).
    """
    t, h, w = arch.input
    if clip.shape[0] != t:
        raise ValueError(
            f"clip has {clip.shape[0]} frames, the model expects {t}")
    if clip.shape[1] != h or clip.shape[2] != w:
        clip = np.stack([crop_face_region(f, h, w) for f in clip])
    clip = dataset.standardize(np.asarray(clip, dtype=np.float32))
    return patchify(clip, arch.patch)


def _batch_indices(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def _steps_per_epoch(num_clips: int, batch_size: int) -> int:
    return math.ceil(num_clips / batch_size)


def _schedule(train: TrainConfig, steps_per_epoch: int) -> Tuple[int, int, float]:
    total = train.epochs * steps_per_epoch
    warmup = train.warmup_epochs * steps_per_epoch
    peak = scaled_lr(train.base_lr, train.batch_size)
    return total, warmup, peak


def _run_epochs(model: nn.Module, dataset: ClipDataset, arch: ArchConfig,
                train: TrainConfig, step_fn: Callable,
                out_dir=None, resume_from=None,
                checkpoint_name: str = "checkpoint.pt") -> TrainLog:
    """Shared epoch driver; step_fn(batch_indices, rngs) returns the loss."""
    validate(arch)
    validate(train)
    configure_determinism()
    steps_per_epoch = _steps_per_epoch(len(dataset), train.batch_size)
    total, warmup, peak = _schedule(train, steps_per_epoch)
    optimizer = build_optimizer(model, train)
    rngs = RngBundle(train.seed)
    torch.manual_seed(train.seed)
    log = TrainLog()
    start_epoch = 0
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        if payload["config"] != serialize(arch, train):
            raise ValueError(
                "checkpoint config does not match the requested run; "
                "refusing to resume")
        model.load_state_dict(payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        torch.set_rng_state(payload["torch_rng"])
        if payload["numpy_rng"] is not None:
            rngs.restore(payload["numpy_rng"])
        log = _restore_log(payload["log"])
        start_epoch = payload["epoch"]
    model.train()
    for epoch in range(start_epoch, train.epochs):
        order = rngs.order.permutation(len(dataset))
        epoch_losses = []
        for batch_num, chunk in enumerate(_batch_indices(order,
                                                         train.batch_size)):
            step = epoch * steps_per_epoch + batch_num
            lr = lr_at(step, total, warmup, peak)
            set_lr(optimizer, lr)
            optimizer.zero_grad()
            loss = step_fn(chunk, rngs)
            _check_finite_loss(loss, step)
            loss.backward()
            _check_finite_grads(model, step)
            optimizer.step()
            log.step_losses.append(loss.item())
            log.lrs.append(lr)
            epoch_losses.append(loss.item())
        log.epoch_losses.append(float(np.mean(epoch_losses)))
        if out_dir is not None:
            save_checkpoint(Path(out_dir) / checkpoint_name, model, optimizer,
                            epoch + 1, arch, train, rngs, log)
    model.eval()
    return log


def run_pretrain(model: MaskedAutoencoder, dataset: ClipDataset,
                 arch: ArchConfig, train: TrainConfig,
                 out_dir=None, resume_from=None) -> TrainLog:
    """Masked-reconstruction pretraining over the manifest clips."""

    def step(chunk: np.ndarray, rngs: RngBundle) -> torch.Tensor:
        batch = np.stack([
            clip_to_patches(dataset.train_clip(int(i), rngs.start),
                            dataset, arch) for i in chunk])
        masks = [make_tube_mask(arch.grid, arch.masking_ratio, rngs.mask)
                 for _ in chunk]
        x = torch.from_numpy(batch)
        pred, _ = model(x, masks)
        masked_index = torch.from_numpy(
            np.stack([m.masked_tokens() for m in masks]))
        return reconstruction_loss(pred, x, masked_index)

    return _run_epochs(model, dataset, arch, train, step,
                       out_dir=out_dir, resume_from=resume_from)


def run_finetune(model: FinetunePredictor, dataset: ClipDataset,
                 arch: ArchConfig, train: TrainConfig, task: str = "class",
                 out_dir=None, resume_from=None) -> TrainLog:
    """Supervised training of the encoder plus head on labeled clips."""
    if task not in ("class", "scores"):
        raise ValueError(f"unknown task {task!r}")

    def step(chunk: np.ndarray, rngs: RngBundle) -> torch.Tensor:
        batch = np.stack([
            clip_to_patches(dataset.train_clip(int(i), rngs.start),
                            dataset, arch) for i in chunk])
        out = model(torch.from_numpy(batch))
        if task == "class":
            target = torch.tensor([dataset.label(int(i)) for i in chunk],
                                  dtype=torch.long)
            return ce_loss(out, target)
        target = torch.tensor(
            np.stack([dataset.label(int(i)) for i in chunk]),
            dtype=out.dtype)
        return mse_loss(out, target)

    return _run_epochs(model, dataset, arch, train, step,
                       out_dir=out_dir, resume_from=resume_from)


def make_predictor(model: nn.Module, dataset: ClipDataset,
                   arch: ArchConfig) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a model as a clip -> score-vector function for evaluation."""

    def predict(clip: np.ndarray) -> np.ndarray:
        patches = clip_to_patches(clip, dataset, arch)
        with torch.no_grad():
            out = model(torch.from_numpy(patches).unsqueeze(0))
        return out.squeeze(0).numpy()

    return predict


def evaluate(model: nn.Module, dataset: ClipDataset, arch: ArchConfig,
             task: str = "class", stride: int = 1) -> Dict[str, float]:
    """Two-clip evaluation over a labeled manifest.

    Classification reports war / uar / wf1; score regression reports the mean
    correlation metrics (pcc / ccc) over target dimensions plus acc, defined
    as one minus the mean absolute error.
    """
    if task not in ("class", "scores"):
        raise ValueError(f"unknown task {task!r}")
    model.eval()
    predict = make_predictor(model, dataset, arch)
    outputs, targets = [], []
    for i in range(len(dataset)):
        scores = two_clip_inference(dataset.frames(i).astype(np.float32) / 255.0,
                                    predict, arch.input[0], stride,
                                    classify=(task == "class"))
        outputs.append(scores)
        targets.append(dataset.label(i))
    if task == "class":
        preds = np.array([int(np.argmax(s)) for s in outputs])
        labels = np.array(targets, dtype=np.int64)
        k = dataset.num_classes
        return {"war": war(preds, labels), "uar": uar(preds, labels, k),
                "wf1": weighted_f1(preds, labels, k)}
    pred = np.stack(outputs)
    target = np.stack(targets)
    pccs = [pcc(pred[:, d], target[:, d]) for d in range(target.shape[1])]
    cccs = [ccc(pred[:, d], target[:, d]) for d in range(target.shape[1])]
    return {"pcc": float(np.mean(pccs)), "ccc": float(np.mean(cccs)),
            "acc": acc_personality(pred.ravel(), target.ravel())}
