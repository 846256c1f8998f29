"""Scikit-learn style wrappers around the training loops.

These estimators take either a ClipDataset or an in-memory clip array of shape
(n_clips, T, H, W, 3) with values in [0, 1]. They exist so the models compose
with scikit-learn tooling (clone, grid search, pipelines); the underlying
optimization is the same trainer module either way.
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, \
    TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import ArchConfig, TrainConfig, finetune_defaults, preset, \
    pretrain_defaults
from .data import ClipDataset, random_clip_start, sample_clip
from .trainer import FinetunePredictor, MaskedAutoencoder, clip_to_patches, \
    load_checkpoint, run_finetune, run_pretrain


def check_clip_array(X) -> np.ndarray:
    """Validate an (n, T, H, W, 3) float clip array with values in [0, 1]."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 5 or X.shape[-1] != 3:
        raise ValueError(
            f"expected clips of shape (n, T, H, W, 3), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty clip array")
    if not np.isfinite(X).all():
        raise ValueError("clips contain non-finite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError("clip values must lie in [0, 1]")
    return X


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape[0] != n:
        raise ValueError(f"got {y.shape[0]} labels for {n} clips")
    return y


class ArrayDataset:
    """In-memory drop-in for ClipDataset over a clip array."""

    def __init__(self, clips: np.ndarray, labels=None,
                 mean: Optional[np.ndarray] = None,
                 std: Optional[np.ndarray] = None,
                 clip_len: Optional[int] = None, stride: int = 1):
        self.clips = check_clip_array(clips)
        self.labels = labels
        self.clip_len = clip_len if clip_len is not None else self.clips.shape[1]
        self.stride = stride
        flat = self.clips.reshape(-1, 3).astype(np.float64)
        self.mean = flat.mean(axis=0) if mean is None else np.asarray(mean)
        self.std = flat.std(axis=0) if std is None else np.asarray(std)
        self.std = np.maximum(self.std, 1e-6)

    def __len__(self) -> int:
        return self.clips.shape[0]

    def frames(self, i: int) -> np.ndarray:
        return np.round(self.clips[i] * 255.0).astype(np.uint8)

    def clip(self, i: int, start: int) -> np.ndarray:
        return sample_clip(self.clips[i], self.clip_len, self.stride, start)

    def train_clip(self, i: int, rng: np.random.Generator) -> np.ndarray:
        start = random_clip_start(self.clips.shape[1], self.clip_len,
                                  self.stride, rng)
        return self.clip(i, start)

    def label(self, i: int):
        if self.labels is None:
            return None
        return self.labels[i]

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            raise ValueError("dataset has no labels")
        return int(np.max(self.labels)) + 1

    def standardize(self, clip: np.ndarray) -> np.ndarray:
        return (clip - self.mean.astype(clip.dtype)) / self.std.astype(clip.dtype)

    def unstandardize(self, clip: np.ndarray) -> np.ndarray:
        return clip * self.std.astype(clip.dtype) + self.mean.astype(clip.dtype)


DatasetLike = Union[ClipDataset, ArrayDataset, np.ndarray]


def _as_dataset(X: DatasetLike, y=None):
    if isinstance(X, (ClipDataset, ArrayDataset, _LabelOverride)):
        return X
    X = check_clip_array(X)
    labels = check_labels(y, X.shape[0]) if y is not None else None
    return ArrayDataset(X, labels=labels)


def _encoder_state(source):
    """Extract encoder weights from a checkpoint path, a fitted estimator, or
    a state dict (either encoder-only keys or full-model 'encoder.*' keys)."""
    if source is None:
        return None
    if isinstance(source, MaskedVideoPretrainer):
        check_is_fitted(source, "model_")
        return source.model_.encoder.state_dict()
    prefix = "encoder."
    if isinstance(source, dict):
        if any(k.startswith(prefix) for k in source):
            return {k[len(prefix):]: v for k, v in source.items()
                    if k.startswith(prefix)}
        return source
    payload = load_checkpoint(source)
    return {k[len(prefix):]: v for k, v in payload["model"].items()
            if k.startswith(prefix)}


class MaskedVideoPretrainer(TransformerMixin, BaseEstimator):
    """Self-supervised masked-reconstruction pretraining.

    fit(X) optimizes the autoencoder on unlabeled clips; transform(X) returns
    one mean-pooled embedding per clip from the trained encoder.
    """

    def __init__(self, arch: Optional[ArchConfig] = None,
                 train: Optional[TrainConfig] = None, variant: str = "full",
                 downsample: str = "conv", out_dir=None):
        self.arch = arch
        self.train = train
        self.variant = variant
        self.downsample = downsample
        self.out_dir = out_dir

    def fit(self, X: DatasetLike, y=None):
        self.arch_ = self.arch if self.arch is not None else preset("TPSBT-B")
        self.train_ = self.train if self.train is not None \
            else pretrain_defaults()
        dataset = _as_dataset(X)
        self.model_ = MaskedAutoencoder(self.arch_, variant=self.variant,
                                        downsample=self.downsample)
        self.log_ = run_pretrain(self.model_, dataset, self.arch_,
                                 self.train_, out_dir=self.out_dir)
        return self

    def transform(self, X: DatasetLike) -> np.ndarray:
        check_is_fitted(self, "model_")
        dataset = _as_dataset(X)
        out = []
        with torch.no_grad():
            for i in range(len(dataset)):
                patches = clip_to_patches(dataset.clip(i, 0), dataset,
                                          self.arch_)
                tokens = self.model_.encoder(
                    torch.from_numpy(patches).unsqueeze(0))
                out.append(tokens.mean(dim=1).squeeze(0).numpy())
        return np.stack(out)


class _FinetuneBase(BaseEstimator):
    """Shared supervised wrapper; subclasses pick the task and output map."""

    _task = "class"

    def __init__(self, arch: Optional[ArchConfig] = None,
                 train: Optional[TrainConfig] = None, variant: str = "full",
                 downsample: str = "conv", init=None, out_dir=None):
        self.arch = arch
        self.train = train
        self.variant = variant
        self.downsample = downsample
        self.init = init
        self.out_dir = out_dir

    def _fit(self, X: DatasetLike, y, num_outputs: int):
        self.arch_ = self.arch if self.arch is not None else preset("TPSBT-B")
        self.train_ = self.train if self.train is not None \
            else finetune_defaults()
        dataset = _as_dataset(X, y)
        self.model_ = FinetunePredictor(self.arch_, num_outputs,
                                        variant=self.variant,
                                        downsample=self.downsample)
        state = _encoder_state(self.init)
        if state is not None:
            self.model_.encoder.load_state_dict(state)
        self.log_ = run_finetune(self.model_, dataset, self.arch_,
                                 self.train_, task=self._task,
                                 out_dir=self.out_dir)
        return self

    def _forward(self, X: DatasetLike) -> np.ndarray:
        check_is_fitted(self, "model_")
        dataset = _as_dataset(X)
        out = []
        with torch.no_grad():
            for i in range(len(dataset)):
                patches = clip_to_patches(dataset.clip(i, 0), dataset,
                                          self.arch_)
                out.append(self.model_(
                    torch.from_numpy(patches).unsqueeze(0)).squeeze(0).numpy())
        return np.stack(out)


class VideoClassifier(ClassifierMixin, _FinetuneBase):
    """Clip classification with a mean-pooled linear head."""

    _task = "class"

    def fit(self, X: DatasetLike, y=None):
        if y is None:
            if not isinstance(X, (ClipDataset, ArrayDataset)):
                raise ValueError("y is required for array input")
            y = np.array([X.label(i) for i in range(len(X))])
        else:
            y = np.asarray(y)
        self.classes_ = np.unique(y)
        index_of = {c: i for i, c in enumerate(self.classes_)}
        encoded = np.array([index_of[c] for c in y], dtype=np.int64)
        if isinstance(X, (ClipDataset, ArrayDataset)):
            dataset = _LabelOverride(X, encoded)
        else:
            dataset = ArrayDataset(check_clip_array(X), labels=encoded)
        return self._fit(dataset, None, num_outputs=len(self.classes_))

    def predict_proba(self, X: DatasetLike) -> np.ndarray:
        logits = self._forward(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        return exp / exp.sum(axis=1, keepdims=True)

    def predict(self, X: DatasetLike) -> np.ndarray:
        out = self._forward(X)
        return self.classes_[np.argmax(out, axis=1)]


class VideoRegressor(RegressorMixin, _FinetuneBase):
    """Clip-level score regression with a mean-pooled linear head."""

    _task = "scores"

    def fit(self, X: DatasetLike, y=None):
        if y is None:
            if not isinstance(X, (ClipDataset, ArrayDataset)):
                raise ValueError("y is required for array input")
            y = np.stack([np.atleast_1d(X.label(i)) for i in range(len(X))])
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        self._target_dim = y.shape[1]
        dataset = X if isinstance(X, (ClipDataset, ArrayDataset)) else None
        if dataset is not None:
            dataset = _LabelOverride(dataset, y)
        else:
            dataset = ArrayDataset(check_clip_array(X), labels=y)
        return self._fit(dataset, None, num_outputs=y.shape[1])

    def predict(self, X: DatasetLike) -> np.ndarray:
        return self._forward(X)


class _LabelOverride:
    """Proxy that swaps the labels of an existing dataset object."""

    def __init__(self, base, labels):
        self._base = base
        self._labels = labels

    def __getattr__(self, name):
        return getattr(self._base, name)

    def __len__(self):
        return len(self._base)

    def label(self, i: int):
        return self._labels[i]

    @property
    def num_classes(self) -> int:
        return int(np.max(self._labels)) + 1
