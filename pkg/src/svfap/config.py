"""Architecture and training hyperparameters: presets, validation, flat-text serialization.

Geometry fields use (time, height, width) ordering throughout. The config file
format is one ``key = value`` per line with keys named exactly as the dataclass
fields; tuples are comma-joined.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Tuple

PRESET_NAMES = ("TPSBT-S", "TPSBT-B")


@dataclass(frozen=True)
class ArchConfig:
    """All architecture hyperparameters for the encoder/decoder pair."""

    embed_dim: int = 512
    stage_depths: Tuple[int, int, int] = (12, 6, 3)
    bottleneck_tokens: int = 8
    temporal_stride: int = 2
    masking_ratio: float = 0.9
    patch: Tuple[int, int, int] = (2, 16, 16)
    input: Tuple[int, int, int] = (16, 160, 160)
    heads: int = 8
    decoder_dim: int = 384
    decoder_depth: int = 4
    decoder_heads: int = 6

    def __post_init__(self):
        # Tolerate lists and iterables coming from parsed config files.
        for name in ("stage_depths", "patch", "input"):
            value = getattr(self, name)
            if not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(value))

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def grid(self) -> Tuple[int, int, int]:
        """Token lattice (t, h, w) after patch embedding."""
        (t, h, w), (pt, ph, pw) = self.input, self.patch
        return (t // pt, h // ph, w // pw)

    @property
    def patch_dim(self) -> int:
        pt, ph, pw = self.patch
        return pt * ph * pw * 3

    @property
    def num_tokens(self) -> int:
        t, h, w = self.grid
        return t * h * w

    @property
    def spatial_tokens(self) -> int:
        _, h, w = self.grid
        return h * w

    @property
    def visible_spatial(self) -> int:
        """Spatial tokens kept per temporal slice under the masking ratio."""
        return int(round(self.spatial_tokens * (1.0 - self.masking_ratio)))

    def stage_slices(self, stage: int) -> int:
        """Temporal length at stage `stage` in {1, 2, 3}."""
        if stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2 or 3, got {stage}")
        return self.grid[0] // self.temporal_stride ** (stage - 1)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters shared by pretraining and fine-tuning."""

    base_lr: float = 3e-4
    batch_size: int = 256
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    epochs: int = 100
    warmup_epochs: int = 5
    seed: int = 0


def preset(name: str) -> ArchConfig:
    """Return one of the two validated architecture presets."""
    if name == "TPSBT-S":
        cfg = ArchConfig(embed_dim=384, stage_depths=(8, 4, 2), heads=6)
    elif name == "TPSBT-B":
        cfg = ArchConfig()
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    validate(cfg)
    return cfg


def pretrain_defaults() -> TrainConfig:
    return TrainConfig()


def finetune_defaults() -> TrainConfig:
    return TrainConfig(base_lr=1e-3, batch_size=96, beta2=0.999)


def _arch_violations(cfg: ArchConfig) -> list:
    msgs = []
    for name in ("embed_dim", "bottleneck_tokens", "temporal_stride", "heads",
                 "decoder_dim", "decoder_depth", "decoder_heads"):
        if getattr(cfg, name) < 1:
            msgs.append(f"{name} must be a positive integer")
    for name in ("stage_depths", "patch", "input"):
        value = getattr(cfg, name)
        if len(value) != 3:
            msgs.append(f"{name} must have exactly three entries")
        elif any(v < 1 for v in value):
            msgs.append(f"{name} entries must be positive integers")
    if not 0.0 <= cfg.masking_ratio < 1.0:
        msgs.append("masking_ratio not in [0, 1)")
    if msgs:
        # Derived checks below assume well-formed fields.
        return msgs

    (t_in, h_in, w_in), (pt, ph, pw) = cfg.input, cfg.patch
    if t_in % pt != 0:
        msgs.append("T not divisible by pt")
    if h_in % ph != 0:
        msgs.append("H not divisible by ph")
    if w_in % pw != 0:
        msgs.append("W not divisible by pw")
    k = cfg.temporal_stride
    if t_in / (pt * k * k) < 1.0:
        msgs.append("stage-3 temporal length < 1")
    elif t_in % pt == 0 and cfg.grid[0] % (k * k) != 0:
        msgs.append("stage temporal lengths not divisible by temporal_stride")
    if cfg.embed_dim % cfg.heads != 0:
        msgs.append("embed_dim not divisible by heads")
    if cfg.decoder_dim % cfg.decoder_heads != 0:
        msgs.append("decoder_dim not divisible by decoder_heads")
    if h_in % ph == 0 and w_in % pw == 0 and cfg.visible_spatial < 1:
        msgs.append("masking_ratio leaves zero visible spatial tokens")
    return msgs


def _train_violations(cfg: TrainConfig) -> list:
    msgs = []
    if cfg.base_lr <= 0:
        msgs.append("base_lr must be positive")
    if cfg.batch_size < 1:
        msgs.append("batch_size must be a positive integer")
    if cfg.weight_decay < 0:
        msgs.append("weight_decay must be nonnegative")
    for name in ("beta1", "beta2"):
        if not 0.0 < getattr(cfg, name) < 1.0:
            msgs.append(f"{name} not in (0, 1)")
    if cfg.epochs < 1:
        msgs.append("epochs must be a positive integer")
    if cfg.warmup_epochs < 1:
        msgs.append("warmup_epochs must be a positive integer")
    elif cfg.warmup_epochs >= cfg.epochs:
        msgs.append("warmup_epochs not less than epochs")
    return msgs


def violations(cfg) -> list:
    """All violated invariants of an ArchConfig or TrainConfig, one message each."""
    if isinstance(cfg, ArchConfig):
        return _arch_violations(cfg)
    if isinstance(cfg, TrainConfig):
        return _train_violations(cfg)
    raise TypeError(f"expected ArchConfig or TrainConfig, got {type(cfg).__name__}")


def validate(cfg) -> None:
    """Raise ValueError naming every violated invariant; no-op when valid."""
    msgs = violations(cfg)
    if msgs:
        kind = type(cfg).__name__
        raise ValueError(f"invalid {kind}:\n  " + "\n  ".join(msgs))


_ARCH_FIELDS = tuple(f.name for f in dataclasses.fields(ArchConfig))
_TRAIN_FIELDS = tuple(f.name for f in dataclasses.fields(TrainConfig))
_TUPLE_FIELDS = frozenset(("stage_depths", "patch", "input"))
_FLOAT_FIELDS = frozenset(("masking_ratio", "base_lr", "weight_decay", "beta1", "beta2"))


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value)


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _TUPLE_FIELDS:
            return tuple(int(part.strip()) for part in raw.split(","))
        if key in _FLOAT_FIELDS:
            return float(raw)
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"cannot parse value for {key!r}: {raw!r}") from exc


def serialize(arch: Optional[ArchConfig] = None,
              train: Optional[TrainConfig] = None) -> str:
    """Render configs as flat ``key = value`` text, fields in declaration order."""
    lines = []
    for cfg in (arch, train):
        if cfg is None:
            continue
        for field in dataclasses.fields(cfg):
            lines.append(f"{field.name} = {_format_value(getattr(cfg, field.name))}")
    return "\n".join(lines) + "\n"


def _rebuild(cls, base, updates, field_names):
    if base is not None:
        return dataclasses.replace(base, **updates) if updates else base
    if not updates:
        return None
    missing = [name for name in field_names if name not in updates]
    if missing:
        raise ValueError(
            f"incomplete {cls.__name__} and no base to fill it from; "
            f"missing: {', '.join(missing)}")
    return cls(**updates)


def deserialize(text: str,
                arch: Optional[ArchConfig] = None,
                train: Optional[TrainConfig] = None):
    """Parse ``key = value`` lines into an (ArchConfig, TrainConfig) pair.

    When a base config is supplied its keys are optional overrides; without a
    base, a config is built only if every one of its fields appears, and is
    returned as None if none of them do. Blank lines and ``#`` comments are
    ignored. Later assignments to the same key win.
    """
    assignments = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _ARCH_FIELDS and key not in _TRAIN_FIELDS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        assignments[key] = _parse_value(key, raw)
    arch_updates = {k: v for k, v in assignments.items() if k in _ARCH_FIELDS}
    train_updates = {k: v for k, v in assignments.items() if k in _TRAIN_FIELDS}
    return (_rebuild(ArchConfig, arch, arch_updates, _ARCH_FIELDS),
            _rebuild(TrainConfig, train, train_updates, _TRAIN_FIELDS))


def apply_assignments(arch: Optional[ArchConfig],
                      train: Optional[TrainConfig],
                      pairs) -> tuple:
    """Apply ``key=value`` override strings onto existing configs, last writer wins."""
    return deserialize("\n".join(pairs), arch=arch, train=train)
