"""Clip ingestion and synthesis.

Clips are stored as one directory per clip of lossless portable-pixmap frames
named ``f%05d.ppm``, listed by a ``manifest.csv`` with header
``path,label_kind,payload``. Dataset-wide per-channel normalization statistics
(of pixels scaled to [0, 1]) live in ``# mean = r g b`` / ``# std = r g b``
header comments of the manifest.

The synthetic generator renders one Gaussian-blob face per clip whose blink
and mouth-radius trajectories are fixed functions of the class, with a
per-clip integer start phase, optional i.i.d. pixel noise, and both class
labels and real-valued trajectory-amplitude scores as targets.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

LABEL_KINDS = ("class", "scores", "none")
MANIFEST_HEADER = ("path", "label_kind", "payload")
FRAME_PATTERN = "f{:05d}.ppm"

# Cyclic trajectory periods; classes cycle through the ones dividing the
# stored frame count so that equal-class clips differ only by start phase.
_PERIOD_CHOICES = (16, 8, 4, 32, 2)


@dataclass(frozen=True)
class VideoClip:
    """A dense pixel clip with values in [0, 1] plus its source and label."""

    pixels: np.ndarray  # (T, H, W, 3) float32
    source_id: str
    label: Union[int, np.ndarray, None] = None

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float32)
        if pixels.ndim != 4 or pixels.shape[-1] != 3:
            raise ValueError(f"expected (T, H, W, 3) pixels, got {pixels.shape}")
        if not np.isfinite(pixels).all():
            raise ValueError("clip contains non-finite pixel values")
        object.__setattr__(self, "pixels", pixels)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic dataset."""

    num_classes: int
    clips_per_class: int
    frames: int = 32
    height: int = 32
    width: int = 32
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.clips_per_class < 1:
            raise ValueError("clips_per_class must be positive")
        for name in ("frames", "height", "width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not np.isfinite(self.noise_std) or self.noise_std < 0:
            raise ValueError("noise_std must be finite and nonnegative")

    @property
    def geometry(self) -> Tuple[int, int, int]:
        return (self.frames, self.height, self.width)


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label_kind: str
    payload: str

    def class_index(self) -> int:
        if self.label_kind != "class":
            raise ValueError(f"row {self.path!r} has no class label")
        value = int(self.payload)
        if value < 0:
            raise ValueError(f"row {self.path!r} has negative class {value}")
        return value

    def scores(self) -> np.ndarray:
        if self.label_kind != "scores":
            raise ValueError(f"row {self.path!r} has no score vector")
        return np.array([float(part) for part in self.payload.split(";")],
                        dtype=np.float64)


@dataclass
class Manifest:
    """Rows of clip paths and labels plus dataset-wide pixel statistics."""

    root: Path
    rows: List[ManifestRow]
    mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    std: np.ndarray = field(default_factory=lambda: np.ones(3))
    extras: Dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)


def write_ppm(path, array: np.ndarray) -> None:
    """Write one (H, W, 3) uint8 frame as a binary portable pixmap."""
    array = np.ascontiguousarray(array)
    if array.dtype != np.uint8 or array.ndim != 3 or array.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) uint8, got {array.dtype} "
                         f"{array.shape}")
    Image.fromarray(array, mode="RGB").save(str(path), format="PPM")


def read_ppm(path) -> np.ndarray:
    """Read one frame back as (H, W, 3) uint8."""
    with Image.open(str(path)) as img:
        return np.asarray(img.convert("RGB"))


def crop_face_region(frame: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Upper-central sub-window: top edge at row 0, horizontally centered."""
    frame = np.asarray(frame)
    if frame.ndim != 3:
        raise ValueError(f"expected an (H, W, 3) frame, got {frame.shape}")
    h0, w0 = frame.shape[:2]
    if out_h > h0 or out_w > w0 or out_h < 1 or out_w < 1:
        raise ValueError(
            f"crop {out_h}x{out_w} does not fit inside a {h0}x{w0} frame")
    left = (w0 - out_w) // 2
    return frame[0:out_h, left:left + out_w].copy()


def sample_clip(frames: np.ndarray, clip_len: int, stride: int,
                start: int) -> np.ndarray:
    """Frames at start, start + stride, ...; indices wrap modulo the count."""
    frames = np.asarray(frames)
    if frames.shape[0] < 1:
        raise ValueError("empty frame sequence")
    index = (start + stride * np.arange(clip_len)) % frames.shape[0]
    return frames[index]


def clip_span(clip_len: int, stride: int) -> int:
    """Frames covered by one sampled clip: (clip_len - 1) * stride + 1."""
    return (clip_len - 1) * stride + 1


def random_clip_start(num_frames: int, clip_len: int, stride: int,
                      rng: np.random.Generator) -> int:
    """Training-mode start: uniform over the windows that avoid wrapping,
    or over all frames when the video is shorter than one span."""
    span = clip_span(clip_len, stride)
    if num_frames >= span:
        return int(rng.integers(0, num_frames - span + 1))
    return int(rng.integers(0, num_frames))


def mean_intensity_trajectory(frames: np.ndarray) -> np.ndarray:
    """Per-frame mean pixel intensity in [0, 1]."""
    frames = np.asarray(frames)
    if frames.dtype == np.uint8:
        frames = frames.astype(np.float64) / 255.0
    return frames.reshape(frames.shape[0], -1).mean(axis=1)


def _class_params(spec: SynthSpec, cls: int) -> Dict[str, float]:
    allowed = [p for p in _PERIOD_CHOICES if spec.frames % p == 0]
    if not allowed:
        allowed = [1]
    blink_period = allowed[cls % len(allowed)]
    mouth_period = allowed[(cls + 1) % len(allowed)]
    spread = cls / max(1, spec.num_classes - 1)
    return {
        "blink_period": float(blink_period),
        "mouth_period": float(mouth_period),
        "mouth_amp": 0.15 + 0.7 * spread,
    }


def _render_frame(spec: SynthSpec, params: Dict[str, float],
                  u: int) -> np.ndarray:
    """Deterministic noiseless frame at trajectory position u, uint8."""
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, spec.height),
                         np.linspace(0.0, 1.0, spec.width), indexing="ij")
    img = np.full((spec.height, spec.width, 3), 0.12)
    face = np.exp(-(((yy - 0.45) ** 2) + (xx - 0.5) ** 2) / (2 * 0.22 ** 2))
    img += face[..., None] * np.array([0.72, 0.60, 0.52])

    openness = 0.5 * (1.0 + np.cos(2 * np.pi * u / params["blink_period"]))
    for eye_x in (0.36, 0.64):
        eye = np.exp(-(((yy - 0.35) ** 2) + (xx - eye_x) ** 2) / (2 * 0.045 ** 2))
        img -= (0.1 + 0.5 * openness) * eye[..., None]

    radius = 0.09 * (1.0 + params["mouth_amp"]
                     * np.sin(2 * np.pi * u / params["mouth_period"]))
    dist = np.sqrt((yy - 0.62) ** 2 + ((xx - 0.5) * 1.3) ** 2)
    ring = np.exp(-((dist - radius) ** 2) / (2 * 0.02 ** 2))
    img -= ring[..., None] * np.array([0.35, 0.55, 0.55])

    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def synth_generate(spec: SynthSpec, out_dir) -> Manifest:
    """Render the dataset, write clips plus manifests, return the class manifest.

    Writes ``manifest.csv`` with class labels and ``manifest_scores.csv`` with
    per-clip score vectors (mouth-radius amplitude, blink rate); both follow
    the same row format. Deterministic given the seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    rows: List[ManifestRow] = []
    score_rows: List[ManifestRow] = []
    total = np.zeros(3)
    total_sq = np.zeros(3)
    count = 0
    for cls in range(spec.num_classes):
        params = _class_params(spec, cls)
        base_frames = [_render_frame(spec, params, u) for u in range(spec.frames)]
        scores = np.array([params["mouth_amp"], 1.0 / params["blink_period"]])
        for j in range(spec.clips_per_class):
            name = f"class{cls:02d}_clip{j:03d}"
            clip_dir = out / name
            clip_dir.mkdir(exist_ok=True)
            phase = j % spec.frames
            for f in range(spec.frames):
                frame = base_frames[(f + phase) % spec.frames]
                if spec.noise_std > 0:
                    noisy = frame.astype(np.float64) / 255.0
                    noisy += rng.normal(0.0, spec.noise_std, size=noisy.shape)
                    frame = np.round(np.clip(noisy, 0.0, 1.0) * 255.0)
                    frame = frame.astype(np.uint8)
                write_ppm(clip_dir / FRAME_PATTERN.format(f), frame)
                scaled = frame.astype(np.float64) / 255.0
                total += scaled.reshape(-1, 3).sum(axis=0)
                total_sq += (scaled ** 2).reshape(-1, 3).sum(axis=0)
                count += scaled.shape[0] * scaled.shape[1]
            rows.append(ManifestRow(name, "class", str(cls)))
            payload = ";".join(repr(float(v)) for v in scores)
            score_rows.append(ManifestRow(name, "scores", payload))
    mean = total / count
    std = np.sqrt(np.maximum(total_sq / count - mean ** 2, 1e-12))
    extras = {"frames": str(spec.frames), "height": str(spec.height),
              "width": str(spec.width)}
    manifest = Manifest(root=out, rows=rows, mean=mean, std=std, extras=extras)
    save_manifest(out / "manifest.csv", manifest)
    save_manifest(out / "manifest_scores.csv",
                  Manifest(root=out, rows=score_rows, mean=mean, std=std,
                           extras=extras))
    return manifest


def save_manifest(path, manifest: Manifest) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for row in manifest.rows:
        writer.writerow([row.path, row.label_kind, row.payload])
    header = [f"# mean = {' '.join(repr(float(v)) for v in manifest.mean)}",
              f"# std = {' '.join(repr(float(v)) for v in manifest.std)}"]
    header += [f"# {key} = {value}" for key, value in manifest.extras.items()]
    Path(path).write_text("\n".join(header) + "\n" + buffer.getvalue())


def load_manifest(path, check_paths: bool = True) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    mean = np.zeros(3)
    std = np.ones(3)
    extras: Dict[str, str] = {}
    body: List[str] = []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            key, _, raw = line.lstrip("# ").partition("=")
            key, raw = key.strip(), raw.strip()
            if key == "mean":
                mean = np.array([float(v) for v in raw.split()])
            elif key == "std":
                std = np.array([float(v) for v in raw.split()])
            elif key:
                extras[key] = raw
        elif line.strip():
            body.append(line)
    reader = csv.reader(body)
    header = tuple(next(reader, ()))
    if header != MANIFEST_HEADER:
        raise ValueError(
            f"{path}: expected header {','.join(MANIFEST_HEADER)!r}, "
            f"got {','.join(header)!r}")
    rows = []
    for fields in reader:
        if len(fields) != 3:
            raise ValueError(f"{path}: malformed row {fields!r}")
        row = ManifestRow(*fields)
        if row.label_kind not in LABEL_KINDS:
            raise ValueError(
                f"{path}: unknown label kind {row.label_kind!r} for "
                f"{row.path!r}")
        if row.label_kind == "class":
            row.class_index()
        elif row.label_kind == "scores":
            row.scores()
        if check_paths and not (path.parent / row.path).exists():
            raise ValueError(f"{path}: clip path does not exist: {row.path!r}")
        rows.append(row)
    return Manifest(root=path.parent, rows=rows, mean=mean, std=std,
                    extras=extras)


class ClipDataset:
    """Frame-folder dataset access with caching and manifest-order iteration."""

    def __init__(self, manifest_path, clip_len: Optional[int] = None,
                 stride: int = 1):
        self.manifest = load_manifest(manifest_path)
        if stride < 1:
            raise ValueError("stride must be positive")
        self.stride = stride
        if clip_len is None:
            clip_len = int(self.manifest.extras.get("frames", 0))
            if clip_len < 1:
                raise ValueError("clip_len not given and not recorded in the "
                                 "manifest")
        self.clip_len = clip_len
        self._cache: Dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.manifest)

    @property
    def rows(self) -> Sequence[ManifestRow]:
        return self.manifest.rows

    def frames(self, i: int) -> np.ndarray:
        """All stored frames of clip i as (F, H, W, 3) uint8, cached."""
        if i not in self._cache:
            clip_dir = self.manifest.root / self.rows[i].path
            files = sorted(clip_dir.glob("f*.ppm"))
            if not files:
                raise ValueError(f"no frames under {clip_dir}")
            self._cache[i] = np.stack([read_ppm(f) for f in files])
        return self._cache[i]

    def label(self, i: int):
        row = self.rows[i]
        if row.label_kind == "class":
            return row.class_index()
        if row.label_kind == "scores":
            return row.scores()
        return None

    @property
    def num_classes(self) -> int:
        classes = [row.class_index() for row in self.rows
                   if row.label_kind == "class"]
        if not classes:
            raise ValueError("manifest has no class labels")
        return max(classes) + 1

    def clip(self, i: int, start: int) -> np.ndarray:
        """A (clip_len, H, W, 3) float32 window in [0, 1] from clip i."""
        window = sample_clip(self.frames(i), self.clip_len, self.stride, start)
        return window.astype(np.float32) / 255.0

    def train_clip(self, i: int, rng: np.random.Generator) -> np.ndarray:
        start = random_clip_start(self.frames(i).shape[0], self.clip_len,
                                  self.stride, rng)
        return self.clip(i, start)

    def standardize(self, clip: np.ndarray) -> np.ndarray:
        """Map [0, 1] pixels to standardized values with the manifest stats."""
        mean = self.manifest.mean.astype(clip.dtype)
        std = self.manifest.std.astype(clip.dtype)
        return (clip - mean) / std

    def unstandardize(self, clip: np.ndarray) -> np.ndarray:
        mean = self.manifest.mean.astype(clip.dtype)
        std = self.manifest.std.astype(clip.dtype)
        return clip * std + mean
