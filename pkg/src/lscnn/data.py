"""Samples, the folder loader, normalization and the 19-way augmentation.

Images are float32 C x H x W arrays holding raw pixel values in [0, 255].

Folder manifest (JSON)::

    {"entries": [
        {"glob": "train/real/*/*.png", "label": "real", "split": "train",
         "video_id": "{parent}"},
        ...
    ]}

``video_id`` may be a literal or contain ``{parent}``, which is replaced by
the name of the directory holding each file. Frames of a video are indexed
in path order.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

LABELS = ("real", "attack")
SPLITS = ("train", "validation", "test")
DIVISOR = 128.0


@dataclass
class Sample:
    image: np.ndarray
    label: str
    video_id: str
    frame_index: int = 0
    split: str = "train"

    def __post_init__(self):
        if self.label not in LABELS:
            raise DataError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.split not in SPLITS:
            raise DataError(f"split must be one of {SPLITS}, got {self.split!r}")

    @property
    def target(self) -> int:
        return LABELS.index(self.label)


def by_split(samples, split):
    return [s for s in samples if s.split == split]


def stack(samples):
    """``(images N x C x H x W float32, targets int64, video ids)``."""
    if not samples:
        raise DataError("no samples to stack")
    x = np.stack([s.image for s in samples]).astype(np.float32, copy=False)
    y = np.array([s.target for s in samples], dtype=np.int64)
    return x, y, [s.video_id for s in samples]


# loading

@dataclass
class LoadResult:
    samples: list
    errors: list = field(default_factory=list)  # (path, message)
    failed: set = field(default_factory=set)  # (split, video id) of unreadable files

    def skipped_videos(self, split):
        """Videos of ``split`` whose every frame failed to load."""
        have = {s.video_id for s in self.samples if s.split == split}
        return sorted(v for sp, v in self.failed if sp == split and v not in have)


def read_image(path, size=None, channels=3):
    mode = "RGB" if channels == 3 else "L"
    with Image.open(path) as im:
        im = im.convert(mode)
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return np.ascontiguousarray(arr)


def load_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"manifest {path} is not valid JSON: {e}") from None
    entries = doc.get("entries") if isinstance(doc, dict) else None
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"manifest {path} needs a non-empty 'entries' list")
    for i, e in enumerate(entries):
        missing = {"glob", "label", "split", "video_id"} - set(e)
        if missing:
            raise ConfigError(f"manifest entry {i} lacks {sorted(missing)}")
        if e["label"] not in LABELS or e["split"] not in SPLITS:
            raise ConfigError(f"manifest entry {i}: bad label {e['label']!r} or split {e['split']!r}")
    return entries


def load_folder(root, manifest=None, size=96, channels=3) -> LoadResult:
    """Decode every image matched by the manifest under ``root``.

    Unreadable files are collected in ``errors`` and skipped. A split named
    by the manifest that ends up empty is fatal.
    """
    root = Path(root)
    entries = load_manifest(manifest if manifest is not None else root / "manifest.json")
    frames = {}
    seen = set()
    result = LoadResult([])
    for e in entries:
        for path in sorted(root.glob(e["glob"])):
            if not path.is_file() or path in seen:
                continue
            seen.add(path)
            vid = e["video_id"].replace("{parent}", path.parent.name)
            try:
                img = read_image(path, size, channels)
            except (OSError, UnidentifiedImageError, ValueError) as err:
                result.errors.append((str(path), str(err)))
                result.failed.add((e["split"], vid))
                log.warning("skipping %s: %s", path, err)
                continue
            key = (e["split"], vid)
            idx = frames.get(key, 0)
            frames[key] = idx + 1
            result.samples.append(Sample(img, e["label"], vid, idx, e["split"]))
    for split in sorted({e["split"] for e in entries}):
        if not by_split(result.samples, split):
            raise DataError(f"split {split!r} has no readable images under {root}")
    return result


# normalization

@dataclass(frozen=True)
class NormalizationStats:
    mean: tuple
    divisor: float = DIVISOR

    @classmethod
    def from_training(cls, samples):
        train = by_split(samples, "train")
        if not train:
            raise DataError("normalization needs a non-empty training split")
        acc = np.zeros(train[0].image.shape[0], dtype=np.float64)
        n = 0
        for s in train:
            acc += s.image.sum(axis=(1, 2), dtype=np.float64)
            n += s.image.shape[1] * s.image.shape[2]
        return cls(tuple(float(v) for v in acc / n))


def normalize(image, stats: NormalizationStats):
    mean = np.asarray(stats.mean, dtype=np.float32).reshape(-1, 1, 1)
    return (image - mean) / np.float32(stats.divisor)


# augmentation

@dataclass(frozen=True)
class AugmentConfig:
    channel_shift: float = 50.0
    blur_sigmas: tuple = (0.1, 0.5, 1.0)
    noise_sigmas: tuple = (0.0005, 0.00075, 0.001)
    include_shifted: bool = False  # True: also emit the bare +/-shift images (21 outputs)


def blur_weights(sigma):
    """Per-axis taps of the 2x2 Gaussian: samples at offsets 0 and 1, normalized."""
    if sigma <= 0:
        raise DataError(f"blur sigma must be positive, got {sigma}")
    b = np.exp(-1.0 / (2.0 * sigma * sigma))
    return np.array([1.0, b]) / (1.0 + b)


def blur2x2(image, sigma):
    """Separable 2x2 Gaussian, replicating the bottom/right edge."""
    w1 = blur_weights(sigma)[1]
    x = image.astype(np.float64)
    for axis in (-2, -1):
        nxt = np.concatenate([np.delete(x, 0, axis=axis), np.take(x, [-1], axis=axis)], axis=axis)
        x = x + w1 * (nxt - x)  # a constant image is left exactly unchanged
    return x.astype(np.float32)


def add_noise(image, sigma, rng):
    """Additive Gaussian noise on the [0, 1] intensity scale, clamped."""
    x = image.astype(np.float64) / 255.0 + rng.normal(0.0, sigma, image.shape)
    return (np.clip(x, 0.0, 1.0) * 255.0).astype(np.float32)


def shift_channels(image, delta):
    return np.clip(image.astype(np.float32) + np.float32(delta), 0, 255)


def augment(sample: Sample, cfg: AugmentConfig | None = None, rng=None):
    """The original plus blur and noise variants of three brightness versions.

    Brightness versions are the image itself and all channels shifted by
    +/- ``channel_shift``; each yields one blurred image per blur sigma and
    one noisy image per noise sigma: 1 + 3 x 6 = 19 samples.
    """
    cfg = cfg or AugmentConfig()
    if rng is None:
        raise DataError("augment needs an rng for the noise transforms")
    img = sample.image
    versions = [img, shift_channels(img, cfg.channel_shift), shift_channels(img, -cfg.channel_shift)]
    out = [img]
    if cfg.include_shifted:
        out += versions[1:]
    for v in versions:
        out += [blur2x2(v, s) for s in cfg.blur_sigmas]
        out += [add_noise(v, s, rng) for s in cfg.noise_sigmas]
    return [replace(sample, image=o) for o in out]


def n_augmented(cfg: AugmentConfig | None = None) -> int:
    cfg = cfg or AugmentConfig()
    per = len(cfg.blur_sigmas) + len(cfg.noise_sigmas)
    return 1 + 3 * per + (2 if cfg.include_shifted else 0)


def augment_one(image, index, cfg: AugmentConfig, rng):
    """Variant ``index`` (0 = original) of :func:`augment`, without building the rest."""
    if index == 0:
        return image
    k = index - 1
    if cfg.include_shifted:
        if k < 2:
            return shift_channels(image, cfg.channel_shift if k == 0 else -cfg.channel_shift)
        k -= 2
    per = len(cfg.blur_sigmas) + len(cfg.noise_sigmas)
    version, t = divmod(k, per)
    if version >= 3:
        raise IndexError(f"augmentation index {index} out of range")
    v = image if version == 0 else shift_channels(image, cfg.channel_shift * (1 if version == 1 else -1))
    if t < len(cfg.blur_sigmas):
        return blur2x2(v, cfg.blur_sigmas[t])
    return add_noise(v, cfg.noise_sigmas[t - len(cfg.blur_sigmas)], rng)
