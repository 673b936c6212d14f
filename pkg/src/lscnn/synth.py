"""Deterministic synthetic faces with region-localized spoofing cues.

Each identity gets a cartoon face on a 96x96 canvas laid out so the 3x3
grid lands on recognisable zones: hair/forehead corners on the top row,
eyes on the middle-left/right cells, nose in the center, mouth and jaw on
the bottom row. Identities jitter skin tone, lighting, feature positions
and a fixed skin texture; frames add a 1-pixel shift, gain flicker and
sensor noise.

An attack video re-renders its paired real video frame for frame, then
applies cues in chosen grid cells:

``moire``
    a high-frequency sinusoidal overlay (screen replay),
``contrast``
    local contrast pulled towards the cell mean (print),
``flat``
    directional shading removed (a flat medium has no 3D relief).
"""
from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .data import Sample
from .errors import ConfigError
from .tensor import make_rng

SIZE = 96


@dataclass(frozen=True)
class CueProfile:
    moire: tuple = (2, 5, 8)
    contrast: tuple = (4, 6)
    flat: tuple = (1, 3, 7, 9)
    strength: float = 1.0


CUE_PROFILES = {
    "default": CueProfile(),
    "center": CueProfile(moire=(5,), contrast=(5,), flat=()),
}


def cue_profile(name_or_profile):
    if isinstance(name_or_profile, CueProfile):
        return name_or_profile
    if name_or_profile not in CUE_PROFILES:
        raise ConfigError(f"unknown cue profile {name_or_profile!r}; known: {sorted(CUE_PROFILES)}")
    return CUE_PROFILES[name_or_profile]


def _cell_mask(cells, size=SIZE):
    mask = np.zeros((size, size), dtype=bool)
    p = size // 3
    for k in cells:
        r, c = divmod(k - 1, 3)
        mask[p * r:p * (r + 1), p * c:p * (c + 1)] = True
    return mask


def _smooth_field(rng, size, coarse=8):
    small = rng.standard_normal((coarse, coarse)).astype(np.float32)
    im = Image.fromarray(small).resize((size, size), Image.BILINEAR)
    return np.asarray(im, dtype=np.float64)


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2


@dataclass(frozen=True)
class _Identity:
    skin: np.ndarray
    background: np.ndarray
    center: tuple
    radii: tuple
    light: float
    eye_dy: float
    eye_dx: float
    mouth_w: float
    texture: np.ndarray


def _identity(seed, ident):
    rng = make_rng(seed, "identity", ident)
    r = rng.uniform(150, 215)
    skin = np.array([r, r * rng.uniform(0.72, 0.85), r * rng.uniform(0.58, 0.72)])
    return _Identity(
        skin=skin,
        background=rng.uniform(30, 200, size=3),
        center=(49 + rng.uniform(-2, 2), 48 + rng.uniform(-2, 2)),
        radii=(44 + rng.uniform(-3, 3), 36 + rng.uniform(-3, 3)),
        light=rng.uniform(-1, 1),
        eye_dy=rng.uniform(-2, 2),
        eye_dx=rng.uniform(-2, 2),
        mouth_w=rng.uniform(9, 13),
        texture=_smooth_field(rng, SIZE, 12) * 5 + rng.standard_normal((SIZE, SIZE)) * 2,
    )


def _render(idt: _Identity, flat_mask=None, flat_amount=0.0):
    """Noise-free face, 3 x H x W float64."""
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    cy, cx = idt.center
    ry, rx = idt.radii
    img = np.broadcast_to(idt.background[:, None, None], (3, SIZE, SIZE)).copy()
    img += (yy / SIZE - 0.5) * 30  # background gradient

    face = _ellipse(yy, xx, cy, cx, ry, rx) <= 1
    # directional light across the face plus darkening towards the rim
    shade = 1 + 0.28 * idt.light * (xx - cx) / rx - 0.22 * np.clip(_ellipse(yy, xx, cy, cx, ry, rx), 0, 1)
    if flat_mask is not None:
        shade = np.where(flat_mask, shade + (1 - shade) * flat_amount, shade)
    skin = idt.skin[:, None, None] * shade + idt.texture
    img = np.where(face, skin, img)

    hair = face & (yy < cy - ry * 0.62 + 4 * np.sin(xx / 7))
    img = np.where(hair, idt.background[::-1, None, None] * 0.35 + 20, img)

    for side in (-1, 1):
        ey, ex = 42 + idt.eye_dy, cx + side * (19 + idt.eye_dx)
        white = _ellipse(yy, xx, ey, ex, 4.5, 8) <= 1
        img = np.where(white, 235.0, img)
        iris = _ellipse(yy, xx, ey, ex, 3.5, 3.5) <= 1
        img = np.where(iris, np.array([70.0, 50, 35])[:, None, None], img)
        brow = (np.abs(yy - (ey - 8) + 0.02 * (xx - ex) ** 2) < 1.5) & (np.abs(xx - ex) < 9)
        img = np.where(brow, idt.skin[:, None, None] * 0.35, img)

    nose = np.exp(-((xx - cx - 2 * idt.light) ** 2) / 8) * np.clip((yy - 36) / 24, 0, 1) * (yy < 62)
    img = img - 40 * nose * (0.6 + 0.4 * idt.light)
    nostril = (_ellipse(yy, xx, 60, cx - 4, 1.8, 2.5) <= 1) | (_ellipse(yy, xx, 60, cx + 4, 1.8, 2.5) <= 1)
    img = np.where(nostril, idt.skin[:, None, None] * 0.4, img)

    lips = _ellipse(yy, xx, 76, cx, 4, idt.mouth_w) <= 1
    img = np.where(lips, np.array([170.0, 60, 70])[:, None, None] * shade, img)
    gap = lips & (np.abs(yy - 76) < 0.8)
    return np.where(gap, 60.0, img)


def _shift(img, dy, dx):
    """Translate by whole pixels, replicating the edge that moves in."""
    padded = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    return padded[:, 1 - dy:1 - dy + SIZE, 1 - dx:1 - dx + SIZE]


def _apply_cues(img, prof: CueProfile, rng):
    """Attack-side cues; per-video magnitudes drawn from ``rng``."""
    s = prof.strength
    out = img.copy()
    if prof.moire:
        mask = _cell_mask(prof.moire)
        yy, xx = np.mgrid[0:SIZE, 0:SIZE]
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.28, 0.42)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(5, 9) * s
        wave = amp * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        out = out + np.where(mask, wave, 0.0)
    if prof.contrast:
        c = min(rng.uniform(0.3, 0.5) * s, 1.0)
        p = SIZE // 3
        for k in prof.contrast:
            r, col = divmod(k - 1, 3)
            cell = out[:, p * r:p * (r + 1), p * col:p * (col + 1)]
            m = cell.mean(axis=(1, 2), keepdims=True)
            out[:, p * r:p * (r + 1), p * col:p * (col + 1)] = m + (cell - m) * (1 - c)
    return out


def synth_generate(n_videos, frames_per_video, cue_profile_name="default", seed=0,
                   split_fractions=(0.6, 0.2, 0.2)):
    """Paired real/attack videos; splits are assigned per identity.

    ``n_videos`` counts both classes, so there are ``n_videos // 2``
    identities. Returns samples ordered by identity, class, frame.
    """
    if not isinstance(n_videos, (int, np.integer)) or n_videos < 2 or n_videos % 2:
        raise ConfigError(f"n_videos must be an even integer >= 2, got {n_videos!r}")
    if not isinstance(frames_per_video, (int, np.integer)) or frames_per_video < 1:
        raise ConfigError(f"frames_per_video must be >= 1, got {frames_per_video!r}")
    prof = cue_profile(cue_profile_name)
    n_ids = n_videos // 2
    splits = identity_splits(n_ids, seed, split_fractions)
    flat_mask = _cell_mask(prof.flat) if prof.flat else None
    samples = []
    for ident in range(n_ids):
        idt = _identity(seed, ident)
        real_base = _render(idt)
        cue_rng = make_rng(seed, "cues", ident)
        flat_amount = cue_rng.uniform(0.6, 1.0) * min(prof.strength, 1.0)
        attack_base = _render(idt, flat_mask, flat_amount) if flat_mask is not None else real_base
        attack_base = _apply_cues(attack_base, prof, cue_rng)
        for label, base in (("real", real_base), ("attack", attack_base)):
            vid = f"id{ident:03d}_{label}"
            for f in range(frames_per_video):
                frng = make_rng(seed, "frame", ident, f)
                dy, dx = frng.integers(-1, 2, size=2)
                gain = frng.uniform(0.96, 1.04)
                noise = frng.normal(0, 3.0, base.shape)
                img = _shift(base, int(dy), int(dx)) * gain + noise
                img = np.clip(np.rint(img), 0, 255).astype(np.float32)
                samples.append(Sample(img, label, vid, f, splits[ident]))
    return samples


def identity_splits(n_ids, seed, fractions=(0.6, 0.2, 0.2)):
    """Split name per identity; each split gets >= 1 identity when there are >= 3."""
    if n_ids == 1:
        return ["train"]
    if n_ids == 2:
        return ["train", "validation"]
    n_val = max(1, round(fractions[1] * n_ids))
    n_test = max(1, round(fractions[2] * n_ids))
    n_train = n_ids - n_val - n_test
    if n_train < 1:
        n_train, n_val, n_test = 1, max(1, n_val - 1), n_test
        n_test = n_ids - n_train - n_val
    names = ["train"] * n_train + ["validation"] * n_val + ["test"] * n_test
    order = make_rng(seed, "splits").permutation(n_ids)
    out = [None] * n_ids
    for name, ident in zip(names, order):
        out[int(ident)] = name
    return out


def write_dataset(samples, root, force=False):
    """PNG tree ``<split>/<label>/<video_id>/<frame>.png`` plus ``manifest.json``."""
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        if not force:
            raise ConfigError(f"output directory {root} is not empty (use --force to overwrite)")
        shutil.rmtree(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        d = root / s.split / s.label / s.video_id
        d.mkdir(parents=True, exist_ok=True)
        arr = np.clip(np.rint(s.image), 0, 255).astype(np.uint8)
        im = Image.fromarray(arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0))
        im.save(d / f"{s.frame_index:04d}.png")
        key = (s.split, s.label)
        if key not in entries:
            entries.append(key)
    manifest = {"entries": [
        {"glob": f"{split}/{label}/*/*.png", "label": label, "split": split, "video_id": "{parent}"}
        for split, label in entries
    ]}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return root
