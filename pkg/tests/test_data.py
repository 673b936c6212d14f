import json

import numpy as np
import pytest
from PIL import Image

from lscnn.data import (AugmentConfig, NormalizationStats, Sample, add_noise, augment, augment_one,
                        blur2x2, blur_weights, load_folder, load_manifest, n_augmented, normalize,
                        read_image, stack)
from lscnn.errors import ConfigError, DataError
from lscnn.synth import _cell_mask, synth_generate, write_dataset
from lscnn.tensor import make_rng


def rand_image(seed, shape=(3, 12, 12)):
    return np.random.default_rng(seed).uniform(0, 255, shape).astype(np.float32)


def test_sample_validation():
    with pytest.raises(DataError):
        Sample(np.zeros((3, 4, 4)), "fake", "v")
    with pytest.raises(DataError):
        Sample(np.zeros((3, 4, 4)), "real", "v", split="dev")
    assert Sample(np.zeros((3, 4, 4)), "attack", "v").target == 1


def test_normalize_example():
    stats = NormalizationStats((100.0, 100.0, 100.0))
    out = normalize(np.full((3, 2, 2), 128, np.float32), stats)
    assert np.all(out == 0.21875)


def test_stats_from_training_only():
    img = lambda v: np.full((3, 2, 2), v, np.float32)
    samples = [Sample(img(10), "real", "a"), Sample(img(30), "attack", "b"),
               Sample(img(250), "real", "c", split="validation"), Sample(img(0), "real", "d", split="test")]
    assert NormalizationStats.from_training(samples).mean == (20.0, 20.0, 20.0)
    with pytest.raises(DataError):
        NormalizationStats.from_training(samples[2:])


@pytest.mark.parametrize("seed", range(5))
def test_augment_19_in_range(seed):
    s = Sample(rand_image(seed), "real", "v")
    out = augment(s, rng=make_rng(seed))
    assert len(out) == 19 == n_augmented()
    for o in out:
        assert o.image.shape == s.image.shape and o.image.dtype == np.float32
        assert o.image.min() >= 0 and o.image.max() <= 255
        assert o.label == "real" and o.video_id == "v"
    assert np.array_equal(out[0].image, s.image)


def test_augment_include_shifted():
    cfg = AugmentConfig(include_shifted=True)
    out = augment(Sample(rand_image(0), "real", "v"), cfg, make_rng(0))
    assert len(out) == 21 == n_augmented(cfg)


def test_augment_clamps():
    img = np.full((3, 4, 4), 230, np.float32)
    out = augment(Sample(img, "real", "v"), rng=make_rng(0))
    assert np.all(out[7].image == 255)  # +50 version, first blur
    assert np.all(out[13].image == 180)  # -50 version, first blur


@pytest.mark.parametrize("sigma", [0.1, 0.5, 1.0])
def test_constant_blur_identity(sigma):
    img = np.full((3, 8, 8), 117.0, np.float32)
    assert np.array_equal(blur2x2(img, sigma), img)


def test_blur_against_direct_kernel():
    img = rand_image(3, (1, 6, 7))
    w = blur_weights(0.5)
    k = np.outer(w, w)
    p = np.pad(img[0].astype(np.float64), ((0, 1), (0, 1)), mode="edge")
    ref = sum(k[a, b] * p[a:a + 6, b:b + 7] for a in range(2) for b in range(2))
    np.testing.assert_allclose(blur2x2(img, 0.5)[0], ref, atol=1e-4)
    with pytest.raises(DataError):
        blur_weights(0)


def test_noise_scale():
    img = np.full((3, 64, 64), 128, np.float32)
    out = add_noise(img, 0.001, make_rng(0))
    assert abs(np.std(out - img) - 0.255) < 0.02


def test_augment_one_matches_augment():
    img = rand_image(7)
    cfg = AugmentConfig(include_shifted=True)
    full = augment(Sample(img, "real", "v"), cfg, make_rng(1))
    for i, s in enumerate(full):
        noisy = i >= 3 and (i - 3) % 6 >= 3
        if not noisy:
            np.testing.assert_array_equal(augment_one(img, i, cfg, make_rng(1)), s.image)
    with pytest.raises(IndexError):
        augment_one(img, 21, cfg, make_rng(0))


def write_png(path, arr):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.astype(np.uint8)).save(path)


def test_load_folder(tmp_path):
    for split in ("train", "test"):
        for label in ("real", "attack"):
            for f in range(2):
                write_png(tmp_path / split / label / f"v_{label}" / f"{f}.png",
                          np.full((40, 50, 3), 10 * f + 1))
    (tmp_path / "train/real/v_real/bad.png").write_text("not an image")
    manifest = {"entries": [
        {"glob": f"{s}/{lab}/*/*.png", "label": lab, "split": s, "video_id": "{parent}"}
        for s in ("train", "test") for lab in ("real", "attack")]}
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    res = load_folder(tmp_path, size=32)
    assert len(res.samples) == 8 and len(res.errors) == 1
    assert all(s.image.shape == (3, 32, 32) for s in res.samples)
    vids = {(s.split, s.video_id) for s in res.samples}
    assert ("train", "v_real") in vids
    assert sorted(s.frame_index for s in res.samples if s.video_id == "v_attack" and s.split == "test") == [0, 1]
    gray = load_folder(tmp_path, size=8, channels=1)
    assert gray.samples[0].image.shape == (1, 8, 8)


def test_load_folder_empty_split(tmp_path):
    write_png(tmp_path / "a" / "x.png", np.zeros((4, 4, 3)))
    m = tmp_path / "m.json"
    m.write_text(json.dumps({"entries": [
        {"glob": "a/*.png", "label": "real", "split": "train", "video_id": "v"},
        {"glob": "b/*.png", "label": "real", "split": "test", "video_id": "w"}]}))
    with pytest.raises(DataError, match="test"):
        load_folder(tmp_path, m)


@pytest.mark.parametrize("doc", ["{", "[]", '{"entries": []}', '{"entries": [{"glob": "x"}]}',
                                 '{"entries": [{"glob": "x", "label": "fake", "split": "train", "video_id": "v"}]}'])
def test_bad_manifest(tmp_path, doc):
    p = tmp_path / "m.json"
    p.write_text(doc)
    with pytest.raises(ConfigError):
        load_manifest(p)
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "missing.json")


def test_read_image_resize(tmp_path):
    write_png(tmp_path / "x.png", np.full((10, 20, 3), 200))
    im = read_image(tmp_path / "x.png", 96)
    assert im.shape == (3, 96, 96) and np.allclose(im, 200)


# synthetic data

def test_synth_counts_and_pairing():
    s = synth_generate(10, 3, seed=4)
    assert len(s) == 30
    vids = {v.video_id for v in s}
    assert len(vids) == 10
    for v in s:
        other = v.video_id.replace(v.label, "attack" if v.label == "real" else "real")
        assert other in vids
    by_id = {}
    for v in s:
        by_id.setdefault(v.video_id[:5], set()).add(v.split)
    assert all(len(x) == 1 for x in by_id.values())  # identity never straddles splits
    assert {v.split for v in s} == {"train", "validation", "test"}
    assert all(v.image.shape == (3, 96, 96) and v.image.min() >= 0 and v.image.max() <= 255 for v in s)


def test_synth_deterministic():
    a, b = synth_generate(4, 2, seed=9), synth_generate(4, 2, seed=9)
    assert all(np.array_equal(x.image, y.image) and x.video_id == y.video_id for x, y in zip(a, b))
    c = synth_generate(4, 2, seed=10)
    assert not np.array_equal(a[0].image, c[0].image)


def test_synth_subtle_cues():
    s = synth_generate(12, 2, seed=0)
    diffs = []
    for real, attack in zip(s[0::4], s[2::4]):
        assert real.label == "real" and attack.label == "attack"
        assert real.frame_index == attack.frame_index
        diffs.append(np.mean(np.abs(real.image - attack.image)))
    assert 0 < np.mean(diffs) < 0.25 * 255


def test_synth_center_cue_localized():
    s = synth_generate(6, 1, "center", seed=1)
    real, attack = s[0].image, s[1].image
    d = np.abs(real - attack).mean(axis=0)
    inside = _cell_mask((5,))
    # outside the center cell only the per-frame sensor noise differs
    assert d[inside].mean() > 2 * d[~inside].mean()


def test_synth_errors():
    with pytest.raises(ConfigError):
        synth_generate(3, 1)
    with pytest.raises(ConfigError):
        synth_generate(4, 0)
    with pytest.raises(ConfigError):
        synth_generate(4, 1, "nope")


def test_write_and_reload(tmp_path):
    s = synth_generate(6, 2, seed=2)
    write_dataset(s, tmp_path / "d")
    res = load_folder(tmp_path / "d")
    assert not res.errors and len(res.samples) == len(s)
    key = lambda v: (v.split, v.video_id, v.frame_index)
    got = {key(v): v for v in res.samples}
    for v in s:
        assert np.array_equal(got[key(v)].image, v.image)
        assert got[key(v)].label == v.label
    with pytest.raises(ConfigError):
        write_dataset(s, tmp_path / "d")
    write_dataset(s[:2], tmp_path / "d", force=True)
    assert len(load_folder(tmp_path / "d").samples) == 2


def test_stack():
    x, y, v = stack([Sample(np.zeros((3, 2, 2)), "real", "a"), Sample(np.ones((3, 2, 2)), "attack", "b")])
    assert x.dtype == np.float32 and list(y) == [0, 1] and v == ["a", "b"]
    with pytest.raises(DataError):
        stack([])
