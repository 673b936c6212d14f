import math

import numpy as np
import pytest

from lscnn import arch
from lscnn import training as T
from lscnn.compose import PatchGrid
from lscnn.data import Sample
from lscnn.errors import ConfigError, DataError, NumericError
from lscnn.synth import synth_generate
from lscnn.tensor import make_rng


@pytest.fixture(scope="module")
def tiny():
    samples = synth_generate(8, 3, seed=5)
    cfg = T.TrainConfig(batch_size=8, patchnet_iters=4, finetune_iters=6, eval_every=2, seed=3)
    return samples, cfg, T.prepare(samples, cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        T.TrainConfig(patchnet_iters=0)
    with pytest.raises(ConfigError):
        T.TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        T.TrainConfig(architecture="vgg")
    with pytest.raises(ConfigError, match="bogus"):
        T.TrainConfig.from_dict({"bogus": 1})
    assert T.TrainConfig.from_dict({"lr": 0.01}).lr == 0.01
    c = T.TrainConfig()
    assert (c.batch_size, c.lr, c.beta1, c.beta2) == (64, 1e-4, 0.9, 0.999)


def test_batch_stream_epochs():
    s = T.BatchStream(10, 4, 0, "k")
    idx = np.concatenate([s.next() for _ in range(5)])
    assert sorted(idx[:10]) == list(range(10)) and sorted(idx[10:20]) == list(range(10))
    s2 = T.BatchStream(10, 4, 0, "k")
    assert np.array_equal(idx, np.concatenate([s2.next() for _ in range(5)]))


def test_patch_batch_matches_full_image_augmentation(tiny):
    """Augmenting only the cell (plus margin) equals augmenting the face then cropping."""
    _, _, data = tiny
    grid = PatchGrid(96)
    views = data.n_views
    blur_views = [1, 2, 3, 7, 8, 9, 13, 14, 15]
    idx = np.array([i * views + v for i in range(3) for v in blur_views])
    for k in (1, 5, 9):
        patch, _ = T.make_batch(data, idx, make_rng(0), k, grid)
        full, _ = T.make_batch(data, idx, make_rng(0))
        r0, r1, c0, c1 = grid.bounds(k)
        np.testing.assert_allclose(patch, full[:, :, r0:r1, c0:c1], atol=1e-5)


def test_finetune_history_and_best(tiny):
    samples, cfg, data = tiny
    spec = cfg.specs()[0]
    res = T.train_baseline(spec, data, cfg)
    assert len(res.history) == cfg.finetune_iters
    assert [h.iteration for h in res.history] == list(range(1, 7))
    evals = [h for h in res.history if h.val_eer is not None]
    assert [h.iteration for h in evals] == [2, 4, 6]
    assert 1 <= res.best.iteration <= cfg.finetune_iters
    best = min(evals, key=lambda h: (h.val_eer, h.iteration))
    assert res.best.iteration == best.iteration
    assert res.best.digest == spec.digest()
    arch.check_params(spec, res.best.params)


def test_initial_loss_near_ln2(tiny):
    _, cfg, data = tiny
    spec = cfg.specs()[0]
    for seed in range(3):
        params = arch.init_params(spec, arch.INIT_STD, make_rng(seed))
        real = np.flatnonzero(data.y == 0)[:4]
        attack = np.flatnonzero(data.y == 1)[:4]
        x, y = T.make_batch(data, np.concatenate([real, attack]) * data.n_views, make_rng(seed))
        loss, *_ = arch.loss_and_grads(spec, params, x, y, make_rng(seed))
        assert abs(loss - math.log(2)) <= 0.05
    res = T.train_baseline(spec, data, T.TrainConfig(batch_size=8, finetune_iters=1, seed=1))
    assert abs(res.history[0].train_loss - math.log(2)) <= 0.05


def test_reproducible_bitwise(tiny):
    _, cfg, data = tiny
    spec = cfg.specs()[0]
    a = T.train_baseline(spec, data, cfg)
    b = T.train_baseline(spec, data, cfg)
    assert [(h.train_loss, h.val_eer) for h in a.history] == [(h.train_loss, h.val_eer) for h in b.history]
    for k in a.final_params:
        assert np.array_equal(a.final_params[k], b.final_params[k])


def test_shared_data_order(tiny, monkeypatch):
    _, cfg, data = tiny
    seen = []
    orig = T.make_batch

    def spy(d, idx, rng, patch=None, grid=None):
        seen.append(idx.copy())
        return orig(d, idx, rng, patch, grid)

    monkeypatch.setattr(T, "make_batch", spy)
    spec = cfg.specs()[0]
    cfg1 = T.TrainConfig(batch_size=8, finetune_iters=3, eval_every=10, seed=3)
    T.train_baseline(spec, data, cfg1)
    base = list(seen)
    seen.clear()
    composed = arch.init_params(spec, 0.01, make_rng(99))
    T.finetune(composed, data, cfg1)
    assert len(base) == 3 and all(np.array_equal(a, b) for a, b in zip(base, seen))


def test_train_patchnets_shapes_and_order_independence(tiny):
    _, cfg, data = tiny
    grid = PatchGrid(96)
    res = T.train_patchnets(data, grid, cfg)
    assert len(res) == 9
    _, pspec = cfg.specs()
    for r in res:
        arch.check_params(pspec, r.best.params)
        assert len(r.history) == cfg.patchnet_iters and r.best.digest == pspec.digest()
    # a PatchNet trained alone equals the same PatchNet trained inside the full loop
    alone = T._train_one_patchnet((7, data, cfg, grid))
    for k in alone.final_params:
        assert np.array_equal(alone.final_params[k], res[6].final_params[k])
    composed = T.compose_patchnets([r.final_params for r in res], cfg)
    arch.check_params(cfg.specs()[0], composed)


def test_train_patchnets_grid_mismatch(tiny):
    _, cfg, data = tiny
    with pytest.raises(ConfigError):
        T.train_patchnets(data, PatchGrid(64), cfg)


def test_nan_aborts(tiny):
    _, cfg, data = tiny
    spec = cfg.specs()[0]
    params = arch.init_params(spec, arch.INIT_STD, make_rng(0))
    params["Conv1.weight"][...] = np.nan
    with pytest.raises(NumericError, match="iteration 1"):
        T.fit(spec, params, data, cfg, 2, ("whole",))


def test_missing_validation():
    samples = [s for s in synth_generate(8, 2, seed=1) if s.split != "validation"]
    no_val = [Sample(s.image, s.label, s.video_id, s.frame_index, "train") for s in samples]
    with pytest.raises(DataError):
        T.prepare(no_val, T.TrainConfig(val_fallback=None))
    data = T.prepare(no_val, T.TrainConfig(val_fallback=0.25, seed=0))
    assert data.val_x.shape[0] == 4 and data.x.shape[0] == 8  # 2 of 6 videos held out
    assert len(set(data.val_videos)) == 2
    with pytest.raises(DataError):
        T.prepare([Sample(np.zeros((3, 96, 96)), "real", "v", 0, "test")], T.TrainConfig())


def test_write_history(tmp_path):
    rows = [T.HistoryRow(1, 0.5), T.HistoryRow(2, 0.25, 0.1, 0.9)]
    T.write_history(rows, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines == ["iteration,train_loss,val_eer", "1,0.5,", "2,0.25,0.1"]


@pytest.mark.slow
def test_center_cue_patchnets():
    """With a cue only in the center cell, PatchNet 5 learns it and a corner net cannot."""
    samples = synth_generate(20, 10, "center", seed=0)
    cfg = T.TrainConfig(patchnet_iters=800, seed=0)
    data = T.prepare(samples, cfg)
    grid = PatchGrid(96)
    acc = {}
    for k in (5, 1):
        r = T._train_one_patchnet((k, data, cfg, grid))
        acc[k] = T.patch_accuracy(r.final_params, data, grid, k, cfg)
    assert acc[5] >= 0.9
    assert abs(acc[1] - 0.5) <= 0.1
