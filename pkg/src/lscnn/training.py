"""Phase 1 (nine PatchNets), phase 2 (compose + fine-tune) and the baseline.

All randomness is derived from ``cfg.seed`` through named streams, so the
fine-tuning run and the baseline see the same batches, the same
augmentation noise and the same dropout masks; only the initial
parameters differ.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import arch
from . import layers as L
from .checkpoint import Checkpoint
from .compose import PatchGrid, compose, extract_patch
from .data import AugmentConfig, NormalizationStats, augment_one, by_split, n_augmented, normalize, stack
from .errors import ConfigError, DataError, NumericError
from .evaluation import ScoredItem, roc_eer
from .optim import Adam
from .tensor import make_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patchnet_iters: int = 5000
    finetune_iters: int = 2000
    eval_every: int = 100
    seed: int = 0
    architecture: str = "lscnn"
    augment: bool = True
    init_std: float = arch.INIT_STD
    fc_std: float = 0.01
    dropout: float = L.DROPOUT_RATE
    val_fallback: float | None = 0.2  # fraction of training videos held out when no validation split
    target_accuracy: float = 0.95
    stop_at_target: bool = False  # end a run once validation accuracy reaches the target
    eval_batch: int = 64
    bn_ema: float = L.BN_EMA
    bn_warmup: bool = True  # running-stat momentum min(bn_ema, 1 - 1/t): no bias from the 0/1 init

    def __post_init__(self):
        for name in ("batch_size", "patchnet_iters", "finetune_iters", "eval_every", "eval_batch"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if self.architecture not in arch.ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; known: {sorted(arch.ARCHITECTURES)}")
        if self.lr <= 0 or not 0 <= self.dropout < 1:
            raise ConfigError("lr must be positive and dropout in [0, 1)")
        if self.val_fallback is not None and not 0 < self.val_fallback < 1:
            raise ConfigError(f"val_fallback must be in (0, 1) or null, got {self.val_fallback}")

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown training keys: {unknown}")
        return cls(**doc)

    def specs(self):
        whole, patch = arch.ARCHITECTURES[self.architecture]
        return whole(self.dropout), patch(self.dropout)

    def adam(self):
        return Adam(lr=self.lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)


# data

@dataclass
class TrainingData:
    """Raw training images plus the normalized validation set."""

    x: np.ndarray  # N x C x H x W, raw [0, 255]
    y: np.ndarray
    stats: NormalizationStats
    val_x: np.ndarray  # normalized
    val_y: np.ndarray
    val_videos: list
    augment: AugmentConfig | None

    @property
    def n_views(self):
        return n_augmented(self.augment) if self.augment else 1


def holdout_videos(samples, fraction, seed):
    """Move a seeded ``fraction`` of training videos (whole videos) to validation."""
    train = by_split(samples, "train")
    vids = sorted({s.video_id for s in train})
    if len(vids) < 2:
        raise DataError("need at least 2 training videos to hold out a validation set")
    n = max(1, round(fraction * len(vids)))
    chosen = set(make_rng(seed, "holdout").choice(vids, size=n, replace=False).tolist())
    out = []
    for s in samples:
        if s.split == "train" and s.video_id in chosen:
            s = type(s)(s.image, s.label, s.video_id, s.frame_index, "validation")
        out.append(s)
    return out


def prepare(samples, cfg: TrainConfig, augment_cfg: AugmentConfig | None = None):
    train = by_split(samples, "train")
    if not train:
        raise DataError("training split is empty")
    if not by_split(samples, "validation"):
        if cfg.val_fallback is None:
            raise DataError("no validation split and no val_fallback configured")
        log.info("no validation split; holding out %.0f%% of training videos", 100 * cfg.val_fallback)
        samples = holdout_videos(samples, cfg.val_fallback, cfg.seed)
        train = by_split(samples, "train")
    val = by_split(samples, "validation")
    stats = NormalizationStats.from_training(samples)
    x, y, _ = stack(train)
    vx, vy, vids = stack(val)
    aug = (augment_cfg or AugmentConfig()) if cfg.augment else None
    return TrainingData(x, y, stats, normalize(vx, stats), vy, vids, aug)


class BatchStream:
    """Epoch-wise shuffled indices over (image, augmentation view) pairs."""

    def __init__(self, n_items, batch_size, seed, *key):
        self.n = n_items
        self.batch_size = batch_size
        self.seed = seed
        self.key = key
        self.epoch = -1
        self.order = np.zeros(0, dtype=np.int64)
        self.pos = 0

    def next(self):
        out = []
        need = self.batch_size
        while need:
            if self.pos >= self.order.size:
                self.epoch += 1
                self.order = make_rng(self.seed, *self.key, "epoch", self.epoch).permutation(self.n)
                self.pos = 0
            take = self.order[self.pos:self.pos + need]
            self.pos += take.size
            need -= take.size
            out.append(take)
        return np.concatenate(out)


def make_batch(data: TrainingData, idx, rng, patch=None, grid=None):
    """Augmented, normalized batch; with ``patch`` the k-th grid cell of each image.

    For a patch only the cell plus a one-pixel bottom/right margin is
    augmented, which gives the same blur as augmenting the whole face.
    """
    views = data.n_views
    src = data.x
    if patch is not None:
        r0, r1, c0, c1 = grid.bounds(patch)
        src = src[:, :, r0:min(r1 + 1, src.shape[2]), c0:min(c1 + 1, src.shape[3])]
    imgs = np.empty((idx.size,) + src.shape[1:], dtype=np.float32)
    for j, flat in enumerate(idx):
        i, v = divmod(int(flat), views)
        imgs[j] = augment_one(src[i], v, data.augment, rng) if v else src[i]
    if patch is not None:
        imgs = np.ascontiguousarray(imgs[:, :, :r1 - r0, :c1 - c0])
    return normalize(imgs, data.stats), data.y[idx // views]


# training loop

@dataclass
class HistoryRow:
    iteration: int
    train_loss: float
    val_eer: float | None = None
    val_accuracy: float | None = None


@dataclass
class TrainResult:
    best: Checkpoint
    history: list
    final_params: dict
    iters_to_target: int | None = None
    adam: Adam | None = None

    @property
    def best_eer(self):
        evals = [h.val_eer for h in self.history if h.val_eer is not None]
        return min(evals) if evals else None


def validate(spec, params, data: TrainingData, batch_size=64):
    """Frame-level validation ``(eer, accuracy)`` in infer mode."""
    probs = arch.predict_proba(spec, params, data.val_x, batch_size)[:, arch.REAL].astype(np.float64)
    probs = np.clip(probs, 0.0, 1.0)
    items = [ScoredItem(str(i), float(p), "real" if t == arch.REAL else "attack")
             for i, (p, t) in enumerate(zip(probs, data.val_y))]
    _, eer, _ = roc_eer(items)
    acc = float(np.mean((probs >= 0.5) == (data.val_y == arch.REAL)))
    return eer, acc


def _check_finite(loss, grads, it, key):
    if not math.isfinite(loss):
        bad = sorted(n for n, g in grads.items() if not np.all(np.isfinite(g)))
        raise NumericError(f"{key}: loss became {loss} at iteration {it}; non-finite gradients in {bad or 'none'}")


def fit(spec, params, data: TrainingData, cfg: TrainConfig, iters, key, *,
        evaluate=True, patch=None, grid=None, adam=None):
    """Run ``iters`` Adam steps; returns a :class:`TrainResult`.

    With ``evaluate`` the model is scored on the validation set every
    ``cfg.eval_every`` iterations (and at the last one); the best
    validation EER is kept, ties going to the earliest iteration.
    """
    params = {k: v.copy() for k, v in params.items()}
    arch.check_params(spec, params)
    adam = adam or cfg.adam()
    stream = BatchStream(data.x.shape[0] * data.n_views, cfg.batch_size, cfg.seed, *key)
    aug_rng = make_rng(cfg.seed, *key, "augment")
    drop_rng = make_rng(cfg.seed, *key, "dropout")
    history = []
    best = None
    best_eer = math.inf
    reached = None
    for it in range(1, iters + 1):
        x, y = make_batch(data, stream.next(), aug_rng, patch, grid)
        ema = min(cfg.bn_ema, 1.0 - 1.0 / it) if cfg.bn_warmup else cfg.bn_ema
        loss, _, grads, cache = arch.loss_and_grads(spec, params, x, y, drop_rng, bn_ema=ema)
        _check_finite(loss, grads, it, "/".join(map(str, key)))
        arch.apply_running_stats(params, cache)
        adam.step(params, grads)
        row = HistoryRow(it, loss)
        if evaluate and (it % cfg.eval_every == 0 or it == iters):
            row.val_eer, row.val_accuracy = validate(spec, params, data, cfg.eval_batch)
            log.debug("%s it %d loss %.4f val_eer %.4f val_acc %.4f", key, it, loss, row.val_eer, row.val_accuracy)
            if row.val_eer < best_eer:
                best_eer = row.val_eer
                best = Checkpoint(spec.digest(), it, {k: v.copy() for k, v in params.items()},
                                  data.stats.mean)
            if reached is None and row.val_accuracy >= cfg.target_accuracy:
                reached = it
        history.append(row)
        if cfg.stop_at_target and reached is not None:
            break
    if best is None:
        best = Checkpoint(spec.digest(), len(history), {k: v.copy() for k, v in params.items()}, data.stats.mean)
    return TrainResult(best, history, params, reached, adam)


def _train_one_patchnet(args):
    k, data, cfg, grid = args
    _, patch_spec = cfg.specs()
    params = arch.init_params(patch_spec, cfg.init_std, make_rng(cfg.seed, "patchnet", k, "init"))
    res = fit(patch_spec, params, data, cfg, cfg.patchnet_iters, ("patchnet", k),
              evaluate=False, patch=k, grid=grid)
    res.best = Checkpoint(patch_spec.digest(), cfg.patchnet_iters, res.final_params, data.stats.mean,
                          dict(res.adam.states))
    return res


def train_patchnets(data: TrainingData, grid: PatchGrid, cfg: TrainConfig, workers=1):
    """Nine independent PatchNet runs, one per grid cell, in order p1..p9.

    Each run has its own derived seed streams, so the result does not
    depend on the order or on ``workers``.
    """
    if data.x.shape[0] == 0:
        raise DataError("training split is empty")
    _, patch_spec = cfg.specs()
    if grid.patch_size != patch_spec.input_size:
        raise ConfigError(
            f"grid patches are {grid.patch_size}px but {patch_spec.name} expects {patch_spec.input_size}px"
        )
    jobs = [(k, data, cfg, grid) for k in range(1, 10)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_train_one_patchnet, jobs))
    return [_train_one_patchnet(j) for j in jobs]


def patch_accuracy(params, data: TrainingData, grid: PatchGrid, k, cfg: TrainConfig):
    """Infer-mode accuracy of PatchNet ``k`` on the un-augmented training patches."""
    _, patch_spec = cfg.specs()
    x = np.ascontiguousarray(extract_patch(normalize(data.x, data.stats), grid, k))
    probs = arch.predict_proba(patch_spec, params, x, cfg.eval_batch)
    return float(np.mean(probs.argmax(axis=1) == data.y))


def compose_patchnets(patchnet_params, cfg: TrainConfig):
    whole, _ = cfg.specs()
    return compose(patchnet_params, whole, cfg.fc_std, make_rng(cfg.seed, "compose", "fc"))


def finetune(composed, data: TrainingData, cfg: TrainConfig, spec=None):
    """Whole-image training from composed parameters, with validation-based selection."""
    spec = spec or cfg.specs()[0]
    return fit(spec, composed, data, cfg, cfg.finetune_iters, ("whole",))


def train_baseline(spec, data: TrainingData, cfg: TrainConfig):
    """Same schedule as :func:`finetune`, starting from Normal(0, init_std) weights."""
    params = arch.init_params(spec, cfg.init_std, make_rng(cfg.seed, "baseline", "init"))
    return fit(spec, params, data, cfg, cfg.finetune_iters, ("whole",))


def write_history(history, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "train_loss", "val_eer"])
        for h in history:
            w.writerow([h.iteration, repr(h.train_loss), "" if h.val_eer is None else repr(h.val_eer)])


def config_dict(cfg: TrainConfig):
    return asdict(cfg)
