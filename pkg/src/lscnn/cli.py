"""``lscnn`` command line: one subcommand per pipeline stage.

All numeric knobs live in a JSON run config; flags only pick the config,
output directory, seed, thread count and overwrite behaviour. Relative
paths in the config are resolved against the config file's directory.

Output layout under ``out``::

    patchnets/p1.ckpt .. p9.ckpt, p<k>_history.csv, summary.json
    composed.ckpt, compose_summary.json
    finetune/best.ckpt, final.ckpt, history.csv, summary.json
    baseline/best.ckpt, final.ckpt, history.csv, summary.json
    eval/<split>_report.json, <split>_roc.csv
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import shutil
import sys
from dataclasses import fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .compose import N_PATCHES, PatchGrid
from .data import AugmentConfig, NormalizationStats, by_split, load_folder
from .errors import CompositionError, ConfigError, DataError, LscnnError
from .evaluation import evaluate, score_videos
from .synth import CUE_PROFILES, synth_generate, write_dataset
from .training import (TrainConfig, compose_patchnets, finetune, prepare, train_baseline,
                       train_patchnets, write_history)

log = logging.getLogger("lscnn")

DEFAULT_CONFIG = {
    "seed": 0,
    "architecture": "lscnn",
    "out": "runs/default",
    "grid_remainder": "drop",
    "data": {
        "root": "data/synth",
        "manifest": None,
        "size": 96,
        "channels": 3,
        "synthetic": {
            "n_videos": 80,
            "frames_per_video": 34,
            "cue_profile": "default",
            "split_fractions": [0.75, 0.125, 0.125],
        },
    },
    "train": {},
    "augment": {},
    "eval": {"tie": "attack", "batch_size": 64},
}

# run config

def _merge(base, over, where):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict) and k not in ("train", "augment"):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}{k} must be an object")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


class RunConfig:
    """Validated run configuration; ``doc`` is the fully resolved JSON form."""

    def __init__(self, doc, base_dir="."):
        if not isinstance(doc, dict):
            raise ConfigError("run config must be a JSON object")
        doc = _merge(DEFAULT_CONFIG, doc, "")
        base = Path(base_dir)
        for key in ("train", "augment"):
            if not isinstance(doc[key], dict):
                raise ConfigError(f"{key} must be an object")
        for key in ("seed", "architecture"):
            if key in doc["train"]:
                raise ConfigError(f"set {key!r} at the top level, not inside 'train'")
        aug_keys = {f.name for f in fields(AugmentConfig)}
        unknown = sorted(set(doc["augment"]) - aug_keys)
        if unknown:
            raise ConfigError(f"unknown augment keys: {unknown}")
        if doc["grid_remainder"] not in ("drop", "center"):
            raise ConfigError(f"grid_remainder must be 'drop' or 'center', got {doc['grid_remainder']!r}")
        if doc["eval"]["tie"] not in ("real", "attack"):
            raise ConfigError("eval.tie must be 'real' or 'attack'")
        if doc["data"]["synthetic"]["cue_profile"] not in CUE_PROFILES:
            raise ConfigError(f"unknown cue_profile; known: {sorted(CUE_PROFILES)}")
        self.train = TrainConfig.from_dict(
            {**doc["train"], "seed": doc["seed"], "architecture": doc["architecture"]})
        aug = dict(doc["augment"])
        for k in ("blur_sigmas", "noise_sigmas"):
            if k in aug:
                aug[k] = tuple(aug[k])
        self.augment = AugmentConfig(**aug)
        if doc["out"] is None:
            raise ConfigError("'out' is required")
        doc["out"] = str((base / doc["out"]).resolve())
        d = doc["data"]
        if d["root"] is not None:
            d["root"] = str((base / d["root"]).resolve())
        if d["manifest"] is not None:
            d["manifest"] = str((base / d["manifest"]).resolve())
        self.doc = doc

    @classmethod
    def load(cls, path=None, seed=None, out=None):
        if path is None:
            doc, base = {}, Path.cwd()
        else:
            path = Path(path)
            try:
                doc = json.loads(path.read_text())
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e}") from None
            except json.JSONDecodeError as e:
                raise ConfigError(f"config {path} is not valid JSON: {e}") from None
            base = path.resolve().parent
        if not isinstance(doc, dict):
            raise ConfigError("run config must be a JSON object")
        if seed is not None:
            doc["seed"] = seed
        if out is not None:
            doc["out"] = str(Path(out).resolve())
        return cls(doc, base)

    @property
    def out(self):
        return Path(self.doc["out"])

    @property
    def data(self):
        return self.doc["data"]

    def digest(self):
        return hashlib.sha256(json.dumps(self.doc, sort_keys=True).encode()).hexdigest()

    def specs(self):
        return self.train.specs()

    def grid(self):
        return PatchGrid(self.data["size"], self.doc["grid_remainder"])


# helpers

def _prepare_dir(path: Path, force):
    if path.exists() and any(path.iterdir()):
        if not force:
            raise ConfigError(f"output directory {path} is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_samples(rc: RunConfig):
    d = rc.data
    if d["root"] is None:
        raise ConfigError("data.root is required")
    res = load_folder(d["root"], d["manifest"], d["size"], d["channels"])
    if res.errors:
        log.warning("%d files could not be read", len(res.errors))
    return res


def _write_summary(path, rc, command, **extra):
    doc = {"command": command, "config_digest": rc.digest(), "seed": rc.doc["seed"], **extra}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def _save_run(res, stage_dir, rc, command, data):
    save_checkpoint(res.best, stage_dir / "best.ckpt")
    save_checkpoint(Checkpoint(res.best.digest, len(res.history), res.final_params,
                               data.stats.mean, dict(res.adam.states)), stage_dir / "final.ckpt")
    write_history(res.history, stage_dir / "history.csv")
    last = res.history[-1]
    return _write_summary(
        stage_dir / "summary.json", rc, command,
        best_iteration=res.best.iteration,
        final_metrics={"best_val_eer": res.best_eer, "final_train_loss": last.train_loss,
                       "final_val_eer": last.val_eer, "final_val_accuracy": last.val_accuracy},
        iters_to_target=res.iters_to_target,
    )


# commands

def cmd_gen_synth(rc: RunConfig, args):
    root = Path(args.out).resolve() if args.out else (Path(rc.data["root"]) if rc.data["root"] else None)
    if root is None:
        raise ConfigError("no output path: pass --out or set data.root")
    syn = rc.data["synthetic"]
    samples = synth_generate(syn["n_videos"], syn["frames_per_video"], syn["cue_profile"],
                             rc.doc["seed"], tuple(syn["split_fractions"]))
    write_dataset(samples, root, force=args.force)
    counts = {}
    for s in samples:
        counts.setdefault(s.split, {}).setdefault(s.label, 0)
        counts[s.split][s.label] += 1
    for split in sorted(counts):
        print(f"{split}: " + ", ".join(f"{lab} {n}" for lab, n in sorted(counts[split].items())))
    print(f"wrote {len(samples)} frames to {root}")
    return 0


def cmd_train_patchnets(rc: RunConfig, args):
    stage = _prepare_dir(rc.out / "patchnets", args.force)
    data = prepare(_load_samples(rc).samples, rc.train, rc.augment)
    results = train_patchnets(data, rc.grid(), rc.train, workers=min(args.threads, N_PATCHES))
    losses = {}
    for k, res in enumerate(results, 1):
        save_checkpoint(res.best, stage / f"p{k}.ckpt")
        write_history(res.history, stage / f"p{k}_history.csv")
        losses[f"p{k}"] = res.history[-1].train_loss
    _write_summary(stage / "summary.json", rc, "train-patchnets",
                   best_iteration=rc.train.patchnet_iters, final_metrics={"final_train_loss": losses})
    print(f"trained {N_PATCHES} PatchNets for {rc.train.patchnet_iters} iterations -> {stage}")
    return 0


def cmd_compose(rc: RunConfig, args):
    whole, patch = rc.specs()
    src = rc.out / "patchnets"
    missing = [f"p{k}" for k in range(1, N_PATCHES + 1) if not (src / f"p{k}.ckpt").is_file()]
    if missing:
        raise CompositionError(f"missing PatchNet checkpoints in {src}: {', '.join(missing)}")
    target = rc.out / "composed.ckpt"
    if target.exists() and not args.force:
        raise ConfigError(f"{target} exists (use --force to overwrite)")
    ckpts = [load_checkpoint(src / f"p{k}.ckpt", patch.digest()) for k in range(1, N_PATCHES + 1)]
    params = compose_patchnets([c.params for c in ckpts], rc.train)
    save_checkpoint(Checkpoint(whole.digest(), 0, params, ckpts[0].norm_mean), target)
    _write_summary(rc.out / "compose_summary.json", rc, "compose", best_iteration=0, final_metrics={})
    print(f"composed {N_PATCHES} PatchNets into {whole.name} -> {target}")
    return 0


def _whole_run(rc, args, command, stage_name, start=None):
    whole, _ = rc.specs()
    if start is not None and not start.is_file():
        raise DataError(f"{start} not found; run compose first")
    stage = _prepare_dir(rc.out / stage_name, args.force)
    data = prepare(_load_samples(rc).samples, rc.train, rc.augment)
    if start is not None:
        res = finetune(load_checkpoint(start, whole.digest()).params, data, rc.train, whole)
    else:
        res = train_baseline(whole, data, rc.train)
    summary = _save_run(res, stage, rc, command, data)
    print(f"best validation EER {summary['final_metrics']['best_val_eer']:.4f} "
          f"at iteration {summary['best_iteration']} -> {stage}")
    return 0


def cmd_finetune(rc: RunConfig, args):
    return _whole_run(rc, args, "finetune", "finetune", rc.out / "composed.ckpt")


def cmd_train_baseline(rc: RunConfig, args):
    return _whole_run(rc, args, "train-baseline", "baseline")


def cmd_eval(rc: RunConfig, args):
    whole, _ = rc.specs()
    path = Path(args.checkpoint) if args.checkpoint else rc.out / "finetune" / "best.ckpt"
    ckpt = load_checkpoint(path, whole.digest())
    loaded = _load_samples(rc)
    samples = by_split(loaded.samples, args.split)
    if not samples:
        raise DataError(f"split {args.split!r} is empty")
    if ckpt.norm_mean:
        stats = NormalizationStats(ckpt.norm_mean)
    else:
        stats = NormalizationStats.from_training(loaded.samples)
    scores = score_videos(whole, ckpt.params, samples, stats, rc.doc["eval"]["batch_size"],
                          loaded.skipped_videos(args.split))
    report = evaluate(scores, args.threshold, rc.doc["eval"]["tie"])
    out = rc.out / "eval"
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / f"{args.split}_report.json", out / f"{args.split}_roc.csv")
    _write_summary(out / f"{args.split}_summary.json", rc, "eval", best_iteration=ckpt.iteration,
                   final_metrics={"eer": report.eer, "eer_threshold": report.eer_threshold,
                                  "hter": report.hter, "frame_eer": report.frame_eer,
                                  "vote_accuracy": report.vote_accuracy},
                   checkpoint=str(path), split=args.split)
    print(f"{args.split}: EER {report.eer:.4f} at threshold {report.eer_threshold:.6f} "
          f"(frame EER {report.frame_eer:.4f}, vote accuracy {report.vote_accuracy:.4f})")
    if report.hter is not None:
        print(f"{args.split}: HTER {report.hter:.4f} at threshold {report.threshold:.6f}")
    return 0


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train-patchnets": cmd_train_patchnets,
    "compose": cmd_compose,
    "finetune": cmd_finetune,
    "train-baseline": cmd_train_baseline,
    "eval": cmd_eval,
}


def build_parser():
    p = argparse.ArgumentParser(prog="lscnn", description="Patch-composed CNN face anti-spoofing pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run config (defaults built in)")
        s.add_argument("--out", help="output directory (dataset directory for gen-synth)")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if name == "eval":
            s.add_argument("--threshold", type=float, help="fixed threshold for HTER")
            s.add_argument("--checkpoint", help="default: <out>/finetune/best.ckpt")
            s.add_argument("--split", default="validation", choices=("train", "validation", "test"))
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("LSCNN_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        # gen-synth takes --out as the dataset directory, not the run directory
        out = None if args.command == "gen-synth" else args.out
        rc = RunConfig.load(args.config, args.seed, out)
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](rc, args)
    except LscnnError as e:
        print(f"lscnn {args.command}: error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
