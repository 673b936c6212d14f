"""Scoring protocol: ROC sweep, EER, HTER at a transferred threshold, video votes.

Scores are real-class probabilities, so a higher score means "more real".
At threshold ``t`` an item is accepted as real when ``score >= t``:

* FAR(t): fraction of attack items with score >= t
* FRR(t): fraction of real items with score < t
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import arch
from .data import LABELS, normalize, stack
from .errors import DataError, UndefinedMetricError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoredItem:
    id: str
    score: float
    label: str

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise DataError(f"score of {self.id} must be in [0, 1], got {self.score}")
        if self.label not in LABELS:
            raise DataError(f"label must be one of {LABELS}, got {self.label!r}")


def _split_scores(items):
    real = np.array([it.score for it in items if it.label == "real"], dtype=np.float64)
    attack = np.array([it.score for it in items if it.label == "attack"], dtype=np.float64)
    if real.size == 0 or attack.size == 0:
        raise UndefinedMetricError(
            f"need both classes to compute error rates (real={real.size}, attack={attack.size})"
        )
    return np.sort(real), np.sort(attack)


def _rates(real, attack, t):
    """FAR and FRR at thresholds ``t`` (array), given sorted score arrays."""
    far = (attack.size - np.searchsorted(attack, t, side="left")) / attack.size
    frr = np.searchsorted(real, t, side="left") / real.size
    return far, frr


def roc_eer(items):
    """``(roc, eer, eer_threshold)``; ``roc`` is a list of ``(threshold, far, frr)``.

    Thresholds are the distinct scores plus -inf/+inf. The EER is taken at
    the first exact FAR == FRR point, otherwise by linear interpolation
    across the sign change of FAR - FRR.
    """
    real, attack = _split_scores(items)
    t = np.concatenate([[-np.inf], np.unique(np.concatenate([real, attack])), [np.inf]])
    far, frr = _rates(real, attack, t)
    roc = [(float(a), float(b), float(c)) for a, b, c in zip(t, far, frr)]
    d = far - frr
    exact = np.flatnonzero(d == 0)
    if exact.size:
        i = int(exact[0])
        return roc, float(far[i]), float(t[i])
    i = int(np.flatnonzero(d > 0)[-1])  # d runs from +1 at -inf to -1 at +inf
    alpha = d[i] / (d[i] - d[i + 1])
    eer = far[i] + alpha * (far[i + 1] - far[i])
    lo, hi = t[i], t[i + 1]
    if math.isinf(lo):
        thr = hi
    elif math.isinf(hi):
        thr = lo
    else:
        thr = lo + alpha * (hi - lo)
    return roc, float(eer), float(thr)


def hter(items, threshold):
    """Mean of FAR and FRR at a fixed (usually validation-calibrated) threshold."""
    if not math.isfinite(threshold):
        raise UndefinedMetricError(f"HTER threshold must be finite, got {threshold}")
    real, attack = _split_scores(items)
    far, frr = _rates(real, attack, np.array([threshold]))
    return float((far[0] + frr[0]) / 2)


def video_vote(decisions, tie="attack"):
    """Majority label over per-frame decisions; an exact tie goes to ``tie``."""
    counts = Counter(decisions)
    if not decisions:
        raise UndefinedMetricError("cannot vote on a video with zero decided frames")
    unknown = set(counts) - set(LABELS)
    if unknown:
        raise DataError(f"unknown decisions {sorted(unknown)}")
    if counts["real"] > counts["attack"]:
        return "real"
    if counts["attack"] > counts["real"]:
        return "attack"
    return tie


@dataclass
class VideoScores:
    videos: list  # ScoredItem per video, score = mean real-class probability
    frames: list  # ScoredItem per frame
    decisions: dict  # video id -> per-frame labels (probability >= 0.5 -> real)
    skipped: list = field(default_factory=list)


def score_videos(spec, params, samples, stats, batch_size=64, expected_videos=()):
    """Infer-mode real-class probabilities, aggregated per video by the mean.

    ``expected_videos`` lists video ids that should be present; any with no
    frames are skipped with a warning and recorded.
    """
    if not samples:
        raise DataError("no samples to score")
    x, _, vids = stack(samples)
    x = normalize(x, stats)
    probs = arch.predict_proba(spec, params, x, batch_size)[:, arch.REAL].astype(np.float64)
    probs = np.clip(probs, 0.0, 1.0)
    per_video = defaultdict(list)
    labels = {}
    frames = []
    for s, p in zip(samples, probs):
        per_video[s.video_id].append(float(p))
        labels[s.video_id] = s.label
        frames.append(ScoredItem(f"{s.video_id}#{s.frame_index}", float(p), s.label))
    videos, decisions = [], {}
    for vid in sorted(per_video):
        ps = per_video[vid]
        videos.append(ScoredItem(vid, float(np.mean(ps)), labels[vid]))
        decisions[vid] = ["real" if p >= 0.5 else "attack" for p in ps]
    skipped = sorted(set(expected_videos) - set(per_video))
    for vid in skipped:
        log.warning("video %s has no frames; skipped", vid)
    return VideoScores(videos, frames, decisions, skipped)


@dataclass
class EvalReport:
    roc: list
    eer: float
    eer_threshold: float
    hter: float | None = None
    threshold: float | None = None
    frame_eer: float | None = None
    vote_accuracy: float | None = None
    per_video_decisions: list = field(default_factory=list)
    skipped_videos: list = field(default_factory=list)

    def to_json(self):
        doc = asdict(self)
        doc["roc"] = [[_finite(t), far, frr] for t, far, frr in self.roc]
        return json.dumps(doc, indent=2, sort_keys=True)

    def write(self, json_path, roc_csv_path):
        with open(json_path, "w") as f:
            f.write(self.to_json() + "\n")
        write_roc_csv(self.roc, roc_csv_path)


def _finite(t):
    """JSON has no infinities; sentinels are written as strings."""
    if math.isinf(t):
        return "inf" if t > 0 else "-inf"
    return t


def write_roc_csv(roc, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "far", "frr"])
        for t, far, frr in roc:
            w.writerow([repr(float(t)), repr(far), repr(frr)])


def evaluate(scores: VideoScores, threshold=None, tie="attack"):
    """Build the report from one scoring pass."""
    roc, eer, thr = roc_eer(scores.videos)
    _, frame_eer, _ = roc_eer(scores.frames)
    per_video = []
    correct = 0
    for item in scores.videos:
        vote = video_vote(scores.decisions[item.id], tie)
        correct += vote == item.label
        per_video.append({"video_id": item.id, "label": item.label, "score": item.score,
                          "vote": vote, "frames": len(scores.decisions[item.id])})
    report = EvalReport(roc, eer, thr, frame_eer=frame_eer,
                        vote_accuracy=correct / len(scores.videos),
                        per_video_decisions=per_video, skipped_videos=list(scores.skipped))
    if threshold is not None:
        report.threshold = float(threshold)
        report.hter = hter(scores.videos, threshold)
    return report
