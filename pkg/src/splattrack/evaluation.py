"""TAP-Vid style tracking metrics: average Jaccard, delta_avg and occlusion accuracy.

Distances are measured after rescaling pixel coordinates to a fixed
evaluation resolution.  The query frame is excluded from every per-frame
tally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError
from .track import Query, Track


@dataclass(frozen=True)
class GroundTruthTrack:
    points: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        vis = np.asarray(self.visible, dtype=bool)
        if pts.ndim != 2 or pts.shape[1] != 2 or vis.shape != (pts.shape[0],):
            raise ContractError("ground truth needs (k, 2) points and k flags")
        if not np.all(np.isfinite(pts[vis])):
            raise ContractError("ground-truth points must be finite where visible")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "visible", vis)

    @property
    def k(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class EvalConfig:
    thresholds: tuple = (1.0, 2.0, 4.0, 8.0, 16.0)
    stride: int = 5
    eval_resolution: tuple = (256, 256)
    image_size: tuple = (256, 256)

    def __post_init__(self):
        th = tuple(float(x) for x in self.thresholds)
        if not th or th[0] <= 0 or any(b <= a for a, b in zip(th, th[1:])):
            raise ContractError("thresholds must be positive and ascending")
        if self.stride < 1:
            raise ContractError("stride must be >= 1")
        object.__setattr__(self, "thresholds", th)

    def scale(self) -> np.ndarray:
        return np.array([self.eval_resolution[0] / self.image_size[0],
                         self.eval_resolution[1] / self.image_size[1]])


def _frames(pred: Track, gt: GroundTruthTrack) -> np.ndarray:
    if pred.points.shape[0] != gt.k:
        raise ContractError(f"prediction has {pred.points.shape[0]} frames, gt has {gt.k}")
    keep = np.ones(gt.k, dtype=bool)
    keep[pred.query.t] = False
    return keep


def _errors(pred: Track, gt: GroundTruthTrack, config: EvalConfig) -> np.ndarray:
    scale = config.scale()
    with np.errstate(invalid="ignore"):
        return np.linalg.norm((pred.points - gt.points) * scale, axis=1)


def delta_avg(pred: Track, gt: GroundTruthTrack, config: EvalConfig | None = None) -> float:
    """Mean over thresholds of the fraction of gt-visible frames within the threshold.

    NaN when no gt-visible frame remains.
    """
    cfg = config or EvalConfig()
    keep = _frames(pred, gt) & gt.visible
    if not np.any(keep):
        return math.nan
    err = _errors(pred, gt, cfg)[keep]
    return float(np.mean([np.mean(err <= th) for th in cfg.thresholds]))


def average_jaccard(pred: Track, gt: GroundTruthTrack, config: EvalConfig | None = None) -> float:
    cfg = config or EvalConfig()
    keep = _frames(pred, gt)
    err = _errors(pred, gt, cfg)
    gt_vis = gt.visible & keep
    pr_vis = np.asarray(pred.visible, dtype=bool) & keep
    scores = []
    for th in cfg.thresholds:
        close = err <= th
        tp = np.sum(gt_vis & pr_vis & close)
        fp = np.sum(pr_vis & ~(gt_vis & close))
        fn = np.sum(gt_vis & ~(pr_vis & close))
        denom = tp + fp + fn
        if denom == 0:
            return math.nan
        scores.append(tp / denom)
    return float(np.mean(scores))


def occlusion_accuracy(pred: Track, gt: GroundTruthTrack) -> float:
    keep = _frames(pred, gt)
    if not np.any(keep):
        return math.nan
    agree = np.asarray(pred.visible, dtype=bool) == gt.visible
    return float(np.mean(agree[keep]))


def strided_queries(gt: GroundTruthTrack, config: EvalConfig | None = None) -> list[Query]:
    cfg = config or EvalConfig()
    return [Query(t, gt.points[t].copy()) for t in range(0, gt.k, cfg.stride)
            if gt.visible[t]]


def _nanmean(values) -> float:
    # fsum makes the mean independent of pair order
    vals = [v for v in values if not math.isnan(v)]
    return math.fsum(vals) / len(vals) if vals else math.nan


def per_pair_metrics(pred: Track, gt: GroundTruthTrack, config: EvalConfig) -> dict:
    return {
        "AJ": average_jaccard(pred, gt, config),
        "delta_avg": delta_avg(pred, gt, config),
        "OA": occlusion_accuracy(pred, gt),
    }


def evaluate(tracks: Sequence[Track], gts: Sequence[GroundTruthTrack],
             config: EvalConfig | None = None) -> dict:
    """Average every metric over (track, gt) pairs, skipping undefined values."""
    cfg = config or EvalConfig()
    if len(tracks) == 0:
        raise ContractError("nothing to evaluate")
    if len(tracks) != len(gts):
        raise ContractError(f"{len(tracks)} tracks but {len(gts)} ground truths")
    rows = [per_pair_metrics(p, g, cfg) for p, g in zip(tracks, gts)]
    report = {key: _nanmean(r[key] for r in rows) for key in ("AJ", "delta_avg", "OA")}
    report["pairs"] = len(rows)
    return report
