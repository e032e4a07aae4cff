"""Confusion accumulation and masked per-class IoU / mIoU.

FREE is not a scored class: a FREE prediction on an occupied ground-truth
voxel counts as a false negative for the ground-truth class, and classes
with a zero denominator are excluded from the mean rather than scored 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gt_multiscale import FREE

__all__ = ["ConfusionTally", "accumulate", "miou"]


@dataclass
class ConfusionTally:
    num_classes: int = 17
    tp: np.ndarray = None
    fp: np.ndarray = None
    fn: np.ndarray = None
    free_tp: int = 0
    free_fp: int = 0
    free_fn: int = 0
    voxels_evaluated: int = 0

    def __post_init__(self):
        if self.tp is None:
            self.tp = np.zeros(self.num_classes, dtype=np.int64)
            self.fp = np.zeros(self.num_classes, dtype=np.int64)
            self.fn = np.zeros(self.num_classes, dtype=np.int64)

    def merge(self, other: "ConfusionTally") -> "ConfusionTally":
        if other.num_classes != self.num_classes:
            raise ValueError("class counts differ")
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.free_tp += other.free_tp
        self.free_fp += other.free_fp
        self.free_fn += other.free_fn
        self.voxels_evaluated += other.voxels_evaluated
        return self


def accumulate(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray,
               tally: ConfusionTally) -> ConfusionTally:
    """Add one frame's masked confusion counts to the tally."""
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ValueError("shape mismatch")
    m = np.asarray(mask, dtype=bool)
    p = np.asarray(pred)[m].astype(np.int64)
    g = np.asarray(gt)[m].astype(np.int64)
    k = tally.num_classes
    hit = p == g
    for c in range(k):
        tally.tp[c] += int((hit & (g == c)).sum())
        tally.fp[c] += int((~hit & (p == c)).sum())
        tally.fn[c] += int((~hit & (g == c)).sum())
    tally.free_tp += int((hit & (g == FREE)).sum())
    tally.free_fp += int((~hit & (p == FREE)).sum())
    tally.free_fn += int((~hit & (g == FREE)).sum())
    tally.voxels_evaluated += int(m.sum())
    return tally


def miou(tally: ConfusionTally, include_free: bool = False):
    """Per-class IoU and the mean over classes with a non-zero denominator.

    include_free adds a FREE-vs-rest IoU as an extra entry in the mean.
    """
    denom = tally.tp + tally.fp + tally.fn
    if not (denom > 0).any():
        raise ValueError("no class has any support in the tally")
    iou = np.where(denom > 0, tally.tp / np.maximum(denom, 1), np.nan)
    scored = list(iou[denom > 0])
    per_class = {c: float(iou[c]) for c in range(tally.num_classes) if denom[c] > 0}
    if include_free:
        free_denom = tally.free_tp + tally.free_fp + tally.free_fn
        if free_denom > 0:
            per_class[FREE] = tally.free_tp / free_denom
            scored.append(per_class[FREE])
    return per_class, float(np.mean(scored))
