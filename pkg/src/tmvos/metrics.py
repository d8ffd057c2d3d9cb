"""Segmentation evaluation: region similarity J, boundary accuracy F.

Follows the common video-segmentation protocol: per-object per-frame scores,
frame 0 excluded by default (it is the given ground truth), overall score is
the mean of the J and F means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

BOUNDARY_TOLERANCE_FRACTION = 0.008


def _check_pair(pred: np.ndarray, gt: np.ndarray):
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def jaccard(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    pred, gt = _check_pair(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with a background 4-neighbor or lying on the image edge."""
    mask = np.asarray(mask) > 0
    padded = np.pad(mask, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return mask & ~interior


def _disk(radius: float) -> np.ndarray:
    r = int(math.floor(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy * yy + xx * xx) <= radius * radius


def boundary_f(pred: np.ndarray, gt: np.ndarray, tolerance_px: float) -> float:
    """F-measure of boundary matching within a pixel tolerance.

    A boundary pixel matches if one of the other mask's boundary pixels lies
    within euclidean distance ``tolerance_px`` (realized by dilating each
    boundary with a disk of that radius).
    """
    if tolerance_px < 0:
        raise ValueError(f"tolerance must be >= 0, got {tolerance_px}")
    pred, gt = _check_pair(pred, gt)
    if not pred.any() and not gt.any():
        return 1.0
    pred_b = mask_boundary(pred)
    gt_b = mask_boundary(gt)
    n_pred = np.count_nonzero(pred_b)
    n_gt = np.count_nonzero(gt_b)
    if n_pred == 0 or n_gt == 0:
        return 0.0
    disk = _disk(tolerance_px)
    gt_dilated = ndimage.binary_dilation(gt_b, structure=disk)
    pred_dilated = ndimage.binary_dilation(pred_b, structure=disk)
    precision = np.count_nonzero(pred_b & gt_dilated) / n_pred
    recall = np.count_nonzero(gt_b & pred_dilated) / n_gt
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def default_boundary_tolerance(height: int, width: int) -> int:
    return math.ceil(BOUNDARY_TOLERANCE_FRACTION * math.hypot(height, width))


@dataclass
class EvalReport:
    """Per-object per-frame J/F scores with sequence and overall means."""

    frames: list[int]
    per_object_j: dict[int, list[float]]
    per_object_f: dict[int, list[float]]
    j_mean_per_object: dict[int, float] = field(default_factory=dict)
    f_mean_per_object: dict[int, float] = field(default_factory=dict)
    j_mean: float = 0.0
    f_mean: float = 0.0
    jf_mean: float = 0.0

    def __post_init__(self):
        for oid, scores in self.per_object_j.items():
            self.j_mean_per_object[oid] = float(np.mean(scores)) if scores else 0.0
        for oid, scores in self.per_object_f.items():
            self.f_mean_per_object[oid] = float(np.mean(scores)) if scores else 0.0
        if self.j_mean_per_object:
            self.j_mean = float(np.mean(list(self.j_mean_per_object.values())))
            self.f_mean = float(np.mean(list(self.f_mean_per_object.values())))
        self.jf_mean = 0.5 * (self.j_mean + self.f_mean)

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "per_object": {
                str(oid): {
                    "J": self.per_object_j[oid],
                    "F": self.per_object_f[oid],
                    "J_mean": self.j_mean_per_object[oid],
                    "F_mean": self.f_mean_per_object[oid],
                }
                for oid in self.per_object_j
            },
            "means": {"J": self.j_mean, "F": self.f_mean, "JF": self.jf_mean},
        }


def evaluate_sequence(preds, gts, exclude_first: bool = True,
                      tolerance_px: float | None = None,
                      object_ids=None) -> EvalReport:
    """Score aligned lists of predicted and ground-truth label masks.

    Masks carry integer object ids (0 is background); each id is scored as a
    binary mask. Frame 0 is excluded by default. The default boundary
    tolerance is ceil(0.008 x image diagonal) pixels.
    """
    preds = [np.asarray(p) for p in preds]
    gts = [np.asarray(g) for g in gts]
    if len(preds) != len(gts):
        raise ValueError(f"lists differ in length: {len(preds)} vs {len(gts)}")
    if not preds:
        raise ValueError("no frames to evaluate")
    if object_ids is None:
        ids = set()
        for g in gts:
            ids.update(np.unique(g).tolist())
        ids.discard(0)
        object_ids = sorted(ids)
    if tolerance_px is None:
        tolerance_px = default_boundary_tolerance(*gts[0].shape)

    start = 1 if exclude_first else 0
    frames = list(range(start, len(preds)))
    per_j = {oid: [] for oid in object_ids}
    per_f = {oid: [] for oid in object_ids}
    for i in frames:
        for oid in object_ids:
            pred, gt = preds[i] == oid, gts[i] == oid
            per_j[oid].append(jaccard(pred, gt))
            per_f[oid].append(boundary_f(pred, gt, tolerance_px))
    return EvalReport(frames, per_j, per_f)
