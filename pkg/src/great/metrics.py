"""Segmentation quality metrics and the per-step training record."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class MetricsRecord:
    step: int
    loss: float
    wall_ms: float
    miou: Optional[float] = None
    pixacc: Optional[float] = None

    def to_dict(self) -> dict:
        d = {"step": self.step, "loss": self.loss}
        if self.miou is not None:
            d["miou"] = self.miou
        if self.pixacc is not None:
            d["pixacc"] = self.pixacc
        d["wall_ms"] = self.wall_ms
        return d


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, classes: int) -> np.ndarray:
    """classes x classes counts with gt on rows, accumulated over all pixels."""
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth {gt.shape}")
    for name, a in (("prediction", pred), ("ground truth", gt)):
        if a.size and (a.min() < 0 or a.max() >= classes):
            raise ValueError(f"{name} contains ids outside [0, {classes})")
    return np.bincount(
        gt.astype(np.int64) * classes + pred.astype(np.int64), minlength=classes * classes
    ).reshape(classes, classes)


def evaluate(pred_masks, gt_masks, classes: int) -> tuple[float, float]:
    """(mIoU, PixAcc) over a whole set of aligned masks.

    Per-class IoU accumulates intersections and unions across the entire set
    before dividing; classes absent from both predictions and ground truth are
    excluded from the mean.
    """
    pred = np.asarray(pred_masks)
    gt = np.asarray(gt_masks)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth {gt.shape}")
    cm = confusion_matrix(pred, gt, classes)
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    present = union > 0
    miou = float((inter[present] / union[present]).mean()) if present.any() else 0.0
    pixacc = float(inter.sum() / cm.sum())
    return miou, pixacc
