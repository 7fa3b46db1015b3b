"""Segmentation and depth evaluation scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class SegScores:
    pix_acc: float
    iou: tuple[float, ...]  # NaN for classes absent from both prediction and ground truth
    miou: float

    def as_dict(self) -> dict:
        return {"pixAcc": self.pix_acc, "mIoU": self.miou}


@dataclass(frozen=True)
class DepthScores:
    delta1: float
    delta2: float
    delta3: float
    abs_rel: float
    rmse: float
    log10: float
    rmse_log: float

    def as_dict(self) -> dict:
        return asdict(self)


def confusion_matrix(pred, gt, num_classes: int, ignore_index: int | None = None) -> np.ndarray:
    """``(num_classes, num_classes)`` counts indexed ``[gt, pred]`` over valid pixels."""
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth differ in size")
    valid = gt != ignore_index if ignore_index is not None else np.ones(gt.shape, bool)
    pred, gt = pred[valid].astype(np.int64), gt[valid].astype(np.int64)
    if ((gt < 0) | (gt >= num_classes) | (pred < 0) | (pred >= num_classes)).any():
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return np.bincount(gt * num_classes + pred, minlength=num_classes ** 2).reshape(
        num_classes, num_classes)


def seg_scores_from_confusion(cm: np.ndarray) -> SegScores:
    total = cm.sum()
    if total == 0:
        raise ValueError("no valid pixels to score")
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    return SegScores(float(tp.sum() / total), tuple(float(v) for v in iou),
                     float(np.nanmean(iou)))


def seg_scores(pred, gt, num_classes: int, ignore_index: int | None = None) -> SegScores:
    """Pixel accuracy, per-class IoU and mIoU.

    Classes that occur in neither the prediction nor the ground truth have an
    undefined IoU and are left out of the mean.
    """
    return seg_scores_from_confusion(confusion_matrix(pred, gt, num_classes, ignore_index))


def depth_scores(pred, gt, mask=None) -> DepthScores:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth differ in shape")
    if mask is None:
        mask = np.ones(gt.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    p, g = pred[mask], gt[mask]
    if p.size == 0:
        raise ValueError("empty validity mask")
    if (p <= 0).any() or (g <= 0).any():
        raise ValueError("depths must be positive on the mask")
    ratio = np.maximum(p / g, g / p)
    log_diff = np.log(p) - np.log(g)
    return DepthScores(
        delta1=float((ratio < 1.25).mean()),
        delta2=float((ratio < 1.25 ** 2).mean()),
        delta3=float((ratio < 1.25 ** 3).mean()),
        abs_rel=float(np.mean(np.abs(p - g) / g)),
        rmse=float(np.sqrt(np.mean((p - g) ** 2))),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        rmse_log=float(np.sqrt(np.mean(log_diff ** 2))),
    )
