"""Confusion-matrix segmentation metrics: per-class IoU/F1, mIoU, mF1."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ShapeError


def new_confusion(classes: int) -> np.ndarray:
    """Empty ``K x K`` matrix; rows are ground truth, columns predictions."""
    return np.zeros((classes, classes), dtype=np.int64)


def accumulate(cm: np.ndarray, pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    k = cm.shape[0]
    if pred.shape != gt.shape:
        raise ShapeError(f"accumulate: prediction {pred.shape} vs ground truth {gt.shape}")
    for name, arr in (("prediction", pred), ("ground truth", gt)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ShapeError(f"accumulate: {name} has class index outside [0, {k})")
    idx = gt.ravel().astype(np.int64) * k + pred.ravel().astype(np.int64)
    return cm + np.bincount(idx, minlength=k * k).reshape(k, k)


@dataclass
class SegReport:
    iou: np.ndarray  # per class, NaN where the class has no support
    f1: np.ndarray
    miou: float
    mf1: float
    present: np.ndarray  # classes included in the means


def iou_f1(cm: np.ndarray) -> SegReport:
    cm = np.asarray(cm, dtype=np.float64)
    if cm.sum() <= 0:
        raise InvalidInputError("iou_f1: confusion matrix is empty")
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = tp + fp + fn
    present = denom > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(present, tp / denom, np.nan)
        f1 = np.where(present, 2 * tp / (2 * tp + fp + fn), np.nan)
    return SegReport(iou, f1, float(np.mean(iou[present])), float(np.mean(f1[present])), present)


def write_report(path, report: SegReport, class_names=None) -> None:
    """One row per class (name, iou, f1) and a closing summary row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    k = len(report.iou)
    names = class_names or [f"class_{i}" for i in range(k)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "iou", "f1"])
        for i in range(k):
            if report.present[i]:
                w.writerow([names[i], f"{report.iou[i]:.6f}", f"{report.f1[i]:.6f}"])
            else:
                w.writerow([names[i], "absent", "absent"])
        w.writerow(["mean(miou,mf1)", f"{report.miou:.6f}", f"{report.mf1:.6f}"])


def read_report(path) -> dict:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    summary = rows[-1]
    return {"miou": float(summary[1]), "mf1": float(summary[2]), "rows": rows[1:-1]}
