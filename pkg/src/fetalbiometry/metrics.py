"""Evaluation metrics: overlap scores, classification scores, measurement error."""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError
from .labels import CLASS_NAMES, FOREGROUND_CLASSES, ClassLabel


def iou_dice(pred_mask, gt_mask) -> Tuple[float, float]:
    """Per-mask Jaccard and Dice; two empty masks count as perfect (1.0)."""
    p = np.asarray(pred_mask) > 0
    g = np.asarray(gt_mask) > 0
    if p.shape != g.shape:
        raise ContractError(f"shape mismatch: {p.shape} vs {g.shape}")
    inter = int(np.logical_and(p, g).sum())
    union = int(np.logical_or(p, g).sum())
    psum, gsum = int(p.sum()), int(g.sum())
    if union == 0:
        return 1.0, 1.0
    iou = inter / union
    dice = 2.0 * inter / (psum + gsum)
    return iou, dice


def segmentation_metrics(pred_masks, gt_masks, gt_labels=None) -> Tuple[float, float]:
    """Mean per-frame IoU and Dice.

    Frames whose ground-truth label is Background are excluded when
    ``gt_labels`` is given; a frame with both masks empty scores 1.0.
    Returns (nan, nan) if no frame qualifies.
    """
    n = len(pred_masks)
    if len(gt_masks) != n:
        raise ContractError("pred/gt mask counts differ")
    ious, dices = [], []
    for t in range(n):
        if gt_labels is not None and int(gt_labels[t]) == int(ClassLabel.BACKGROUND):
            continue
        i, d = iou_dice(pred_masks[t], gt_masks[t])
        ious.append(i)
        dices.append(d)
    if not ious:
        return float("nan"), float("nan")
    return float(np.mean(ious)), float(np.mean(dices))


def classification_metrics(pred_labels, gt_labels) -> Tuple[float, float, float, float]:
    """Accuracy over all classes; macro precision/recall/F1 over the three
    measurable classes. A class absent from both predictions and ground
    truth is left out of the macro average."""
    pred = np.asarray([int(l) for l in pred_labels])
    gt = np.asarray([int(l) for l in gt_labels])
    if pred.shape != gt.shape:
        raise ContractError("pred/gt label counts differ")
    if len(pred) == 0:
        raise ContractError("no labels to score")
    accuracy = float((pred == gt).mean())

    precisions, recalls, f1s = [], [], []
    for cls in FOREGROUND_CLASSES:
        c = int(cls)
        tp = int(np.sum((pred == c) & (gt == c)))
        fp = int(np.sum((pred == c) & (gt != c)))
        fn = int(np.sum((pred != c) & (gt == c)))
        if tp + fp + fn == 0:
            continue  # class unseen on both sides
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)
    if not precisions:
        return accuracy, float("nan"), float("nan"), float("nan")
    return accuracy, float(np.mean(precisions)), float(np.mean(recalls)), float(np.mean(f1s))


def adf(measured_mm: float, reference_mm: float) -> float:
    """Absolute measurement difference in millimetres."""
    return abs(float(measured_mm) - float(reference_mm))


def adf_stats(measured: Sequence[float], reference: Sequence[float]) -> Tuple[float, float]:
    """Mean and population std of absolute differences over a batch."""
    if len(measured) != len(reference):
        raise ContractError("measured/reference counts differ")
    diffs = np.abs(np.asarray(measured, dtype=np.float64) - np.asarray(reference, dtype=np.float64))
    return float(diffs.mean()), float(diffs.std())


@dataclass
class MetricReport:
    """Flat evaluation summary; serializes to one JSON object or CSV row.

    adf_mm maps a class name to {"mean": .., "std": .., "count": ..} for the
    frames where both a prediction and a reference measurement existed.
    """

    iou: float = float("nan")
    dice: float = float("nan")
    accuracy: float = float("nan")
    precision: float = float("nan")
    recall: float = float("nan")
    f1: float = float("nan")
    adf_mm: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def to_flat_dict(self) -> Dict[str, Optional[float]]:
        d = {
            "iou": self.iou,
            "dice": self.dice,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }
        for cls in FOREGROUND_CLASSES:
            name = CLASS_NAMES[cls]
            stats = self.adf_mm.get(name)
            d[f"adf_{name}_mean"] = stats["mean"] if stats else None
            d[f"adf_{name}_std"] = stats["std"] if stats else None
            d[f"adf_{name}_count"] = stats["count"] if stats else 0
        return d

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and math.isnan(v):
                return None
            return v

        return json.dumps({k: clean(v) for k, v in self.to_flat_dict().items()}, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        flat = self.to_flat_dict()
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(flat.keys()), lineterminator="\n")
        writer.writeheader()
        writer.writerow({k: ("" if v is None or (isinstance(v, float) and math.isnan(v)) else v) for k, v in flat.items()})
        return buf.getvalue()
