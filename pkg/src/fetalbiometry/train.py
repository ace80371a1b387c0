"""Seeded training loop and clip-level evaluation.

Everything that draws randomness (weight init, batch order, dropout,
augmentation) is derived from the config seed, and math runs on a single
thread, so a config trains to bit-identical weights on every run.
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .config import TrainConfig
from .data import Sample, augment_clip
from .errors import DataError
from .geometry import measure, postprocess
from .labels import ClassLabel, CLASS_NAMES, FOREGROUND_CLASSES
from .losses import total_loss
from .metrics import MetricReport, adf_stats, classification_metrics, segmentation_metrics
from .model import MultiTaskVideoNet


def _check_samples(samples: Sequence[Sample], input_size: int) -> int:
    if not samples:
        raise DataError("no clips to train on")
    T = samples[0].frames.shape[0]
    for i, s in enumerate(samples):
        if s.frames.shape != (T, 1, input_size, input_size):
            raise DataError(
                f"clip {i}: frames {s.frames.shape}, expected ({T}, 1, {input_size}, {input_size}); "
                "resize clips to the configured input size and a uniform length first"
            )
    return T


def _clip_loss(seg, logits, sample: Sample, weights):
    masks = torch.from_numpy(sample.masks.astype(np.float32))
    return total_loss(seg[:, 0], logits, masks, [int(l) for l in sample.labels], weights=weights)


@torch.no_grad()
def predict_sample(model: MultiTaskVideoNet, sample: Sample):
    """Binary masks and label predictions for one clip (eval mode)."""
    was_training = model.training
    model.eval()
    x = torch.from_numpy(sample.frames.astype(np.float32)).unsqueeze(0)
    seg, logits, _ = model(x)
    model.train(was_training)
    probs = seg[0, :, 0].cpu().numpy()
    pred_masks = (probs >= 0.5).astype(np.uint8)
    pred_labels = None
    if logits is not None:
        pred_labels = [ClassLabel(int(i)) for i in logits[0].argmax(dim=-1).tolist()]
    return probs, pred_masks, pred_labels


def evaluate_model(model: MultiTaskVideoNet, samples: Sequence[Sample],
                   with_adf: bool = False) -> MetricReport:
    """Aggregate segmentation/classification metrics over clips.

    With ``with_adf`` each foreground frame is pushed through the cleanup
    and measurement path; the reference value comes from measuring the
    ground-truth mask, and frames where either side fails to produce a
    value are dropped from the ADF table.
    """
    all_pred_masks, all_gt_masks, all_gt_labels = [], [], []
    all_pred_labels = []
    adf_pairs: Dict[str, Tuple[List[float], List[float]]] = {
        CLASS_NAMES[c]: ([], []) for c in FOREGROUND_CLASSES
    }
    size = samples[0].frames.shape[-1] if samples else 0
    for sample in samples:
        probs, pred_masks, pred_labels = predict_sample(model, sample)
        for t, label in enumerate(sample.labels):
            all_pred_masks.append(pred_masks[t])
            all_gt_masks.append(sample.masks[t])
            all_gt_labels.append(label)
            if pred_labels is not None:
                all_pred_labels.append(pred_labels[t])
            if with_adf and label != ClassLabel.BACKGROUND:
                predicted = measure(label, postprocess(
                    probs[t].astype(np.float64), size,
                    pixel_spacing=sample.pixel_spacing_mm))
                reference = measure(label, postprocess(
                    sample.masks[t].astype(np.float64), size,
                    pixel_spacing=sample.pixel_spacing_mm))
                key = {ClassLabel.HEAD: "hc_mm", ClassLabel.ABDOMEN: "ac_mm",
                       ClassLabel.FEMUR: "fl_mm"}[label]
                m, r = getattr(predicted, key), getattr(reference, key)
                if m is not None and r is not None:
                    pair = adf_pairs[CLASS_NAMES[label]]
                    pair[0].append(m)
                    pair[1].append(r)
    iou, dice = segmentation_metrics(all_pred_masks, all_gt_masks, all_gt_labels)
    report = MetricReport(iou=iou, dice=dice)
    if all_pred_labels:
        acc, prec, rec, f1 = classification_metrics(all_pred_labels, all_gt_labels)
        report.accuracy, report.precision, report.recall, report.f1 = acc, prec, rec, f1
    if with_adf:
        for name, (measured, reference) in adf_pairs.items():
            if measured:
                mean, std = adf_stats(measured, reference)
                report.adf_mm[name] = {"mean": mean, "std": std, "count": len(measured)}
    return report


def train_model(config: TrainConfig, train_samples: Sequence[Sample],
                val_samples: Optional[Sequence[Sample]] = None,
                log=None) -> Tuple[MultiTaskVideoNet, List[dict]]:
    """Train from scratch; returns the last-epoch model and per-epoch log.

    Validation metrics fall back to the training clips when no validation
    set is given. epochs=0 yields the freshly initialized model and an
    empty history.
    """
    torch.set_num_threads(1)
    torch.manual_seed(config.seed)
    T = _check_samples(train_samples, config.net.input_size)
    if val_samples:
        _check_samples(val_samples, config.net.input_size)
    model = MultiTaskVideoNet(config.net, config.flags)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                           weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    history: List[dict] = []
    eval_on = val_samples if val_samples else train_samples
    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(len(train_samples))
        losses = []
        for start in range(0, len(order), config.batch_size):
            chunk = order[start : start + config.batch_size]
            clips = [train_samples[i] for i in chunk]
            if config.augment:
                clips = [augment_clip(s, seed=int(rng.integers(2**31 - 1))) for s in clips]
            x = torch.from_numpy(np.stack([c.frames for c in clips]).astype(np.float32))
            seg, logits, _ = model(x)
            loss = torch.stack([
                _clip_loss(seg[b], logits[b] if logits is not None else None,
                           clips[b], config.class_weights)
                for b in range(len(clips))
            ]).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        report = evaluate_model(model, eval_on)
        entry = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_iou": report.iou,
            "val_dice": report.dice,
            "val_accuracy": report.accuracy,
        }
        history.append(entry)
        if log is not None:
            acc = f"{entry['val_accuracy']:.3f}" if not math.isnan(entry["val_accuracy"]) else "n/a"
            log(f"epoch {epoch:3d}  loss {entry['train_loss']:.4f}  "
                f"dice {entry['val_dice']:.3f}  acc {acc}")
    model.eval()
    return model, history
