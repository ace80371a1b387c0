"""Training objective: soft Dice plus weighted cross-entropy.

The two terms are summed with unit weights. Dice is averaged over frames
that contain a measurable structure; cross-entropy is averaged over every
frame. The CE average is a plain mean of per-frame values; implementations
that normalize by the sum of the selected class weights give a different
(and here wrong) value.
"""

from typing import Optional, Sequence

import torch
import torch.nn.functional as F

from .errors import ContractError
from .labels import DEFAULT_CLASS_WEIGHTS, ClassLabel


def dice_loss(pred, target, smooth: float = 1.0):
    """1 - (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth).

    ``pred`` holds probabilities in [0, 1], ``target`` is binary; any
    matching shapes are accepted and reduced over all elements.
    """
    pred = torch.as_tensor(pred, dtype=torch.float32) if not torch.is_tensor(pred) else pred
    target = torch.as_tensor(target, dtype=pred.dtype, device=pred.device) if not torch.is_tensor(target) else target
    if pred.shape != target.shape:
        raise ContractError(f"shape mismatch: pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if smooth <= 0:
        raise ValueError(f"smooth must be > 0, got {smooth}")
    inter = (pred * target).sum()
    denom = pred.sum() + target.sum()
    return 1.0 - (2.0 * inter + smooth) / (denom + smooth)


def weighted_ce(logits, label, weights: Optional[Sequence[float]] = None):
    """-w[label] * log softmax(logits)[label] for a single frame."""
    logits = torch.as_tensor(logits, dtype=torch.float32) if not torch.is_tensor(logits) else logits
    if logits.shape[-1] != len(ClassLabel):
        raise ContractError(f"expected {len(ClassLabel)} logits, got shape {tuple(logits.shape)}")
    w = torch.as_tensor(weights if weights is not None else DEFAULT_CLASS_WEIGHTS, dtype=logits.dtype, device=logits.device)
    label = int(label)
    return -w[label] * F.log_softmax(logits, dim=-1)[..., label]


def total_loss(seg_probs, logits, masks, labels, weights: Optional[Sequence[float]] = None, smooth: float = 1.0):
    """Compound per-clip objective.

    seg_probs: (T, H, W) or (T, 1, H, W) probabilities
    logits:    (T, 4), or None when the classifier branch is disabled
    masks:     binary, same spatial shape as seg_probs
    labels:    length-T integer class labels

    Dice is the mean of per-frame dice losses over frames whose target label
    is a measurable structure (none -> the dice term is 0); cross-entropy is
    the mean over all frames, and drops out entirely with logits=None.
    """
    seg_probs = seg_probs if torch.is_tensor(seg_probs) else torch.as_tensor(seg_probs, dtype=torch.float32)
    if logits is not None:
        logits = logits if torch.is_tensor(logits) else torch.as_tensor(logits, dtype=torch.float32)
    masks = masks if torch.is_tensor(masks) else torch.as_tensor(masks, dtype=seg_probs.dtype)
    masks = masks.to(seg_probs.dtype)
    if seg_probs.dim() == 4:  # (T, 1, H, W) -> (T, H, W)
        seg_probs = seg_probs.squeeze(1)
    if masks.dim() == 4:
        masks = masks.squeeze(1)
    T = seg_probs.shape[0]
    if T == 0:
        raise ContractError("clip must contain at least one frame")
    if masks.shape[0] != T or len(labels) != T or (logits is not None and logits.shape[0] != T):
        raise ContractError("per-frame inputs disagree on clip length")

    labels_t = torch.as_tensor([int(l) for l in labels], dtype=torch.long, device=seg_probs.device)

    fg = labels_t != int(ClassLabel.BACKGROUND)
    if fg.any():
        dice_terms = [dice_loss(seg_probs[t], masks[t], smooth) for t in range(T) if fg[t]]
        dice_term = torch.stack(dice_terms).mean()
    else:
        dice_term = seg_probs.sum() * 0.0  # keeps the graph connected

    if logits is None:
        return dice_term
    w = torch.as_tensor(weights if weights is not None else DEFAULT_CLASS_WEIGHTS, dtype=logits.dtype, device=logits.device)
    logp = F.log_softmax(logits, dim=-1)
    picked = logp.gather(1, labels_t.view(-1, 1)).squeeze(1)
    ce_term = (-w[labels_t] * picked).mean()
    return dice_term + ce_term
