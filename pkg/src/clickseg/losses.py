"""Segmentation losses: smoothing-free Dice combined 2:1 with cross-entropy,
applied to both the lesion and the organ head."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .network import DualHeadOutput, LossWeights


def dice_loss_nosmooth(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """1 - 2*sum(p*t) / (sum(p) + sum(t)) over one sample, no smoothing term.

    An empty denominator (no predicted and no target mass) scores 0: the
    degenerate case is reachable on negative controls and must not blow up.
    """
    if probs.shape != target.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {target.shape}")
    target = target.to(probs.dtype)
    intersection = (probs * target).sum()
    denom = probs.sum() + target.sum()
    if denom.item() == 0.0:
        return probs.sum() * 0.0  # keeps the graph alive, value 0
    return 1.0 - 2.0 * intersection / denom


def _per_sample_dice(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-sample no-smooth Dice loss, averaged over the batch.

    probs/target: (B, *spatial). Samples whose denominator is numerically
    empty contribute 0; softmax never yields exact zeros, so the 0/0 -> 0
    degenerate rule needs a small tolerance to fire on one-hot-sharp
    predictions of absent classes.
    """
    b = probs.shape[0]
    p = probs.reshape(b, -1)
    t = target.reshape(b, -1).to(probs.dtype)
    intersection = (p * t).sum(dim=1)
    denom = p.sum(dim=1) + t.sum(dim=1)
    nonzero = denom > 1e-8
    losses = torch.zeros(b, dtype=probs.dtype, device=probs.device)
    if nonzero.any():
        losses = torch.where(
            nonzero, 1.0 - 2.0 * intersection / denom.clamp(min=1e-30), losses)
    return losses.mean()


@dataclass
class LossBreakdown:
    total: torch.Tensor
    lesion_dice: torch.Tensor
    lesion_ce: torch.Tensor
    organ_dice: torch.Tensor
    organ_ce: torch.Tensor

    def item(self) -> float:
        return float(self.total.item())


def dice_ce_loss(output: DualHeadOutput, lesion_gt: torch.Tensor,
                 organ_gt: torch.Tensor,
                 w: LossWeights = LossWeights()) -> LossBreakdown:
    """Weighted Dice+CE on both heads, raw weighted sum (no renormalization):

        total = lesion_head_w * (dice_w*Dice_fg + ce_w*CE)
              + organ_head_w * (dice_w*meanDice_organs + ce_w*CE)

    Lesion Dice uses the foreground softmax channel; the organ Dice is the
    mean over the 10 organ classes, per sample.
    """
    lesion_logits = output.lesion_logits
    organ_logits = output.organ_logits
    if lesion_gt.max() >= lesion_logits.shape[1] or lesion_gt.min() < 0:
        raise ValueError("lesion target contains labels outside the class range")
    if organ_gt.max() >= organ_logits.shape[1] or organ_gt.min() < 0:
        raise ValueError("organ target contains labels outside the class range")

    lesion_probs = torch.softmax(lesion_logits, dim=1)[:, 1]
    lesion_dice = _per_sample_dice(lesion_probs, (lesion_gt > 0))
    lesion_ce = F.cross_entropy(lesion_logits, lesion_gt.long())

    organ_probs = torch.softmax(organ_logits, dim=1)
    organ_classes = organ_logits.shape[1]
    class_losses = []
    for c in range(1, organ_classes):
        class_losses.append(_per_sample_dice(organ_probs[:, c],
                                             (organ_gt == c)))
    organ_dice = torch.stack(class_losses).mean()
    organ_ce = F.cross_entropy(organ_logits, organ_gt.long())

    total = (w.lesion_head_w * (w.dice_w * lesion_dice + w.ce_w * lesion_ce)
             + w.organ_head_w * (w.dice_w * organ_dice + w.ce_w * organ_ce))
    return LossBreakdown(total=total, lesion_dice=lesion_dice,
                         lesion_ce=lesion_ce, organ_dice=organ_dice,
                         organ_ce=organ_ce)
