"""Mask losses: focal, dice, their weighted combination, and min-of-three
candidate selection for backprop.

The default recipe weights focal and dice 1:1 with no MSE term; the
inherited 20:1:1 focal:dice:MSE recipe is available as a preset for
ablations. Focal reduces per-pixel, dice per-mask; batches reduce as the
mean over prompts.
"""

from __future__ import annotations

from typing import Optional, Tuple

import torch
import torch.nn.functional as F

from .config import LossConfig
from .errors import ConfigError, DataError


def _check_binary(target: torch.Tensor) -> None:
    if not torch.all((target == 0) | (target == 1)):
        raise DataError("loss target must be binary (0/1)")


def focal_loss(
    logits: torch.Tensor,
    target: torch.Tensor,
    gamma: float = 2.0,
    alpha: float = 0.25,
) -> torch.Tensor:
    """Mean over pixels of -alpha_t (1 - p_t)^gamma log(p_t).

    p_t is the predicted probability of the true class; alpha_t is ``alpha``
    on foreground and ``1 - alpha`` on background. Computed from
    log-sigmoid terms so saturated logits stay finite.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    _check_binary(target)
    target = target.to(logits.dtype)
    ce = F.binary_cross_entropy_with_logits(logits, target, reduction="none")
    p_t = torch.exp(-ce)  # probability of the true class
    alpha_t = alpha * target + (1.0 - alpha) * (1.0 - target)
    return (alpha_t * (1.0 - p_t) ** gamma * ce).mean()


def dice_loss(
    logits: torch.Tensor, target: torch.Tensor, eps: float = 1.0
) -> torch.Tensor:
    """1 - (2 |p*t| + eps) / (|p| + |t| + eps) with p = sigmoid(logits)."""
    if eps <= 0:
        raise ConfigError(f"eps must be > 0, got {eps}")
    _check_binary(target)
    target = target.to(logits.dtype)
    p = torch.sigmoid(logits)
    inter = (p * target).sum()
    denom = p.sum() + target.sum()
    return 1.0 - (2.0 * inter + eps) / (denom + eps)


def _mask_iou(pred_binary: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    inter = (pred_binary * target).sum()
    union = pred_binary.sum() + target.sum() - inter
    if union == 0:
        return torch.ones((), dtype=target.dtype, device=target.device)
    return inter / union


def combined_loss(
    logits: torch.Tensor,
    target: torch.Tensor,
    weights: LossConfig,
    iou_pred: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """w_focal * focal + w_dice * dice + w_mse * (iou_pred - actual_iou)^2.

    The actual IoU is computed from the hard (thresholded) mask and treated
    as a constant label for the MSE term.
    """
    if weights.w_mse > 0 and iou_pred is None:
        raise ConfigError("w_mse > 0 requires an IoU prediction")
    total = logits.new_zeros(())
    if weights.w_focal > 0:
        total = total + weights.w_focal * focal_loss(
            logits, target, gamma=weights.gamma, alpha=weights.alpha
        )
    if weights.w_dice > 0:
        total = total + weights.w_dice * dice_loss(logits, target, eps=weights.eps)
    if weights.w_mse > 0:
        with torch.no_grad():
            actual = _mask_iou((logits >= 0).to(logits.dtype), target.to(logits.dtype))
        total = total + weights.w_mse * (iou_pred - actual) ** 2
    return total


def min_of_three(
    logits3: torch.Tensor,
    target: torch.Tensor,
    weights: LossConfig,
    iou_preds: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, int]:
    """Loss of the best of three candidate masks and its index.

    Only the selected candidate participates in the gradient; exact ties
    resolve to the lowest index so runs are reproducible.
    """
    if logits3.shape[0] != 3:
        raise DataError(f"expected 3 candidate masks, got {logits3.shape[0]}")
    losses = [
        combined_loss(
            logits3[i],
            target,
            weights,
            iou_pred=None if iou_preds is None else iou_preds[i],
        )
        for i in range(3)
    ]
    stacked = torch.stack(losses)
    index = int(torch.argmin(stacked.detach()).item())
    return losses[index], index
