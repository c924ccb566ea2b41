"""Task loss functions for the layout parsing network.

All losses are plain torch functions over tensors so that gradients can be
checked against central finite differences. Each loss averages over its own
sample count, keeping the combination weights meaningful regardless of how
many anchors/proposals contributed.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

PROB_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Combination weights; the mask term is double-weighted by default."""

    rpn: float = 1.0
    region_class: float = 1.0
    box: float = 1.0
    mask: float = 2.0

    def __post_init__(self) -> None:
        if min(self.rpn, self.region_class, self.box, self.mask) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossComponents:
    rpn: torch.Tensor
    region_class: torch.Tensor
    box: torch.Tensor
    mask: torch.Tensor

    def detached(self) -> dict:
        return {
            "rpn": float(self.rpn.detach()),
            "region_class": float(self.region_class.detach()),
            "box": float(self.box.detach()),
            "mask": float(self.mask.detach()),
        }


def cross_entropy(probs: torch.Tensor, true_class: int) -> torch.Tensor:
    """-log p(true class) for a probability distribution over classes."""
    total = float(probs.sum().detach())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"class distribution sums to {total}, not 1")
    p = probs[true_class].clamp(min=PROB_EPS)
    return -torch.log(p)


def smooth_l1(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Smooth L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise; mean over coords."""
    if pred.shape != target.shape:
        raise ValueError("pred/target shape mismatch")
    diff = (pred - target).abs()
    per_coord = torch.where(diff < 1.0, 0.5 * diff * diff, diff - 0.5)
    return per_coord.mean()


def mask_bce(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-pixel binary cross entropy averaged over all mask pixels."""
    if pred.shape != target.shape:
        raise ValueError("pred/target shape mismatch")
    # the clamp epsilon is below float32 resolution, so work in float64
    p = pred.double().clamp(min=PROB_EPS, max=1.0 - PROB_EPS)
    y = target.double()
    return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).mean()


def mask_focal(pred: torch.Tensor, target: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    """Focal loss on mask pixels: -(1 - p_t)^gamma log p_t, averaged.

    gamma = 0 reduces exactly to mask_bce.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if pred.shape != target.shape:
        raise ValueError("pred/target shape mismatch")
    p = pred.double().clamp(min=PROB_EPS, max=1.0 - PROB_EPS)
    y = target.double()
    p_t = y * p + (1.0 - y) * (1.0 - p)
    return -((1.0 - p_t) ** gamma * torch.log(p_t)).mean()


def total_loss(components: LossComponents, weights: LossWeights = LossWeights()) -> torch.Tensor:
    return (
        weights.rpn * components.rpn
        + weights.region_class * components.region_class
        + weights.box * components.box
        + weights.mask * components.mask
    )
