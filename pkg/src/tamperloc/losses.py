"""Composite training objective.

Three terms: mean binary cross-entropy on the predicted mask, the same
cross-entropy restricted to a morphological band around ground-truth mask
boundaries, and the patch-to-prototype contrastive term. The total is their
weighted sum; probabilities are clamped at 1e-7 so every log stays finite.

Reduction convention: mean over pixels per image, then mean over the batch,
unweighted by mask area. All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import ValidationError

EPS = 1e-7


@dataclass
class LossWeights:
    """Balancing coefficients for the three objective terms."""

    lambda_m: float = 1.0
    lambda_e: float = 20.0
    lambda_pc: float = 1.0


@dataclass
class LossBreakdown:
    l_mask: Tensor
    l_edge: Tensor
    l_pc: Tensor
    total: Tensor

    def detach_floats(self) -> dict[str, float]:
        return {
            "loss_mask": float(self.l_mask.detach()),
            "loss_edge": float(self.l_edge.detach()),
            "loss_pc": float(self.l_pc.detach()),
            "loss_total": float(self.total.detach()),
        }


def _as_batch(x: Tensor) -> Tensor:
    if x.ndim == 2:
        return x[None]
    if x.ndim == 4 and x.shape[1] == 1:
        return x[:, 0]
    if x.ndim == 3:
        return x
    raise ValidationError(f"expected (H,W), (B,H,W) or (B,1,H,W) map, got {tuple(x.shape)}")


def _check_binary(mask: Tensor, name: str) -> Tensor:
    m = mask.float()
    if not torch.logical_or(m == 0, m == 1).all():
        raise ValidationError(f"{name} must be binary")
    return m


def _bce_map(pred: Tensor, gt: Tensor) -> Tensor:
    p = pred.clamp(EPS, 1.0 - EPS)
    return -(gt * torch.log(p) + (1.0 - gt) * torch.log1p(-p))


def mask_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean pixel BCE between the probability map and the binary target."""
    pred_b, gt_b = _as_batch(pred), _as_batch(gt)
    if pred_b.shape != gt_b.shape:
        raise ValidationError(
            f"prediction {tuple(pred_b.shape)} and target {tuple(gt_b.shape)} differ"
        )
    gt_f = _check_binary(gt_b, "mask target")
    return _bce_map(pred_b, gt_f).flatten(1).mean(dim=1).mean()


def mask_loss_logits(logits: Tensor, gt: Tensor) -> Tensor:
    """``mask_loss`` evaluated from pre-sigmoid logits.

    Mathematically identical to ``mask_loss(sigmoid(logits), gt)`` but
    numerically stable in the saturated tails, where the probability-space
    clamp would zero the gradient. Training uses this form.
    """
    logit_b, gt_b = _as_batch(logits), _as_batch(gt)
    if logit_b.shape != gt_b.shape:
        raise ValidationError(
            f"prediction {tuple(logit_b.shape)} and target {tuple(gt_b.shape)} differ"
        )
    gt_f = _check_binary(gt_b, "mask target")
    bce = F.binary_cross_entropy_with_logits(logit_b, gt_f, reduction="none")
    return bce.flatten(1).mean(dim=1).mean()


def edge_band(gt: Tensor, rho: int = 3) -> Tensor:
    """Binary band of pixels within Chebyshev distance ``rho`` of the mask
    boundary: dilate(gt, rho) XOR erode(gt, rho). Empty iff gt is constant.
    """
    if rho < 1:
        raise ValidationError(f"edge band radius must be >= 1, got {rho}")
    squeeze = gt.ndim == 2
    gt_b = _check_binary(_as_batch(gt), "edge band input")[:, None]
    k = 2 * rho + 1
    dilate = F.max_pool2d(gt_b, k, stride=1, padding=rho)
    erode = 1.0 - F.max_pool2d(1.0 - gt_b, k, stride=1, padding=rho)
    band = (dilate - erode)[:, 0]
    return band[0] if squeeze else band


def edge_loss(pred: Tensor, gt: Tensor, band: Tensor) -> Tensor:
    """BCE restricted to the boundary band; zero when the band is empty.

    Per-image band mean, then batch mean over images.
    """
    pred_b, gt_b, band_b = _as_batch(pred), _as_batch(gt), _as_batch(band)
    if not (pred_b.shape == gt_b.shape == band_b.shape):
        raise ValidationError("edge_loss inputs must share one shape")
    gt_f = _check_binary(gt_b, "mask target")
    band_f = _check_binary(band_b, "edge band")
    bce = _bce_map(pred_b, gt_f) * band_f
    counts = band_f.flatten(1).sum(dim=1)
    per_image = bce.flatten(1).sum(dim=1) / counts.clamp(min=1.0)
    return per_image.mean()


def edge_loss_logits(logits: Tensor, gt: Tensor, band: Tensor) -> Tensor:
    """``edge_loss`` evaluated from pre-sigmoid logits (stable tails)."""
    logit_b, gt_b, band_b = _as_batch(logits), _as_batch(gt), _as_batch(band)
    if not (logit_b.shape == gt_b.shape == band_b.shape):
        raise ValidationError("edge_loss inputs must share one shape")
    gt_f = _check_binary(gt_b, "mask target")
    band_f = _check_binary(band_b, "edge band")
    bce = F.binary_cross_entropy_with_logits(logit_b, gt_f, reduction="none") * band_f
    counts = band_f.flatten(1).sum(dim=1)
    per_image = bce.flatten(1).sum(dim=1) / counts.clamp(min=1.0)
    return per_image.mean()


def total_loss(l_mask: Tensor, l_edge: Tensor, l_pc: Tensor, weights: LossWeights) -> LossBreakdown:
    """Weighted sum of the three objective terms."""
    for name, w in (("lambda_m", weights.lambda_m), ("lambda_e", weights.lambda_e),
                    ("lambda_pc", weights.lambda_pc)):
        if w < 0:
            raise ValidationError(f"{name} must be non-negative, got {w}")
    total = weights.lambda_m * l_mask + weights.lambda_e * l_edge + weights.lambda_pc * l_pc
    return LossBreakdown(l_mask=l_mask, l_edge=l_edge, l_pc=l_pc, total=total)
