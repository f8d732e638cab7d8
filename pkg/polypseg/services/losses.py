"""Structure loss: boundary-weighted BCE plus weighted IoU.

Pixel weights rise near mask boundaries, where the local average of the
mask differs from the mask itself. The main term supervises P2, the
auxiliary term P1; P_final carries no loss.
"""
from typing import Dict, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from polypseg.core.exceptions import ShapeError, ValidationError
from polypseg.models.polyp_pvt import PredictionTriple
from polypseg.schemas.training import LossConfig, LossReport
from polypseg.utils.validation import check_binary_mask, check_finite, check_same_shape


def _as_batch(x: torch.Tensor) -> torch.Tensor:
    """H×W, 1×H×W or N×1×H×W → N×1×H×W"""
    if x.dim() == 2:
        return x[None, None]
    if x.dim() == 3:
        return x[None]
    if x.dim() == 4:
        return x
    raise ShapeError(f"expected a 2-4 dimensional map, got {tuple(x.shape)}", stage="loss")


def pixel_weights(mask: torch.Tensor, window: int = 31, gain: float = 5.0) -> torch.Tensor:
    """w = 1 + gain·|avgpool(G) − G|, averaged over in-image pixels only"""
    mask = _as_batch(mask)
    check_binary_mask(mask)
    pooled = F.avg_pool2d(mask, kernel_size=window, stride=1, padding=window // 2,
                          count_include_pad=False)
    return 1.0 + gain * torch.abs(pooled - mask)


def _check_inputs(logits: torch.Tensor, mask: torch.Tensor, weights: torch.Tensor) -> None:
    check_finite(logits, "logits")
    check_binary_mask(mask)
    check_same_shape(logits, mask, "logits and mask")
    check_same_shape(weights, mask, "weights and mask")


def weighted_bce(logits: torch.Tensor, mask: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    logits, mask, weights = _as_batch(logits), _as_batch(mask), _as_batch(weights)
    _check_inputs(logits, mask, weights)
    bce = F.binary_cross_entropy_with_logits(logits, mask, reduction="none")
    per_image = (weights * bce).sum(dim=(2, 3)) / weights.sum(dim=(2, 3))
    return per_image.mean()


def weighted_iou(logits: torch.Tensor, mask: torch.Tensor, weights: torch.Tensor,
                 eps: float = 1.0) -> torch.Tensor:
    logits, mask, weights = _as_batch(logits), _as_batch(mask), _as_batch(weights)
    _check_inputs(logits, mask, weights)
    prob = torch.sigmoid(logits)
    inter = (weights * prob * mask).sum(dim=(2, 3))
    union = (weights * (prob + mask - prob * mask)).sum(dim=(2, 3))
    return (1.0 - (inter + eps) / (union + eps)).mean()


class StructureLoss(nn.Module):
    """wbce + wiou on one logit map"""

    def __init__(self, cfg: LossConfig = LossConfig()):
        super().__init__()
        self.cfg = cfg

    def terms(self, logits: torch.Tensor, mask: torch.Tensor) -> Dict[str, torch.Tensor]:
        weights = pixel_weights(mask, self.cfg.weight_window, self.cfg.weight_gain)
        return {
            "wbce": weighted_bce(logits, mask, weights),
            "wiou": weighted_iou(logits, mask, weights, self.cfg.eps),
        }

    def forward(self, logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        terms = self.terms(logits, mask)
        return terms["wbce"] + terms["wiou"]


def total_loss(pred: PredictionTriple, mask: torch.Tensor,
               cfg: LossConfig = LossConfig()) -> Tuple[torch.Tensor, LossReport]:
    """Main loss on P2 plus auxiliary loss on P1; returns the differentiable total and its breakdown"""
    mask = _as_batch(mask)
    for name, logits in (("p1", pred.p1), ("p2", pred.p2)):
        if tuple(logits.shape[-2:]) != tuple(mask.shape[-2:]):
            raise ShapeError(
                f"{name} resolution {tuple(logits.shape[-2:])} differs from mask "
                f"{tuple(mask.shape[-2:])}",
                stage="loss",
            )

    criterion = StructureLoss(cfg)
    main = criterion.terms(pred.p2, mask)
    aux = criterion.terms(pred.p1, mask)
    total = main["wbce"] + main["wiou"] + aux["wbce"] + aux["wiou"]
    if not torch.isfinite(total):
        raise ValidationError("loss is not finite")

    report = LossReport(
        total=float(total.detach()),
        main=float((main["wbce"] + main["wiou"]).detach()),
        aux=float((aux["wbce"] + aux["wiou"]).detach()),
        wbce_main=float(main["wbce"].detach()),
        wiou_main=float(main["wiou"].detach()),
        wbce_aux=float(aux["wbce"].detach()),
        wiou_aux=float(aux["wiou"].detach()),
    )
    return total, report
