"""Segmentation losses: BCE + soft IoU, summed over the four deep-supervision maps."""
from __future__ import annotations

from typing import Sequence

from . import autodiff as ad
from .autodiff import Tensor

EPS = 1e-7


def _check(pred: Tensor, gt: Tensor, name: str) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"{name}: prediction {pred.shape} and target {gt.shape} differ")


def bce_loss(pred_prob: Tensor, gt: Tensor, reduction: str = "mean") -> Tensor:
    """Binary cross entropy on probabilities clamped to [1e-7, 1 - 1e-7].

    ``reduction="mean"`` averages over pixels; ``"sum"`` gives the literal sum.
    """
    _check(pred_prob, gt, "bce_loss")
    p = ad.clip(pred_prob, EPS, 1.0 - EPS)
    y = gt.data
    # -[y log p + (1 - y) log(1 - p)]
    pos = ad.mul(ad.log(p), ad.Tensor(y, dtype=p.dtype))
    neg = ad.mul(ad.log(ad.add(ad.neg(p), 1.0)), ad.Tensor(1.0 - y, dtype=p.dtype))
    total = ad.neg(ad.sum(ad.add(pos, neg)))
    if reduction == "sum":
        return total
    if reduction != "mean":
        raise ValueError(f"unknown reduction {reduction!r}")
    return ad.mul(total, 1.0 / pred_prob.size)


def iou_loss(pred_prob: Tensor, gt: Tensor) -> Tensor:
    """Soft IoU loss ``1 - sum(y p) / sum(y + p - y p)``.

    A ``[B, C, H, W]`` input is scored per image and averaged over the batch;
    any other shape is scored as a single image.
    """
    _check(pred_prob, gt, "iou_loss")
    y = ad.Tensor(gt.data, dtype=pred_prob.dtype)
    axes = (1, 2, 3) if pred_prob.ndim == 4 else None
    inter = ad.sum(ad.mul(pred_prob, y), axis=axes)
    union = ad.sub(ad.add(ad.sum(pred_prob, axis=axes), ad.sum(y, axis=axes)), inter)
    ratio = ad.div(inter, ad.add(union, EPS))
    return ad.add(ad.neg(ad.mean(ratio)), 1.0)


def map_loss(logit: Tensor, gt: Tensor, bce_reduction: str = "mean") -> Tensor:
    p = ad.sigmoid(logit)
    return ad.add(bce_loss(p, gt, bce_reduction), iou_loss(p, gt))


def total_loss(logits: Sequence[Tensor], gt: Tensor, bce_reduction: str = "mean",
               return_parts: bool = False):
    """Equal-weight sum of BCE + IoU over every supervised logit map."""
    parts = [map_loss(lg, gt, bce_reduction) for lg in logits]
    total = parts[0]
    for p in parts[1:]:
        total = ad.add(total, p)
    if return_parts:
        return total, [p.item() for p in parts]
    return total
