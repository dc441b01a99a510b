"""Deep-supervision objective: BCE + Dice summed over every decoder level."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Var

DICE_SMOOTH = 1.0


def _check_binary(gt: np.ndarray) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.float64)
    if not np.all((gt == 0) | (gt == 1)):
        raise ValueError("ground truth must be binary (0/1)")
    return gt


def bce_loss(logit: Var, gt) -> Var:
    gt = _check_binary(gt)
    return ad.binary_cross_entropy_with_logits(logit, np.broadcast_to(gt, logit.shape))


def dice_loss(logit: Var, gt) -> Var:
    """1 - (2 sum(p g) + 1) / (sum p + sum g + 1), per sample, averaged over the batch."""
    gt = np.broadcast_to(_check_binary(gt), logit.shape)
    p = ad.sigmoid(logit)
    axes = tuple(range(1, logit.ndim)) if logit.ndim > 1 else None
    inter = ad.sum(p * gt, axis=axes)
    denom = ad.sum(p, axis=axes) + gt.sum(axis=axes) + DICE_SMOOTH
    return ad.mean(1.0 - (2.0 * inter + DICE_SMOOTH) / denom)


def level_loss(logit: Var, gt) -> Var:
    return bce_loss(logit, gt) + dice_loss(logit, gt)


def total_loss(logits: Sequence[Var], gts: Sequence[np.ndarray]) -> Var:
    if len(logits) != len(gts):
        raise ValueError(f"{len(logits)} prediction levels but {len(gts)} ground-truth levels")
    total = None
    for logit, gt in zip(logits, gts):
        term = level_loss(logit, gt)
        total = term if total is None else total + term
    return total


def downscale_gt(mask: np.ndarray, depth: int) -> list[np.ndarray]:
    """Ground truth at each decoder scale H / 2^(i+1): block mean, ties go to 1."""
    mask = _check_binary(mask)
    h, w = mask.shape[-2:]
    out = []
    for i in range(depth):
        f = 2 ** (i + 1)
        if h % f or w % f:
            raise ValueError(f"mask {h}x{w} not divisible by {f}")
        blocks = mask.reshape(mask.shape[:-2] + (h // f, f, w // f, f))
        out.append((blocks.mean(axis=(-3, -1)) >= 0.5).astype(np.float64))
    return out
