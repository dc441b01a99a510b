"""Segmentation metrics: mDice, mIoU, weighted F, S-measure, max E-measure, MAE.

Predictions are continuous maps in [0, 1]; ground truth is binary.  Dice and
IoU binarise the prediction at 0.5.

Degenerate ground truth (no foreground pixels): Dice, IoU and weighted F
return 1 when the binarised prediction is also empty and 0 otherwise.  The
S-measure and E-measure keep their own definitions for that case
(``1 - mean(pred)`` and the all-background alignment term respectively),
both of which are 1 for an empty prediction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .distance import edt

EPS = np.finfo(np.float64).eps
METRIC_NAMES = ("mdice", "miou", "f_beta_w", "s_alpha", "e_phi_max", "mae")
# Bin-centre thresholds: a binary map never binarises to a constant one.
E_THRESHOLDS = (np.arange(256) + 0.5) / 256.0


def _prep(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    pred = pred.reshape(pred.shape[-2:]) if pred.ndim > 2 else pred
    gt = gt.reshape(gt.shape[-2:]) if gt.ndim > 2 else gt
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in extents")
    return pred, gt > 0.5


def mdice(pred, gt) -> float:
    pred, g = _prep(pred, gt)
    p = pred >= 0.5
    total = p.sum() + g.sum()
    if total == 0:
        return 1.0
    return float(2.0 * (p & g).sum() / total)


def miou(pred, gt) -> float:
    pred, g = _prep(pred, gt)
    p = pred >= 0.5
    union = (p | g).sum()
    if union == 0:
        return 1.0
    return float((p & g).sum() / union)


def mae(pred, gt) -> float:
    pred, g = _prep(pred, gt)
    return float(np.abs(pred - g).mean())


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    k = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma**2))
    return k / k.sum()


def _filter_zero(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(img, ((ph, ph), (pw, pw)))
    h, w = img.shape
    out = np.zeros_like(img)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * padded[i : i + h, j : j + w]
    return out


def weighted_f_measure(pred, gt, beta2: float = 1.0) -> float:
    pred, g = _prep(pred, gt)
    if not g.any():
        return 0.0 if (pred >= 0.5).any() else 1.0
    dist, near_r, near_c = edt(g)
    err = np.abs(pred - g)
    # background errors inherit the error of their nearest foreground pixel
    spread = np.where(g, err, err[near_r, near_c])
    smoothed = _filter_zero(spread, _gaussian_kernel())
    min_err = np.where(g & (smoothed < err), smoothed, err)
    importance = np.where(g, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    weighted = min_err * importance
    tp = g.sum() - weighted[g].sum()
    fp = weighted[~g].sum()
    recall = 1.0 - weighted[g].mean()
    precision = tp / (tp + fp + EPS)
    return float((1 + beta2) * recall * precision / (recall + beta2 * precision + EPS))


def _object_similarity(values: np.ndarray) -> float:
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def _ssim(pred: np.ndarray, g: np.ndarray) -> float:
    n = pred.size
    x, y = pred.mean(), g.mean()
    denom = max(n - 1, 1)
    sx = ((pred - x) ** 2).sum() / denom
    sy = ((g - y) ** 2).sum() / denom
    sxy = ((pred - x) * (g - y)).sum() / denom
    a = 4 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return a / (b + EPS)
    return 1.0 if b == 0 else 0.0


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    pred, g = _prep(pred, gt)
    y = g.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())

    obj = y * _object_similarity(pred[g]) + (1 - y) * _object_similarity(1.0 - pred[~g])

    h, w = g.shape
    # 1-based centroid rounded half away from zero; it ends the left/top blocks
    cy, cx = (int(v) for v in np.floor(np.argwhere(g).mean(axis=0) + 1.5))
    gf = g.astype(np.float64)
    region = 0.0
    for rs, cs in (
        (slice(0, cy), slice(0, cx)),
        (slice(0, cy), slice(cx, w)),
        (slice(cy, h), slice(0, cx)),
        (slice(cy, h), slice(cx, w)),
    ):
        part = pred[rs, cs]
        if part.size:
            region += part.size / (h * w) * _ssim(part, gf[rs, cs])

    return float(max(alpha * obj + (1 - alpha) * region, 0.0))


def _enhanced_alignment(fm: np.ndarray, g: np.ndarray) -> float:
    if not g.any():
        enhanced = 1.0 - fm
    elif g.all():
        enhanced = fm
    else:
        af = fm - fm.mean()
        ag = g - g.mean()
        align = 2.0 * af * ag / (af * af + ag * ag + EPS)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


def e_measure_max(pred, gt) -> float:
    pred, g = _prep(pred, gt)
    gf = g.astype(np.float64)
    return max(_enhanced_alignment((pred >= t).astype(np.float64), gf) for t in E_THRESHOLDS)


def evaluate(pred, gt) -> dict[str, float]:
    return {
        "mdice": mdice(pred, gt),
        "miou": miou(pred, gt),
        "f_beta_w": weighted_f_measure(pred, gt),
        "s_alpha": s_measure(pred, gt),
        "e_phi_max": e_measure_max(pred, gt),
        "mae": mae(pred, gt),
    }


@dataclass
class MetricsReport:
    per_image: list[dict] = field(default_factory=list)
    dataset_mean: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, pairs, ids=None) -> "MetricsReport":
        rows = []
        for k, (pred, gt) in enumerate(pairs):
            rows.append({"id": ids[k] if ids else str(k), **evaluate(pred, gt)})
        mean = {m: float(np.mean([r[m] for r in rows])) if rows else float("nan") for m in METRIC_NAMES}
        return cls(rows, mean)

    def to_json(self) -> dict:
        return {
            "schema": "megalap.metrics/1",
            "orientation": {m: ("lower" if m == "mae" else "higher") for m in METRIC_NAMES},
            "per_image": self.per_image,
            "dataset_mean": self.dataset_mean,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def table(self, title: str = "dataset") -> str:
        heads = ["mDice↑", "mIoU↑", "Fβw↑", "Sα↑", "Eφmax↑", "MAE↓"]
        line = f"{'':<16}" + "".join(f"{h:>9}" for h in heads)
        vals = f"{title:<16}" + "".join(f"{self.dataset_mean[m]:>9.3f}" for m in METRIC_NAMES)
        return line + "\n" + vals
