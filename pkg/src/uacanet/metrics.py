"""Evaluation metrics (Dice, IoU, MAE) and the dataset evaluation protocol."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import autodiff as ad

logger = logging.getLogger(__name__)


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and mask {gt.shape} differ in shape")
    return pred, gt > 0.5


def dice_score(pred_prob, gt, threshold: float = 0.5) -> float:
    pred, g = _pair(pred_prob, gt)
    p = pred >= threshold
    denom = p.sum() + g.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(p, g).sum() / denom)


def iou_score(pred_prob, gt, threshold: float = 0.5) -> float:
    pred, g = _pair(pred_prob, gt)
    p = pred >= threshold
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def mae(pred_prob, gt) -> float:
    pred, g = _pair(pred_prob, gt)
    return float(np.abs(pred - g).mean())


@dataclass
class EvalReport:
    per_image: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.per_image)

    def _mean(self, key: str) -> float:
        return float(np.mean([r[key] for r in self.per_image])) if self.per_image else float("nan")

    @property
    def mdice(self) -> float:
        return self._mean("dice")

    @property
    def miou(self) -> float:
        return self._mean("iou")

    @property
    def mae(self) -> float:
        return self._mean("mae")

    def add(self, path: str, dice: float, iou: float, mae_: float) -> None:
        self.per_image.append({"path": str(path), "dice": dice, "iou": iou, "mae": mae_})

    def summary(self) -> dict:
        return {"mDice": self.mdice, "mIoU": self.miou, "MAE": self.mae,
                "count": self.count, "skipped": len(self.skipped)}

    def to_json(self, path) -> None:
        data = dict(self.summary(), skipped_paths=[str(p) for p in self.skipped],
                    per_image=self.per_image)
        Path(path).write_text(json.dumps(data, indent=2))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["path", "dice", "iou", "mae"])
            writer.writeheader()
            for row in self.per_image:
                writer.writerow({k: (repr(float(v)) if k != "path" else v) for k, v in row.items()})

    @classmethod
    def from_csv(cls, path) -> "EvalReport":
        report = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                report.add(row["path"], float(row["dice"]), float(row["iou"]), float(row["mae"]))
        return report


def predict_image(model, image: np.ndarray, side: int) -> np.ndarray:
    """Final probability map for one ``[3, H, W]`` image at its own resolution."""
    h, w = image.shape[-2:]
    x = ad.resize_array(image[None].astype(np.float32), side, side)
    with ad.no_grad():
        prob = model.predict_proba(ad.Tensor(x))
    return np.clip(ad.resize_array(prob, h, w)[0, 0], 0.0, 1.0)


def evaluate_dataset(model, dataset, side: int | None = None, threshold: float = 0.5) -> EvalReport:
    """Score ``model`` on a list of samples or a dataset root directory.

    Each image is resized to ``side``, predicted, and the probability map is
    resized back to the original resolution before scoring against the
    original mask. Unreadable samples are skipped with a warning.
    """
    from .data import iter_dataset

    side = side if side is not None else model.config.side
    samples: Iterable = iter_dataset(dataset) if isinstance(dataset, (str, Path)) else dataset
    report = EvalReport()
    for item in samples:
        if isinstance(item, Exception):
            logger.warning("skipping unreadable sample: %s", item)
            report.skipped.append(getattr(item, "path", str(item)))
            continue
        prob = predict_image(model, item.image, side)
        gt = item.mask[0]
        report.add(item.source, dice_score(prob, gt, threshold), iou_score(prob, gt, threshold),
                   mae(prob, gt))
    if report.count == 0:
        raise ValueError("evaluation produced no scored samples")
    return report


def boundary_band(mask: np.ndarray, radius: float = 2.0) -> np.ndarray:
    """Pixels within ``radius`` of the foreground/background boundary."""
    from scipy import ndimage

    m = mask > 0.5
    if m.all() or not m.any():
        return np.zeros_like(m)
    d_in = ndimage.distance_transform_edt(m)
    d_out = ndimage.distance_transform_edt(~m)
    # distance to the boundary measured from pixel centres on either side
    dist = np.where(m, d_in, d_out) - 0.5
    return dist <= radius


def uncertainty_boundary_ratio(model, samples, side: int | None = None, stage: int = -1,
                               radius: float = 2.0) -> tuple[float, float]:
    """Mean uncertain-area value near mask boundaries vs elsewhere.

    The uncertain map of the chosen UACA stage is resized to the mask
    resolution. Returns ``(mean_near_boundary, mean_elsewhere)``.
    """
    side = side if side is not None else model.config.side
    near, far = [], []
    for s in samples:
        predict_image(model, s.image, side)
        mu = model.area_maps()[stage].uncertain.data
        h, w = s.mask.shape[-2:]
        mu = ad.resize_array(mu, h, w)[0, 0]
        band = boundary_band(s.mask[0], radius)
        near.append(mu[band])
        far.append(mu[~band])
    return float(np.concatenate(near).mean()), float(np.concatenate(far).mean())
