"""Region-overlap evaluation of predicted shadow maps.

A shadow map marks shadow with LOW values (the map multiplies the scene),
so binarization is ``pred < tau``. IoU and DICE compare the binary mask
against ground truth; a trivial intensity-threshold baseline (dark pixels
inside the imaging fan) anchors the comparison.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imageio
from .shadows import FanGeometry, inside_fan

__all__ = [
    "binarize",
    "iou",
    "dice",
    "evaluate",
    "EvalReport",
    "threshold_baseline",
    "baseline_scores",
    "select_threshold",
    "dark_false_positive_rate",
    "overlay_rgb",
    "save_overlay",
    "write_report",
    "write_per_image_csv",
    "DEFAULT_TAU_GRID",
    "REPORT_SCHEMA",
]

log = logging.getLogger(__name__)

DEFAULT_TAU_GRID = tuple(np.round(np.arange(0.1, 0.91, 0.1), 10))


def _plane(arr) -> np.ndarray:
    """Coerce a Tensor or array to a 2-D [H, W] float array."""
    data = np.asarray(getattr(arr, "data", arr))
    plane = data
    while plane.ndim > 2 and plane.shape[0] == 1:
        plane = plane[0]
    if plane.ndim != 2:
        raise ValueError(f"expected one image plane, got shape {data.shape}")
    return plane


def binarize(pred, tau: float) -> np.ndarray:
    """Shadow mask from a shadow map: True where the map dips below tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau {tau} outside (0, 1)")
    return _plane(pred) < tau


def iou(pred_mask: np.ndarray, true_mask: np.ndarray) -> float:
    pred_mask = np.asarray(pred_mask, dtype=bool)
    true_mask = np.asarray(true_mask, dtype=bool)
    if pred_mask.shape != true_mask.shape:
        raise ValueError(f"shape mismatch {pred_mask.shape} vs {true_mask.shape}")
    union = np.count_nonzero(pred_mask | true_mask)
    if union == 0:
        log.warning("IoU of two empty masks defined as 1.0")
        return 1.0
    return np.count_nonzero(pred_mask & true_mask) / union


def dice(pred_mask: np.ndarray, true_mask: np.ndarray) -> float:
    pred_mask = np.asarray(pred_mask, dtype=bool)
    true_mask = np.asarray(true_mask, dtype=bool)
    if pred_mask.shape != true_mask.shape:
        raise ValueError(f"shape mismatch {pred_mask.shape} vs {true_mask.shape}")
    total = np.count_nonzero(pred_mask) + np.count_nonzero(true_mask)
    if total == 0:
        log.warning("DICE of two empty masks defined as 1.0")
        return 1.0
    return 2.0 * np.count_nonzero(pred_mask & true_mask) / total


@dataclass
class EvalReport:
    tau: float
    iou_per_image: list = field(default_factory=list)
    dice_per_image: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.iou_per_image)

    @property
    def mean_iou(self) -> float:
        return float(np.mean(self.iou_per_image))

    @property
    def std_iou(self) -> float:
        return float(np.std(self.iou_per_image))

    @property
    def mean_dice(self) -> float:
        return float(np.mean(self.dice_per_image))

    @property
    def std_dice(self) -> float:
        return float(np.std(self.dice_per_image))

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "count": self.count,
            "mean_iou": self.mean_iou,
            "std_iou": self.std_iou,
            "mean_dice": self.mean_dice,
            "std_dice": self.std_dice,
            "per_image": [
                {"index": i, "iou": a, "dice": d}
                for i, (a, d) in enumerate(zip(self.iou_per_image, self.dice_per_image))
            ],
        }


def evaluate(preds, truths, tau: float) -> EvalReport:
    """Score each predicted shadow map against its ground-truth mask."""
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions for {len(truths)} truths")
    if len(preds) == 0:
        raise ValueError("nothing to evaluate")
    report = EvalReport(tau=float(tau))
    for pred, truth in zip(preds, truths):
        mask = binarize(pred, tau)
        truth = np.asarray(truth, dtype=bool)
        report.iou_per_image.append(iou(mask, truth))
        report.dice_per_image.append(dice(mask, truth))
    return report


def baseline_scores(image, geometry: FanGeometry) -> np.ndarray:
    """Intensity map with everything outside the fan pinned to 1 (never shadow)."""
    img = _plane(image).astype(np.float64)
    height, width = img.shape
    scores = np.ones_like(img)
    fan = inside_fan(geometry, width, height)
    scores[fan] = img[fan]
    return scores


def threshold_baseline(image, geometry: FanGeometry, tau: float) -> np.ndarray:
    """Trivial detector: dark pixels inside the imaging fan."""
    return binarize(baseline_scores(image, geometry), tau)


def select_threshold(preds, truths, grid=DEFAULT_TAU_GRID) -> tuple[float, float]:
    """Pick the grid tau with the best mean IoU; ties go to the smaller tau."""
    if len(grid) == 0:
        raise ValueError("empty threshold grid")
    best_tau, best_score = None, -1.0
    for tau in sorted(float(t) for t in grid):
        score = evaluate(preds, truths, tau).mean_iou
        if score > best_score:
            best_tau, best_score = tau, score
    return best_tau, best_score


def dark_false_positive_rate(pred_mask, truth, image, dark_tau: float = 0.2) -> float:
    """Fraction of dark non-shadow pixels that the prediction wrongly flags.

    High values reproduce the known failure mode: anechoic (dark) regions
    that are not shadows still get detected, because darkness is the main
    cue the model can learn from synthetic corruption alone.
    """
    pred_mask = np.asarray(pred_mask, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    img = _plane(image)
    dark_clear = (img < dark_tau) & ~truth
    n = np.count_nonzero(dark_clear)
    if n == 0:
        return 0.0
    return np.count_nonzero(pred_mask & dark_clear) / n


def overlay_rgb(image, pred_mask, truth) -> np.ndarray:
    """Gray image with prediction tinted red and ground truth tinted green."""
    img = np.clip(_plane(image).astype(np.float64), 0.0, 1.0)
    pred_mask = np.asarray(pred_mask, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    rgb = np.stack([img, img, img], axis=-1)
    rgb[pred_mask, 0] = 0.55 * rgb[pred_mask, 0] + 0.45
    rgb[truth, 1] = 0.55 * rgb[truth, 1] + 0.45
    return np.clip(rgb, 0.0, 1.0)


def save_overlay(image, pred_mask, truth, path) -> None:
    imageio.save_rgb(overlay_rgb(image, pred_mask, truth), path)


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["tau", "count", "mean_iou", "std_iou", "mean_dice", "std_dice", "per_image"],
    "additionalProperties": False,
    "properties": {
        "tau": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "count": {"type": "integer", "minimum": 1},
        "mean_iou": {"type": "number", "minimum": 0, "maximum": 1},
        "std_iou": {"type": "number", "minimum": 0},
        "mean_dice": {"type": "number", "minimum": 0, "maximum": 1},
        "std_dice": {"type": "number", "minimum": 0},
        "per_image": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["index", "iou", "dice"],
                "additionalProperties": False,
                "properties": {
                    "index": {"type": "integer", "minimum": 0},
                    "iou": {"type": "number", "minimum": 0, "maximum": 1},
                    "dice": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
    },
}


def write_report(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def write_per_image_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "iou", "dice"])
        for i, (a, d) in enumerate(zip(report.iou_per_image, report.dice_per_image)):
            writer.writerow([i, repr(a), repr(d)])
