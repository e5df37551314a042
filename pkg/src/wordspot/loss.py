"""Five-term squared-error detection objective.

The total is a plain sum of five already-weighted squared-error terms:
box center, box duration (compared through square roots), object
confidence, no-object confidence, and classification.  Two variants are
supported:

* "yolo" (default): inside an assigned cell only the *responsible* box
  (highest interval overlap with the target) carries the coordinate and
  object-confidence terms; every other box in the grid is pushed to zero
  confidence, and the class term is a symmetric one-hot regression.
* "all_boxes": every box of an assigned cell regresses to the target and
  keeps the object-confidence term, and the class term penalizes only
  the true class.  Useful for exactness checks; degenerate as a training
  objective because nothing pushes wrong-class scores down.

This module is pure numpy with hand-derived gradients; the training loop
uses an equivalent tensor expression that is tested against this one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import (
    CellPrediction,
    GridConfig,
    PredictionGrid,
    TargetGrid,
    TimingBox,
    box_to_interval,
    iou,
)

LOSS_MODES = ("yolo", "all_boxes")

# Gradient of sqrt blows up at zero, so predicted widths are floored here
# before the square root; below the floor the gradient is defined as 0.
WIDTH_FLOOR = 1e-6


@dataclass(frozen=True)
class LossWeights:
    """coord/duration boost the localization terms, noobj damps the background."""

    coord: float = 5.0
    duration: float = 5.0
    noobj: float = 0.5

    def __post_init__(self):
        if min(self.coord, self.duration, self.noobj) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted value of each term; `total` is their plain sum."""

    center: float
    duration: float
    obj_conf: float
    noobj_conf: float
    classification: float

    @property
    def total(self) -> float:
        return self.center + self.duration + self.obj_conf + self.noobj_conf + self.classification

    def as_dict(self) -> dict:
        return {
            "center": self.center,
            "duration": self.duration,
            "obj_conf": self.obj_conf,
            "noobj_conf": self.noobj_conf,
            "classification": self.classification,
            "total": self.total,
        }


@dataclass
class GridGradients:
    """d(total)/d(entry) for every PredictionGrid entry."""

    class_scores: np.ndarray
    box_center: np.ndarray
    box_width: np.ndarray
    box_conf: np.ndarray


def responsible_box(
    target_box: TimingBox, pred_cell: CellPrediction, cell: int, cfg: GridConfig
) -> int:
    """Index of the predicted box with the highest IOU against the target.

    Ties go to the lowest index, so a cell whose boxes are all disjoint
    from the target still has a well-defined responsible box 0.
    """
    target_iv = box_to_interval(cell, target_box, cfg)
    best_j = 0
    best = -1.0
    for j, box in enumerate(pred_cell.boxes):
        v = iou(box_to_interval(cell, box, cfg), target_iv)
        if v > best:
            best = v
            best_j = j
    return best_j


def _responsible_indices(pred: PredictionGrid, target: TargetGrid) -> np.ndarray:
    """Responsible box per cell (-1 for unassigned cells)."""
    cfg = target.cfg
    out = np.full(cfg.n_cells, -1, dtype=np.int64)
    for i in range(cfg.n_cells):
        if not target.assigned[i]:
            continue
        tbox = TimingBox(target.center[i], target.width[i], 1.0)
        out[i] = responsible_box(tbox, pred.cell(i), i, cfg)
    return out


def _check_shapes(pred: PredictionGrid, target: TargetGrid) -> None:
    cfg = target.cfg
    if (pred.n_cells, pred.n_boxes, pred.n_keywords) != (
        cfg.n_cells,
        cfg.n_boxes,
        cfg.n_keywords,
    ):
        raise ValueError(
            f"prediction grid {(pred.n_cells, pred.n_boxes, pred.n_keywords)} does not "
            f"match target geometry {(cfg.n_cells, cfg.n_boxes, cfg.n_keywords)}"
        )


def _sqrt_floored(width: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(width, WIDTH_FLOOR))


def detection_loss(
    pred: PredictionGrid,
    target: TargetGrid,
    weights: LossWeights = LossWeights(),
    mode: str = "yolo",
) -> LossBreakdown:
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    _check_shapes(pred, target)
    cfg = target.cfg
    assigned = target.assigned
    conf = pred.box_conf

    center_t = duration_t = obj_t = cls_t = 0.0
    # Start from "every box is background" and carve out the positives.
    noobj_sq = float((conf**2).sum())

    if mode == "yolo":
        resp = _responsible_indices(pred, target)
        for i in np.flatnonzero(assigned):
            j = resp[i]
            center_t += (pred.box_center[i, j] - target.center[i]) ** 2
            sq_pred = float(_sqrt_floored(pred.box_width[i, j]))
            duration_t += (sq_pred - np.sqrt(target.width[i])) ** 2
            obj_t += (1.0 - conf[i, j]) ** 2
            noobj_sq -= conf[i, j] ** 2
            one_hot = np.zeros(cfg.n_keywords)
            one_hot[target.keyword[i]] = 1.0
            cls_t += float(((one_hot - pred.class_scores[i]) ** 2).sum())
    else:
        for i in np.flatnonzero(assigned):
            center_t += float(((pred.box_center[i] - target.center[i]) ** 2).sum())
            sq_pred = _sqrt_floored(pred.box_width[i])
            duration_t += float(((sq_pred - np.sqrt(target.width[i])) ** 2).sum())
            obj_t += float(((1.0 - conf[i]) ** 2).sum())
            noobj_sq -= float((conf[i] ** 2).sum())
            cls_t += (1.0 - pred.class_scores[i, target.keyword[i]]) ** 2

    return LossBreakdown(
        center=weights.coord * float(center_t),
        duration=weights.duration * float(duration_t),
        obj_conf=float(obj_t),
        noobj_conf=weights.noobj * float(noobj_sq),
        classification=float(cls_t),
    )


def loss_gradient(
    pred: PredictionGrid,
    target: TargetGrid,
    weights: LossWeights = LossWeights(),
    mode: str = "yolo",
) -> GridGradients:
    """Analytic gradient of `detection_loss(...).total` w.r.t. the prediction.

    The responsible-box choice is treated as locally constant, which is
    exact everywhere except on the measure-zero set where two boxes tie
    on IOU.
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    _check_shapes(pred, target)
    target_sqrt = np.sqrt(target.width)

    g_class = np.zeros_like(pred.class_scores)
    g_center = np.zeros_like(pred.box_center)
    g_width = np.zeros_like(pred.box_width)
    g_conf = 2.0 * weights.noobj * pred.box_conf  # background everywhere, fixed below

    def width_grad(width, tq):
        floored = np.maximum(width, WIDTH_FLOOR)
        sq = np.sqrt(floored)
        return weights.duration * (sq - tq) / sq * (width >= WIDTH_FLOOR)

    if mode == "yolo":
        resp = _responsible_indices(pred, target)
        for i in np.flatnonzero(target.assigned):
            j = resp[i]
            g_center[i, j] = 2.0 * weights.coord * (pred.box_center[i, j] - target.center[i])
            g_width[i, j] = width_grad(pred.box_width[i, j], target_sqrt[i])
            g_conf[i, j] = -2.0 * (1.0 - pred.box_conf[i, j])
            one_hot = np.zeros(pred.n_keywords)
            one_hot[target.keyword[i]] = 1.0
            g_class[i] = 2.0 * (pred.class_scores[i] - one_hot)
    else:
        for i in np.flatnonzero(target.assigned):
            g_center[i] = 2.0 * weights.coord * (pred.box_center[i] - target.center[i])
            g_width[i] = width_grad(pred.box_width[i], target_sqrt[i])
            g_conf[i] = -2.0 * (1.0 - pred.box_conf[i])
            k = target.keyword[i]
            g_class[i, k] = -2.0 * (1.0 - pred.class_scores[i, k])

    return GridGradients(g_class, g_center, g_width, g_conf)


def loss_gradient_check(
    pred: PredictionGrid,
    target: TargetGrid,
    weights: LossWeights = LossWeights(),
    mode: str = "yolo",
    epsilon: float = 1e-4,
) -> float:
    """Max discrepancy between the analytic gradient and central differences.

    Per entry the discrepancy is |analytic - numeric| / max(1, |analytic|,
    |numeric|), so near-zero gradients are compared absolutely and large
    ones relatively.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    analytic = loss_gradient(pred, target, weights, mode)

    def total_with(arrays) -> float:
        probe = PredictionGrid(*arrays)
        return detection_loss(probe, target, weights, mode).total

    worst = 0.0
    names = ("class_scores", "box_center", "box_width", "box_conf")
    for slot, name in enumerate(names):
        base = getattr(pred, name)
        grad = getattr(analytic, name)
        for idx in np.ndindex(base.shape):
            arrays = [pred.class_scores, pred.box_center, pred.box_width, pred.box_conf]
            bumped = base.copy()
            bumped[idx] = base[idx] + epsilon
            arrays[slot] = bumped
            hi = total_with(arrays)
            bumped = base.copy()
            bumped[idx] = base[idx] - epsilon
            arrays[slot] = bumped
            lo = total_with(arrays)
            numeric = (hi - lo) / (2.0 * epsilon)
            err = abs(grad[idx] - numeric) / max(1.0, abs(grad[idx]), abs(numeric))
            worst = max(worst, err)
    return worst
