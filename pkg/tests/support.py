"""Random-case builders shared by the loss tests and the acceptance gate.

Finite-difference probes are only meaningful away from the objective's
kinks, so the samplers keep predicted widths well above the square-root
floor and force a clear overlap gap between boxes of the same cell (the
responsible-box choice must not flip under an epsilon-sized bump).
"""

import numpy as np

from wordspot import (
    GridConfig,
    PredictionGrid,
    TargetGrid,
    TimingBox,
    box_to_interval,
    iou,
)


def random_target(rng: np.random.Generator, cfg: GridConfig) -> TargetGrid:
    """A TargetGrid with at least one assigned cell and FD-safe widths."""
    c = cfg.n_cells
    assigned = rng.random(c) < 0.6
    if not assigned.any():
        assigned[int(rng.integers(c))] = True
    keyword = np.where(assigned, rng.integers(0, cfg.n_keywords, size=c), -1)
    center = np.where(assigned, rng.uniform(0.1, 0.9, size=c), 0.0)
    width = np.where(assigned, rng.uniform(0.1, 0.5, size=c), 0.0)
    return TargetGrid(
        cfg, assigned, keyword.astype(np.int64), center, width, (None,) * c
    )


def _cell_boxes_are_safe(center_row, width_row, target_center, target_width,
                         cell, cfg, margin=0.05):
    target_iv = box_to_interval(cell, TimingBox(target_center, target_width, 1.0), cfg)
    overlaps = sorted(
        (
            iou(box_to_interval(cell, TimingBox(c, w, 1.0), cfg), target_iv)
            for c, w in zip(center_row, width_row)
        ),
        reverse=True,
    )
    if overlaps[0] < margin:
        return False
    return len(overlaps) == 1 or overlaps[0] - overlaps[1] >= margin


def random_prediction(
    rng: np.random.Generator, cfg: GridConfig, target: TargetGrid
) -> PredictionGrid:
    """A random grid whose responsible-box choice is stable under FD bumps."""
    c, b = cfg.n_cells, cfg.n_boxes
    class_scores = rng.uniform(0.0, 1.0, size=(c, cfg.n_keywords))
    box_conf = rng.uniform(0.05, 0.95, size=(c, b))
    box_center = rng.uniform(0.0, 1.0, size=(c, b))
    box_width = rng.uniform(0.1, 0.9, size=(c, b))
    for i in np.flatnonzero(target.assigned):
        for _ in range(200):
            if _cell_boxes_are_safe(
                box_center[i], box_width[i], target.center[i], target.width[i], i, cfg
            ):
                break
            box_center[i] = rng.uniform(0.0, 1.0, size=b)
            box_width[i] = rng.uniform(0.1, 0.9, size=b)
        else:
            raise RuntimeError("could not sample a stable box layout")
    return PredictionGrid(class_scores, box_center, box_width, box_conf)


def random_fd_safe_case(rng: np.random.Generator, max_cells=4, max_boxes=2, max_keywords=5):
    """(prediction, target, config) triple safe for finite-difference checks."""
    cfg = GridConfig(
        duration=1.0,
        n_cells=int(rng.integers(1, max_cells + 1)),
        n_boxes=int(rng.integers(1, max_boxes + 1)),
        n_keywords=int(rng.integers(1, max_keywords + 1)),
    )
    target = random_target(rng, cfg)
    return random_prediction(rng, cfg, target), target, cfg
