"""Cell grid geometry: target encoding, interval math, and decoding.

A fixed-duration clip is divided into ``n_cells`` equal, non-overlapping
cells.  Each cell owns at most one keyword event and predicts, per timing
box, a normalized center (within the cell), a normalized width (fraction
of the whole clip, so an event may be wider than its cell), and a
confidence.  Decoding picks, per cell, the keyword/box pair with the
highest score product and keeps it when the product clears a threshold.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels

ASSIGN_MODES = ("center", "contain")


@dataclass(frozen=True)
class GridConfig:
    """Single source of truth for the grid geometry.

    duration: clip length in seconds.
    n_cells: number of equal time cells per clip.
    n_boxes: timing boxes predicted per cell.
    n_keywords: lexicon size.
    """

    duration: float = 1.0
    n_cells: int = 6
    n_boxes: int = 2
    n_keywords: int = 1000

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.n_cells < 1 or self.n_boxes < 1 or self.n_keywords < 1:
            raise ValueError("n_cells, n_boxes and n_keywords must all be >= 1")

    @property
    def cell_width(self) -> float:
        return self.duration / self.n_cells

    @property
    def output_dim(self) -> int:
        """Length of the flat prediction vector: n_cells * (3*n_boxes + n_keywords)."""
        return self.n_cells * (3 * self.n_boxes + self.n_keywords)


@dataclass(frozen=True)
class Event:
    """One keyword occurrence: lexicon index plus absolute times in seconds."""

    keyword: int
    start: float
    end: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)

    @property
    def length(self) -> float:
        return self.end - self.start

    def validate(self, cfg: GridConfig) -> None:
        if not 0.0 <= self.start < self.end <= cfg.duration:
            raise ValueError(
                f"event times ({self.start}, {self.end}) must satisfy "
                f"0 <= start < end <= {cfg.duration}"
            )
        if not 0 <= self.keyword < cfg.n_keywords:
            raise ValueError(f"keyword index {self.keyword} outside [0, {cfg.n_keywords})")


@dataclass(frozen=True)
class TimingBox:
    """One localization hypothesis, all fields normalized to [0, 1].

    center: event midpoint as a position inside the cell.
    width: event duration as a fraction of the clip duration.
    conf: confidence that the localization is right.
    """

    center: float
    width: float
    conf: float


@dataclass(frozen=True)
class CellPrediction:
    class_scores: np.ndarray  # (n_keywords,)
    boxes: tuple[TimingBox, ...]


@dataclass(frozen=True)
class DetectionRecord:
    """A decoded detection: keyword, absolute interval, score product, cell."""

    keyword: int
    start: float
    end: float
    score: float
    cell: int

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)


class PredictionGrid:
    """Per-cell class scores and timing boxes, stored as dense arrays.

    class_scores: (n_cells, n_keywords)
    box_center / box_width / box_conf: (n_cells, n_boxes)
    """

    __slots__ = ("class_scores", "box_center", "box_width", "box_conf")

    def __init__(self, class_scores, box_center, box_width, box_conf):
        self.class_scores = np.asarray(class_scores, dtype=np.float64)
        self.box_center = np.asarray(box_center, dtype=np.float64)
        self.box_width = np.asarray(box_width, dtype=np.float64)
        self.box_conf = np.asarray(box_conf, dtype=np.float64)
        c = self.class_scores.shape[0]
        for name in ("box_center", "box_width", "box_conf"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[0] != c:
                raise ValueError(f"{name} must be (n_cells, n_boxes), got {arr.shape}")
        if self.class_scores.ndim != 2:
            raise ValueError("class_scores must be (n_cells, n_keywords)")

    @property
    def n_cells(self) -> int:
        return self.class_scores.shape[0]

    @property
    def n_keywords(self) -> int:
        return self.class_scores.shape[1]

    @property
    def n_boxes(self) -> int:
        return self.box_conf.shape[1]

    def cell(self, i: int) -> CellPrediction:
        boxes = tuple(
            TimingBox(self.box_center[i, j], self.box_width[i, j], self.box_conf[i, j])
            for j in range(self.n_boxes)
        )
        return CellPrediction(self.class_scores[i].copy(), boxes)

    @classmethod
    def zeros(cls, cfg: GridConfig) -> "PredictionGrid":
        c, b, l = cfg.n_cells, cfg.n_boxes, cfg.n_keywords
        return cls(np.zeros((c, l)), np.zeros((c, b)), np.zeros((c, b)), np.zeros((c, b)))

    def to_vector(self) -> np.ndarray:
        """Flatten to the network's output layout.

        Per cell: n_boxes centers, n_boxes widths, n_boxes confs, then the
        n_keywords class scores.  `from_vector` is the exact inverse.
        """
        per_cell = np.concatenate(
            [self.box_center, self.box_width, self.box_conf, self.class_scores], axis=1
        )
        return per_cell.reshape(-1)

    @classmethod
    def from_vector(cls, vec: np.ndarray, cfg: GridConfig) -> "PredictionGrid":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (cfg.output_dim,):
            raise ValueError(f"expected vector of length {cfg.output_dim}, got {vec.shape}")
        c, b = cfg.n_cells, cfg.n_boxes
        per_cell = vec.reshape(c, 3 * b + cfg.n_keywords)
        return cls(
            per_cell[:, 3 * b :],
            per_cell[:, :b],
            per_cell[:, b : 2 * b],
            per_cell[:, 2 * b : 3 * b],
        )


@dataclass(frozen=True)
class TargetGrid:
    """Supervision derived from events: at most one target per cell.

    assigned: (n_cells,) bool mask of cells owning an event.
    keyword: (n_cells,) int lexicon index, -1 where unassigned.
    center / width: (n_cells,) normalized box targets, 0 where unassigned.
    events: per-cell source Event or None.
    collisions: events dropped because a longer one owned the cell.
    unassignable: events dropped because no cell contains them ("contain" mode).
    """

    cfg: GridConfig
    assigned: np.ndarray
    keyword: np.ndarray
    center: np.ndarray
    width: np.ndarray
    events: tuple[Optional[Event], ...]
    collisions: int = 0
    unassignable: int = 0

    def to_perfect_prediction(self) -> PredictionGrid:
        """Render as the PredictionGrid an ideal detector would emit.

        Assigned cells get a one-hot class row and their target box in
        slot 0 with full confidence; everything else is zero.
        """
        cfg = self.cfg
        grid = PredictionGrid.zeros(cfg)
        for i in range(cfg.n_cells):
            if not self.assigned[i]:
                continue
            grid.class_scores[i, self.keyword[i]] = 1.0
            grid.box_center[i, 0] = self.center[i]
            grid.box_width[i, 0] = self.width[i]
            grid.box_conf[i, 0] = 1.0
        return grid


def cell_span(cfg: GridConfig, i: int) -> tuple[float, float]:
    """Half-open time span [start, end) of cell i."""
    if not 0 <= i < cfg.n_cells:
        raise IndexError(f"cell index {i} outside [0, {cfg.n_cells})")
    return (i * cfg.duration / cfg.n_cells, (i + 1) * cfg.duration / cfg.n_cells)


def assign_cell(event: Event, cfg: GridConfig, mode: str = "center") -> Optional[int]:
    """Pick the cell responsible for an event, or None.

    "center" assigns the cell containing the event midpoint; a midpoint
    exactly on a boundary goes to the later cell and a midpoint at the
    clip end goes to the last cell, so assignment is total.  "contain"
    requires the whole event to fit inside one cell and returns None for
    events that straddle a boundary.
    """
    if mode not in ASSIGN_MODES:
        raise ValueError(f"unknown assignment mode {mode!r}")
    event.validate(cfg)
    if mode == "center":
        i = int(event.midpoint * cfg.n_cells / cfg.duration)
        return min(i, cfg.n_cells - 1)
    for i in range(cfg.n_cells):
        start, end = cell_span(cfg, i)
        if event.start >= start and event.end <= end:
            return i
    return None


def encode_targets(
    events: Sequence[Event], cfg: GridConfig, mode: str = "center"
) -> TargetGrid:
    """Build the per-cell supervision grid from ground-truth events.

    When two events land in the same cell the longer one wins (the loser
    is counted in `collisions`, never an error).  Box targets store the
    midpoint relative to the cell and the duration relative to the clip.
    """
    c = cfg.n_cells
    chosen: list[Optional[Event]] = [None] * c
    collisions = 0
    unassignable = 0
    for event in events:
        i = assign_cell(event, cfg, mode)
        if i is None:
            unassignable += 1
            continue
        incumbent = chosen[i]
        if incumbent is None:
            chosen[i] = event
        else:
            collisions += 1
            if event.length > incumbent.length:
                chosen[i] = event

    assigned = np.zeros(c, dtype=bool)
    keyword = np.full(c, -1, dtype=np.int64)
    center = np.zeros(c, dtype=np.float64)
    width = np.zeros(c, dtype=np.float64)
    for i, event in enumerate(chosen):
        if event is None:
            continue
        start, _ = cell_span(cfg, i)
        assigned[i] = True
        keyword[i] = event.keyword
        center[i] = (event.midpoint - start) / cfg.cell_width
        width[i] = event.length / cfg.duration
    return TargetGrid(
        cfg, assigned, keyword, center, width, tuple(chosen), collisions, unassignable
    )


def box_to_interval(cell: int, box: TimingBox, cfg: GridConfig) -> tuple[float, float]:
    """Map a cell-relative box back to absolute seconds, clipped to the clip."""
    start, _ = cell_span(cfg, cell)
    mid = start + box.center * cfg.cell_width
    half = 0.5 * box.width * cfg.duration
    return (max(0.0, mid - half), min(cfg.duration, mid + half))


def iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Intersection over union of two time intervals; 0 when both are empty."""
    if a[0] > a[1] or b[0] > b[1]:
        raise ValueError("interval start must not exceed end")
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0.0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def decode(grid: PredictionGrid, theta: float, cfg: GridConfig) -> list[DetectionRecord]:
    """Keep, per cell, the best keyword/box product if it clears theta.

    Cells are decoded independently; at most one record per cell.  Ties
    resolve to the lowest keyword index, then the lowest box index.
    """
    records = _decode_arrays(
        grid.class_scores[None], grid.box_center[None], grid.box_width[None],
        grid.box_conf[None], theta, cfg,
    )
    return records[0]


def decode_batch(
    class_scores: np.ndarray,
    box_center: np.ndarray,
    box_width: np.ndarray,
    box_conf: np.ndarray,
    theta: float,
    cfg: GridConfig,
) -> list[list[DetectionRecord]]:
    """Decode a stack of grids at once; shapes (n, C, L) and (n, C, B)."""
    return _decode_arrays(class_scores, box_center, box_width, box_conf, theta, cfg)


def _decode_arrays(class_scores, box_center, box_width, box_conf, theta, cfg):
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    k_best, j_best, score = kernels.best_joint_scores(class_scores, box_conf)
    n, c = score.shape
    out: list[list[DetectionRecord]] = []
    for w in range(n):
        dets: list[DetectionRecord] = []
        for i in range(c):
            s = score[w, i]
            if s <= theta:
                continue
            j = j_best[w, i]
            box = TimingBox(box_center[w, i, j], box_width[w, i, j], box_conf[w, i, j])
            start, end = box_to_interval(i, box, cfg)
            dets.append(DetectionRecord(int(k_best[w, i]), start, end, float(s), i))
        out.append(dets)
    return out


# --- detection serialization ------------------------------------------------

DETECTION_CSV_FIELDS = ("utt_id", "keyword", "start_s", "end_s", "score", "cell")


def _detection_row(utt_id: str, det: DetectionRecord, words: Sequence[str]) -> dict:
    return {
        "utt_id": utt_id,
        "keyword": words[det.keyword],
        "start_s": f"{det.start:.4f}",
        "end_s": f"{det.end:.4f}",
        "score": f"{det.score:.6f}",
        "cell": det.cell,
    }


def detections_to_csv(
    tagged: Iterable[tuple[str, DetectionRecord]], words: Sequence[str]
) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=DETECTION_CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for utt_id, det in tagged:
        writer.writerow(_detection_row(utt_id, det, words))
    return buf.getvalue()


def detections_to_jsonl(
    tagged: Iterable[tuple[str, DetectionRecord]], words: Sequence[str]
) -> str:
    lines = []
    for utt_id, det in tagged:
        row = _detection_row(utt_id, det, words)
        row["start_s"] = float(row["start_s"])
        row["end_s"] = float(row["end_s"])
        row["score"] = float(row["score"])
        lines.append(json.dumps(row, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def detections_from_jsonl(text: str, words: Sequence[str]) -> dict[str, list[DetectionRecord]]:
    """Parse decode output back into per-utterance detection lists."""
    index = {w: i for i, w in enumerate(words)}
    by_utt: dict[str, list[DetectionRecord]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        row = json.loads(line)
        try:
            kw = index[row["keyword"]]
        except KeyError:
            raise ValueError(
                f"line {lineno}: keyword {row['keyword']!r} not in the lexicon"
            ) from None
        det = DetectionRecord(
            kw, float(row["start_s"]), float(row["end_s"]),
            float(row["score"]), int(row.get("cell", -1)),
        )
        by_utt.setdefault(row["utt_id"], []).append(det)
    return by_utt
