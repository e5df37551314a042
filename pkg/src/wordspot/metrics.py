"""Detection scoring: matching, F1, threshold sweep, IOU, and TWV.

A detection counts as a true positive when its interval midpoint falls
inside (closed interval) an unmatched reference span of the same
keyword; matching is greedy in descending score and one-to-one.  All
corpus-level figures pool counts across utterances before computing
ratios.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .grid import DetectionRecord, Event, iou

DEFAULT_THETA_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass
class MatchResult:
    """One-to-one detection/reference bookkeeping for one scoring pass."""

    true_positives: list[tuple[DetectionRecord, Event]]
    false_positives: list[DetectionRecord]
    false_negatives: list[Event]

    @property
    def counts(self) -> tuple[int, int, int]:
        return (len(self.true_positives), len(self.false_positives), len(self.false_negatives))

    def merge(self, other: "MatchResult") -> "MatchResult":
        return MatchResult(
            self.true_positives + other.true_positives,
            self.false_positives + other.false_positives,
            self.false_negatives + other.false_negatives,
        )


def _midpoint_in_span(det: DetectionRecord, ref: Event) -> bool:
    return ref.start <= det.midpoint <= ref.end


def match_detections(
    dets: Sequence[DetectionRecord], refs: Sequence[Event]
) -> MatchResult:
    """Greedily match detections (descending score) to same-keyword refs.

    Each detection claims at most one unmatched reference whose span
    contains the detection's midpoint; leftovers become false positives
    and false negatives.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    claimed = [False] * len(refs)
    tps: list[tuple[DetectionRecord, Event]] = []
    fps: list[DetectionRecord] = []
    for i in order:
        det = dets[i]
        hit = None
        for r, ref in enumerate(refs):
            if claimed[r] or ref.keyword != det.keyword:
                continue
            if _midpoint_in_span(det, ref):
                hit = r
                break
        if hit is None:
            fps.append(det)
        else:
            claimed[hit] = True
            tps.append((det, refs[hit]))
    fns = [ref for r, ref in enumerate(refs) if not claimed[r]]
    return MatchResult(tps, fps, fns)


def match_corpus(
    dets_by_utt: Mapping[str, Sequence[DetectionRecord]],
    refs_by_utt: Mapping[str, Sequence[Event]],
) -> MatchResult:
    """Match each utterance independently and pool the buckets."""
    result = MatchResult([], [], [])
    for utt in sorted(set(dets_by_utt) | set(refs_by_utt)):
        part = match_detections(dets_by_utt.get(utt, ()), refs_by_utt.get(utt, ()))
        result = result.merge(part)
    return result


def precision_recall_f1(match: MatchResult) -> tuple[float, float, float]:
    tp, fp, fn = match.counts
    return prf_from_counts(tp, fp, fn)


def prf_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, and their harmonic mean; 0/0 ratios are 0."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r, f_score(p, r)


def f_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def filter_by_theta(
    dets_by_utt: Mapping[str, Sequence[DetectionRecord]], theta: float
) -> dict[str, list[DetectionRecord]]:
    """Keep detections scoring strictly above theta."""
    return {
        utt: [d for d in dets if d.score > theta] for utt, dets in dets_by_utt.items()
    }


def sweep_threshold(
    dets_by_utt: Mapping[str, Sequence[DetectionRecord]],
    refs_by_utt: Mapping[str, Sequence[Event]],
    thetas: Sequence[float] = DEFAULT_THETA_GRID,
) -> tuple[float, list[tuple[float, float, float, float]]]:
    """Re-match at every threshold; returns (best_theta, rows).

    Rows are (theta, precision, recall, f1); ties on F1 go to the
    smallest theta.
    """
    if not thetas:
        raise ValueError("theta grid must be nonempty")
    if list(thetas) != sorted(thetas):
        raise ValueError("theta grid must be sorted ascending")
    curve = []
    best_theta, best_f1 = None, -1.0
    for theta in thetas:
        match = match_corpus(filter_by_theta(dets_by_utt, theta), refs_by_utt)
        p, r, f1 = precision_recall_f1(match)
        curve.append((theta, p, r, f1))
        if f1 > best_f1:
            best_theta, best_f1 = theta, f1
    return best_theta, curve


def actual_accuracy(
    dets_by_utt: Mapping[str, Sequence[DetectionRecord]],
    refs_by_utt: Mapping[str, Sequence[Event]],
) -> float:
    """Fraction of references hit by a same-keyword detection midpoint.

    Each detection is usable once (greedy by score); an empty reference
    set scores 0.
    """
    hit = 0
    total = 0
    for utt in sorted(set(refs_by_utt)):
        refs = refs_by_utt[utt]
        total += len(refs)
        match = match_detections(dets_by_utt.get(utt, ()), refs)
        hit += len(match.true_positives)
    return hit / total if total else 0.0


IOU_MODES = ("matched_only", "oracle_assignment")


def mean_iou(
    dets_by_utt: Mapping[str, Sequence[DetectionRecord]],
    refs_by_utt: Mapping[str, Sequence[Event]],
    mode: str = "matched_only",
) -> Optional[float]:
    """Average interval IOU between detections and references.

    matched_only averages over matched pairs; oracle_assignment pairs
    every reference with its best same-keyword detection regardless of
    score.  Returns None when no pairs exist.
    """
    if mode not in IOU_MODES:
        raise ValueError(f"unknown IOU mode {mode!r}")
    values = []
    for utt in sorted(set(refs_by_utt)):
        refs = refs_by_utt[utt]
        dets = dets_by_utt.get(utt, ())
        if mode == "matched_only":
            match = match_detections(dets, refs)
            for det, ref in match.true_positives:
                values.append(iou((det.start, det.end), (ref.start, ref.end)))
        else:
            for ref in refs:
                candidates = [d for d in dets if d.keyword == ref.keyword]
                if not candidates:
                    continue
                values.append(
                    max(iou((d.start, d.end), (ref.start, ref.end)) for d in candidates)
                )
    if not values:
        return None
    return float(np.mean(values))


@dataclass(frozen=True)
class TwvConfig:
    """Term-weighted-value parameters (NIST STD 2006 convention).

    beta is the false-alarm weight (cost/value ratio 0.1 at a target
    prior of 1e-4 gives 999.9); the false-alarm denominator counts one
    trial per second of speech.
    """

    total_speech_seconds: float
    beta: float = 999.9
    p_target: float = 1e-4

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0 < self.p_target < 1:
            raise ValueError(f"p_target must lie in (0, 1), got {self.p_target}")
        if self.total_speech_seconds <= 0:
            raise ValueError("total_speech_seconds must be positive")


def _twv_counts(
    dets_by_utt: Mapping[str, Sequence[DetectionRecord]],
    refs_by_utt: Mapping[str, Sequence[Event]],
    theta: float,
) -> dict[int, tuple[int, int, int]]:
    """Per-keyword (TP, FP, N_true) at the given threshold."""
    match = match_corpus(filter_by_theta(dets_by_utt, theta), refs_by_utt)
    counts: dict[int, list[int]] = {}

    def slot(k: int) -> list[int]:
        return counts.setdefault(k, [0, 0, 0])

    for det, _ in match.true_positives:
        slot(det.keyword)[0] += 1
    for det in match.false_positives:
        slot(det.keyword)[1] += 1
    for refs in refs_by_utt.values():
        for ref in refs:
            slot(ref.keyword)[2] += 1
    return {k: (tp, fp, nt) for k, (tp, fp, nt) in counts.items()}


def atwv(
    dets_by_utt: Mapping[str, Sequence[DetectionRecord]],
    refs_by_utt: Mapping[str, Sequence[Event]],
    theta: float,
    cfg: TwvConfig,
) -> Optional[float]:
    """1 - mean over keywords of (P_miss + beta * P_FA) at threshold theta.

    Keywords that never occur in the references are excluded; if none
    remain the value is undefined (None).
    """
    counts = _twv_counts(dets_by_utt, refs_by_utt, theta)
    terms = []
    for k in sorted(counts):
        tp, fp, n_true = counts[k]
        if n_true == 0:
            continue
        p_miss = 1.0 - tp / n_true
        p_fa = fp / (cfg.total_speech_seconds - n_true)
        terms.append(p_miss + cfg.beta * p_fa)
    if not terms:
        return None
    return 1.0 - float(np.mean(terms))


def mtwv(
    dets_by_utt: Mapping[str, Sequence[DetectionRecord]],
    refs_by_utt: Mapping[str, Sequence[Event]],
    cfg: TwvConfig,
    thetas: Sequence[float] = DEFAULT_THETA_GRID,
) -> tuple[Optional[float], Optional[float], list[tuple[float, Optional[float]]]]:
    """Max ATWV over the threshold grid; ties go to the smallest theta.

    Returns (best_theta, value, curve); best_theta and value are None
    when every grid point is undefined.
    """
    if not thetas:
        raise ValueError("theta grid must be nonempty")
    curve = []
    best_theta, best = None, None
    for theta in thetas:
        value = atwv(dets_by_utt, refs_by_utt, theta, cfg)
        curve.append((theta, value))
        if value is not None and (best is None or value > best):
            best_theta, best = theta, value
    return best_theta, best, curve
