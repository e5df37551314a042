"""Model-in-the-loop evaluation: reports, sweeps, and noise curves.

Loads clip waveforms from a clip manifest, runs batched inference, and
turns decoded detections into the full measurement report (precision,
recall, F1, Actual accuracy, mean IOU, ATWV/MTWV, threshold curve).
Feature matrices can be cached under $WORDSPOT_CACHE_DIR, keyed by a
content hash of the audio and the feature configuration.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import Lexicon, ManifestClip, inject_noise, normalize_word
from .features import FeatureConfig, extract, fit_duration, read_wav
from .grid import DetectionRecord, Event, GridConfig, decode_batch
from .metrics import (
    DEFAULT_THETA_GRID,
    TwvConfig,
    actual_accuracy,
    atwv,
    filter_by_theta,
    match_corpus,
    mean_iou,
    mtwv,
    precision_recall_f1,
    sweep_threshold,
)
from .network import Detector, predict_batch, vectors_to_grid_arrays

CACHE_ENV_VAR = "WORDSPOT_CACHE_DIR"


def clip_events(clip: ManifestClip, lexicon: Lexicon) -> list[Event]:
    """Manifest events as grid Events (lexicon indices)."""
    events = []
    for ev in clip.events:
        word = normalize_word(ev.word)
        if word not in lexicon:
            raise ValueError(f"{clip.utt_id}: event word {ev.word!r} not in the lexicon")
        events.append(Event(lexicon.index(word), ev.start, ev.end))
    return events


def refs_by_utt(clips: Sequence[ManifestClip], lexicon: Lexicon) -> dict[str, list[Event]]:
    return {clip.utt_id: clip_events(clip, lexicon) for clip in clips}


def load_waveform(manifest_dir, clip: ManifestClip, feature_cfg: FeatureConfig) -> np.ndarray:
    """Read the clip's slice of its source audio, padded/cut to length."""
    rate, samples = read_wav(
        Path(manifest_dir) / clip.audio, expected_rate=feature_cfg.sample_rate
    )
    start = round(clip.offset * rate)
    if start > len(samples):
        raise ValueError(f"{clip.utt_id}: offset {clip.offset} beyond the source audio")
    return fit_duration(samples[start : start + feature_cfg.clip_samples], feature_cfg)


def load_waveforms(manifest_dir, clips: Sequence[ManifestClip],
                   feature_cfg: FeatureConfig) -> np.ndarray:
    if not clips:
        return np.zeros((0, feature_cfg.clip_samples))
    return np.stack([load_waveform(manifest_dir, clip, feature_cfg) for clip in clips])


def features_from_waveforms(waveforms: np.ndarray, feature_cfg: FeatureConfig) -> np.ndarray:
    """(n, samples) float waveforms -> (n, F, N) float32 feature stack."""
    if len(waveforms) == 0:
        return np.zeros((0,) + feature_cfg.feature_shape, dtype=np.float32)
    return np.stack([extract(w, feature_cfg) for w in waveforms]).astype(np.float32)


def _cache_key(waveforms: np.ndarray, feature_cfg: FeatureConfig) -> str:
    digest = hashlib.sha256()
    digest.update(json.dumps(asdict(feature_cfg), sort_keys=True).encode())
    digest.update(np.ascontiguousarray(waveforms).tobytes())
    return digest.hexdigest()


def cached_features(waveforms: np.ndarray, feature_cfg: FeatureConfig) -> np.ndarray:
    """features_from_waveforms with an optional on-disk cache."""
    cache_dir = os.environ.get(CACHE_ENV_VAR)
    if not cache_dir:
        return features_from_waveforms(waveforms, feature_cfg)
    path = Path(cache_dir) / f"features-{_cache_key(waveforms, feature_cfg)}.npy"
    if path.exists():
        return np.load(path)
    features = features_from_waveforms(waveforms, feature_cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npy")
    np.save(tmp, features)
    os.replace(tmp, path)
    return features


def decode_detections(
    model: Detector,
    features: np.ndarray,
    utt_ids: Sequence[str],
    grid_cfg: GridConfig,
    theta: float = 0.0,
) -> dict[str, list[DetectionRecord]]:
    """Batched forward + decode; theta=0 keeps everything scoreable."""
    vectors = predict_batch(model, features)
    arrays = vectors_to_grid_arrays(vectors, grid_cfg)
    det_lists = decode_batch(*arrays, theta, grid_cfg)
    return {utt: dets for utt, dets in zip(utt_ids, det_lists)}


def detection_report(
    dets_by_utt: dict[str, list[DetectionRecord]],
    refs: dict[str, list[Event]],
    lexicon: Lexicon,
    duration: float,
    theta: Optional[float] = None,
    theta_grid: Sequence[float] = DEFAULT_THETA_GRID,
    twv_cfg: Optional[TwvConfig] = None,
) -> dict:
    """Build the full measurement report from raw (theta=0) detections.

    theta=None sweeps the grid for the F1-maximizing threshold; a fixed
    theta skips the choice but still reports the curve.
    """
    if twv_cfg is None:
        twv_cfg = TwvConfig(total_speech_seconds=max(len(refs), 1) * duration)

    best_theta, curve = sweep_threshold(dets_by_utt, refs, theta_grid)
    chosen = best_theta if theta is None else theta
    at_theta = filter_by_theta(dets_by_utt, chosen)
    match = match_corpus(at_theta, refs)
    precision, recall, f1 = precision_recall_f1(match)

    per_keyword: dict[str, dict[str, int]] = {}

    def slot(k: int) -> dict[str, int]:
        return per_keyword.setdefault(lexicon.word(k), {"tp": 0, "fp": 0, "fn": 0, "n_true": 0})

    for det, _ in match.true_positives:
        slot(det.keyword)["tp"] += 1
    for det in match.false_positives:
        slot(det.keyword)["fp"] += 1
    for ref in match.false_negatives:
        slot(ref.keyword)["fn"] += 1
    for ref_list in refs.values():
        for ref in ref_list:
            slot(ref.keyword)["n_true"] += 1

    mtwv_theta, mtwv_value, twv_curve = mtwv(dets_by_utt, refs, twv_cfg, theta_grid)
    return {
        "n_utterances": len(refs),
        "theta": chosen,
        "swept": theta is None,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "actual_accuracy": actual_accuracy(at_theta, refs),
        "mean_iou_matched": mean_iou(at_theta, refs, "matched_only"),
        "mean_iou_oracle": mean_iou(at_theta, refs, "oracle_assignment"),
        "atwv": atwv(dets_by_utt, refs, chosen, twv_cfg),
        "mtwv": mtwv_value,
        "mtwv_theta": mtwv_theta,
        "counts": dict(zip(("tp", "fp", "fn"), match.counts)),
        "per_keyword": per_keyword,
        "theta_curve": [
            {"theta": t, "precision": p, "recall": r, "f1": f} for t, p, r, f in curve
        ],
        "twv_curve": [{"theta": t, "atwv": v} for t, v in twv_curve],
        "twv": asdict(twv_cfg),
    }


def evaluate_detector(
    model: Detector,
    features: np.ndarray,
    clips: Sequence[ManifestClip],
    lexicon: Lexicon,
    grid_cfg: GridConfig,
    theta: Optional[float] = None,
    theta_grid: Sequence[float] = DEFAULT_THETA_GRID,
    twv_cfg: Optional[TwvConfig] = None,
) -> dict:
    utt_ids = [clip.utt_id for clip in clips]
    dets = decode_detections(model, features, utt_ids, grid_cfg, theta=0.0)
    refs = refs_by_utt(clips, lexicon)
    return detection_report(
        dets, refs, lexicon, grid_cfg.duration, theta, theta_grid, twv_cfg
    )


def noise_robustness_curve(
    model: Detector,
    waveforms: np.ndarray,
    clips: Sequence[ManifestClip],
    lexicon: Lexicon,
    grid_cfg: GridConfig,
    feature_cfg: FeatureConfig,
    kind: str,
    alphas: Sequence[float],
    seed: int,
    theta: float = 0.4,
) -> list[dict]:
    """Evaluate at a fixed threshold under increasing noise strength.

    Rows are fully deterministic in (seed, kind, alphas): clip i at
    alphas[a] is perturbed with the stream seeded [seed, a, i].  An
    alpha of 0 evaluates the untouched waveforms.
    """
    if list(alphas) != sorted(alphas):
        raise ValueError("alphas must be sorted ascending")
    utt_ids = [clip.utt_id for clip in clips]
    refs = refs_by_utt(clips, lexicon)
    rows = []
    for a, alpha in enumerate(alphas):
        noisy = np.stack(
            [inject_noise(w, kind, alpha, seed=[seed, a, i]) for i, w in enumerate(waveforms)]
        ) if len(waveforms) else waveforms
        features = features_from_waveforms(noisy, feature_cfg)
        dets = decode_detections(model, features, utt_ids, grid_cfg, theta=0.0)
        at_theta = filter_by_theta(dets, theta)
        precision, recall, f1 = precision_recall_f1(match_corpus(at_theta, refs))
        rows.append(
            {
                "alpha": alpha,
                "precision": precision,
                "recall": recall,
                "f1": f1,
                "actual_accuracy": actual_accuracy(at_theta, refs),
            }
        )
    return rows
