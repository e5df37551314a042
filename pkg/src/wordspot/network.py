"""Convolutional detector: backbones, head swaps, pretraining, training.

A backbone is a VGG-style conv stack (every conv followed by batch norm
and ReLU), an adaptive average pool, and a small MLP; the head is a
single linear layer whose sigmoid output flattens to a PredictionGrid
(or to class scores during pretraining).  Pool markers in a schedule:
"M" halves both axes, "MF" halves only the frequency axis, preserving
time resolution for localization.

Training, checkpointing, and the batched tensor version of the
detection loss live here too.  The tensor loss mirrors the numpy
reference in `loss` term for term, including responsible-box selection
(first maximal IOU), so the two can be compared exactly in float64.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .features import FeatureConfig
from .grid import GridConfig, PredictionGrid, TargetGrid, decode_batch
from .loss import LOSS_MODES, WIDTH_FLOOR, LossBreakdown, LossWeights
from .metrics import match_corpus, precision_recall_f1

CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass(frozen=True)
class BackboneSpec:
    """Architecture template; input_shape is bound when a model is built."""

    name: str
    conv_schedule: tuple
    fc_widths: tuple[int, ...]
    pool_shape: tuple[int, int]
    dropout: float
    input_shape: Optional[tuple[int, int]] = None

    @property
    def conv_count(self) -> int:
        return sum(1 for item in self.conv_schedule if isinstance(item, int))

    def with_input_shape(self, shape: tuple[int, int]) -> "BackboneSpec":
        return BackboneSpec(
            self.name, self.conv_schedule, self.fc_widths,
            self.pool_shape, self.dropout, tuple(shape),
        )


_VGG19_SCHEDULE = (
    64, 64, "M", 128, 128, "M",
    256, 256, 256, 256, "M",
    512, 512, 512, 512, "M",
    512, 512, 512, 512, "M",
)
_VGG11_SCHEDULE = (64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M")

BACKBONES = {
    "vgg19star": BackboneSpec("vgg19star", _VGG19_SCHEDULE, (4096, 4096), (7, 7), 0.5),
    "vgg11star": BackboneSpec("vgg11star", _VGG11_SCHEDULE, (4096, 4096), (7, 7), 0.5),
    "tiny": BackboneSpec("tiny", (32, "M", 32, "M", 64, "MF", 64, "MF"), (128,), (8, 24), 0.0),
}

assert BACKBONES["vgg19star"].conv_count == 16
assert BACKBONES["vgg11star"].conv_count == 8


def backbone_spec(name: str, input_shape: tuple[int, int],
                  fc_widths: Optional[Sequence[int]] = None) -> BackboneSpec:
    """Look up a registry template and bind it to an input shape."""
    if name not in BACKBONES:
        raise ValueError(f"unknown backbone {name!r}; expected one of {sorted(BACKBONES)}")
    spec = BACKBONES[name].with_input_shape(input_shape)
    if fc_widths is not None:
        spec = BackboneSpec(spec.name, spec.conv_schedule, tuple(int(w) for w in fc_widths),
                            spec.pool_shape, spec.dropout, spec.input_shape)
    return spec


class Detector(nn.Module):
    """Conv trunk + MLP + linear head with a sigmoid over every output."""

    def __init__(self, spec: BackboneSpec, output_dim: int):
        super().__init__()
        if spec.input_shape is None:
            raise ValueError("backbone spec must carry an input shape")
        if output_dim < 1:
            raise ValueError(f"output_dim must be >= 1, got {output_dim}")
        self.spec = spec
        self.output_dim = output_dim

        layers: list[nn.Module] = []
        channels = 1
        for item in spec.conv_schedule:
            if item == "M":
                layers.append(nn.MaxPool2d(kernel_size=2, ceil_mode=True))
            elif item == "MF":
                layers.append(nn.MaxPool2d(kernel_size=(2, 1), ceil_mode=True))
            else:
                layers.append(nn.Conv2d(channels, item, kernel_size=3, padding=1))
                layers.append(nn.BatchNorm2d(item))
                layers.append(nn.ReLU(inplace=True))
                channels = item
        self.convs = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(spec.pool_shape)

        fc_layers: list[nn.Module] = []
        width = channels * spec.pool_shape[0] * spec.pool_shape[1]
        for out_width in spec.fc_widths:
            fc_layers.append(nn.Linear(width, out_width))
            fc_layers.append(nn.ReLU(inplace=True))
            if spec.dropout > 0:
                fc_layers.append(nn.Dropout(spec.dropout))
            width = out_width
        self.fcs = nn.Sequential(*fc_layers)
        self.head = nn.Linear(width, output_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        expected = self.spec.input_shape
        if x.shape[-2:] != torch.Size(expected):
            raise ValueError(f"expected features shaped {expected}, got {tuple(x.shape[-2:])}")
        if x.dim() == 2:
            x = x[None, None]
        elif x.dim() == 3:
            x = x[:, None]
        h = self.convs(x)
        h = self.pool(h).flatten(1)
        h = self.fcs(h)
        return torch.sigmoid(self.head(h))


def build_model(backbone: str, output_dim: int, input_shape: tuple[int, int],
                fc_widths: Optional[Sequence[int]] = None) -> Detector:
    return Detector(backbone_spec(backbone, input_shape, fc_widths), output_dim)


def replace_head(model: Detector, output_dim: int) -> Detector:
    """Swap in a freshly initialized head; the trunk is untouched."""
    model.head = nn.Linear(model.head.in_features, output_dim)
    model.output_dim = output_dim
    return model


def trunk_checksum(model: Detector) -> str:
    """SHA-256 over every non-head parameter and buffer, in name order."""
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        if name.startswith("head."):
            continue
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def predict_batch(model: Detector, features: np.ndarray, batch_size: int = 64):
    """Run inference over (n, F, N) features; returns grid arrays.

    Output: class_scores (n, C?, ...) is left to the caller to reshape;
    here we return the raw (n, output_dim) sigmoid activations as
    float64.
    """
    model.eval()
    outputs = []
    with torch.no_grad():
        for i in range(0, len(features), batch_size):
            batch = torch.as_tensor(features[i : i + batch_size], dtype=torch.float32)
            outputs.append(model(batch).double().numpy())
    if not outputs:
        return np.zeros((0, model.output_dim))
    return np.concatenate(outputs, axis=0)


def vectors_to_grid_arrays(vectors: np.ndarray, cfg: GridConfig):
    """Split (n, output_dim) activations into decode_batch's array layout."""
    n = vectors.shape[0]
    b = cfg.n_boxes
    per_cell = vectors.reshape(n, cfg.n_cells, 3 * b + cfg.n_keywords)
    return (
        np.ascontiguousarray(per_cell[:, :, 3 * b :]),
        np.ascontiguousarray(per_cell[:, :, :b]),
        np.ascontiguousarray(per_cell[:, :, b : 2 * b]),
        np.ascontiguousarray(per_cell[:, :, 2 * b : 3 * b]),
    )


def predict_grid(model: Detector, features: np.ndarray, cfg: GridConfig) -> PredictionGrid:
    vec = predict_batch(model, np.asarray(features)[None])[0]
    return PredictionGrid.from_vector(vec, cfg)


# --- batched tensor loss ------------------------------------------------------


def targets_to_arrays(targets: Sequence[TargetGrid]) -> dict[str, np.ndarray]:
    """Stack TargetGrids into dense arrays for batched loss evaluation."""
    return {
        "assigned": np.stack([t.assigned for t in targets]),
        "keyword": np.stack([np.maximum(t.keyword, 0) for t in targets]),
        "center": np.stack([t.center for t in targets]),
        "width": np.stack([t.width for t in targets]),
    }


def _box_intervals(center: torch.Tensor, width: torch.Tensor, cfg: GridConfig):
    """Absolute (start, end) per (batch, cell, box), clipped to the clip."""
    cell_starts = (
        torch.arange(cfg.n_cells, dtype=center.dtype) * cfg.duration / cfg.n_cells
    ).reshape(1, cfg.n_cells, 1)
    mid = cell_starts + center * cfg.cell_width
    half = 0.5 * width * cfg.duration
    lo = torch.clamp(mid - half, min=0.0)
    hi = torch.clamp(mid + half, max=cfg.duration)
    return lo, hi


def _interval_iou(a_lo, a_hi, b_lo, b_hi):
    inter = torch.clamp(torch.minimum(a_hi, b_hi) - torch.maximum(a_lo, b_lo), min=0.0)
    union = (a_hi - a_lo) + (b_hi - b_lo) - inter
    return torch.where(union > 0, inter / torch.clamp(union, min=1e-300), torch.zeros_like(inter))


def detection_loss_batch(
    outputs: torch.Tensor,
    targets: dict[str, np.ndarray] | dict[str, torch.Tensor],
    cfg: GridConfig,
    weights: LossWeights = LossWeights(),
    mode: str = "yolo",
) -> tuple[torch.Tensor, LossBreakdown]:
    """Batched tensor detection loss; mean over examples of per-example sums.

    Returns (total, breakdown) where the breakdown holds the weighted
    batch-mean value of each term as plain floats.
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    n, c, b = outputs.shape[0], cfg.n_cells, cfg.n_boxes
    if outputs.shape[1] != cfg.output_dim:
        raise ValueError(f"outputs have dim {outputs.shape[1]}, config wants {cfg.output_dim}")
    per_cell = outputs.reshape(n, c, 3 * b + cfg.n_keywords)
    centers = per_cell[:, :, :b]
    widths = per_cell[:, :, b : 2 * b]
    confs = per_cell[:, :, 2 * b : 3 * b]
    classes = per_cell[:, :, 3 * b :]

    dtype = outputs.dtype
    assigned = torch.as_tensor(targets["assigned"]).to(dtype)
    keyword = torch.as_tensor(np.asarray(targets["keyword"])).long()
    t_center = torch.as_tensor(targets["center"]).to(dtype)
    t_width = torch.as_tensor(targets["width"]).to(dtype)

    one_hot = torch.zeros(n, c, cfg.n_keywords, dtype=dtype)
    one_hot.scatter_(2, keyword.unsqueeze(-1), 1.0)

    t_sqrt = torch.sqrt(t_width)
    sq_widths = torch.sqrt(torch.clamp(widths, min=WIDTH_FLOOR))

    if mode == "yolo":
        with torch.no_grad():
            p_lo, p_hi = _box_intervals(centers, widths, cfg)
            t_lo, t_hi = _box_intervals(t_center.unsqueeze(-1), t_width.unsqueeze(-1), cfg)
            ious = _interval_iou(p_lo, p_hi, t_lo, t_hi)
            resp = torch.argmax(ious, dim=2, keepdim=True)  # first max <=> lowest j
        sel_center = torch.gather(centers, 2, resp).squeeze(2)
        sel_sqw = torch.gather(sq_widths, 2, resp).squeeze(2)
        sel_conf = torch.gather(confs, 2, resp).squeeze(2)

        center_t = weights.coord * (assigned * (sel_center - t_center) ** 2).sum(dim=1)
        duration_t = weights.duration * (assigned * (sel_sqw - t_sqrt) ** 2).sum(dim=1)
        obj_t = (assigned * (1.0 - sel_conf) ** 2).sum(dim=1)
        noobj_t = weights.noobj * (
            (confs**2).sum(dim=(1, 2)) - (assigned * sel_conf**2).sum(dim=1)
        )
        cls_t = (assigned.unsqueeze(-1) * (one_hot - classes) ** 2).sum(dim=(1, 2))
    else:
        mask = assigned.unsqueeze(-1)
        center_t = weights.coord * (mask * (centers - t_center.unsqueeze(-1)) ** 2).sum(dim=(1, 2))
        duration_t = weights.duration * (mask * (sq_widths - t_sqrt.unsqueeze(-1)) ** 2).sum(dim=(1, 2))
        obj_t = (mask * (1.0 - confs) ** 2).sum(dim=(1, 2))
        noobj_t = weights.noobj * ((confs**2).sum(dim=(1, 2)) - (mask * confs**2).sum(dim=(1, 2)))
        true_score = torch.gather(classes, 2, keyword.unsqueeze(-1)).squeeze(2)
        cls_t = (assigned * (1.0 - true_score) ** 2).sum(dim=1)

    terms = [t.mean() for t in (center_t, duration_t, obj_t, noobj_t, cls_t)]
    total = terms[0] + terms[1] + terms[2] + terms[3] + terms[4]
    breakdown = LossBreakdown(*(float(t.detach()) for t in terms))
    return total, breakdown


# --- checkpointing ------------------------------------------------------------


def atomic_torch_save(payload: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            torch.save(payload, handle)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(
    path,
    model: Detector,
    grid_cfg: GridConfig,
    feature_cfg: FeatureConfig,
    words: Sequence[str],
    optimizer: Optional[torch.optim.Optimizer] = None,
    epoch: int = 0,
    extra: Optional[dict] = None,
) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "backbone": model.spec.name,
        "input_shape": list(model.spec.input_shape),
        "fc_widths": list(model.spec.fc_widths),
        "output_dim": model.output_dim,
        "grid": asdict(grid_cfg),
        "features": asdict(feature_cfg),
        "lexicon": list(words),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "torch_rng": torch.get_rng_state(),
    }
    if extra:
        payload.update(extra)
    atomic_torch_save(payload, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if "version" not in payload:
        raise ValueError(f"{path}: not a checkpoint (missing version field)")
    if payload["version"] != CHECKPOINT_VERSION:
        raise ValueError(
            f"{path}: checkpoint version {payload['version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    return payload


def model_from_checkpoint(payload: dict) -> tuple[Detector, GridConfig, FeatureConfig, list[str]]:
    grid_cfg = GridConfig(**payload["grid"])
    feature_cfg = FeatureConfig(**payload["features"])
    model = build_model(
        payload["backbone"], payload["output_dim"],
        tuple(payload["input_shape"]), payload["fc_widths"],
    )
    model.load_state_dict(payload["model_state"])
    return model, grid_cfg, feature_cfg, list(payload["lexicon"])


# --- training loops -----------------------------------------------------------


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def pretrain_classifier(
    model: Detector,
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
) -> list[dict]:
    """Squared-error-vs-one-hot classification training; returns history.

    The model's head must already be sized to the number of classes.
    epochs=0 leaves every weight untouched.
    """
    if len(features) == 0:
        raise ValueError("pretraining corpus is empty")
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= model.output_dim:
        raise ValueError("labels must lie in [0, n_classes)")
    x_all = torch.as_tensor(np.asarray(features), dtype=torch.float32)
    one_hot = torch.zeros(len(labels), model.output_dim)
    one_hot[torch.arange(len(labels)), torch.as_tensor(labels).long()] = 1.0

    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    history = []
    for epoch in range(epochs):
        model.train()
        order = _epoch_order(len(labels), seed, epoch)
        total_loss = 0.0
        for i in range(0, len(order), batch_size):
            idx = order[i : i + batch_size]
            out = model(x_all[idx])
            loss = ((out - one_hot[idx]) ** 2).sum(dim=1).mean()
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite pretraining loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach()) * len(idx)
        model.eval()
        with torch.no_grad():
            predicted = model(x_all).argmax(dim=1).numpy()
        accuracy = float(np.mean(predicted == labels))
        history.append(
            {"epoch": epoch, "loss": total_loss / len(labels), "accuracy": accuracy}
        )
    return history


def _validation_f1(model, features, refs_by_utt, utt_ids, cfg, theta):
    vectors = predict_batch(model, features)
    arrays = vectors_to_grid_arrays(vectors, cfg)
    det_lists = decode_batch(*arrays, theta, cfg)
    dets_by_utt = {utt: dets for utt, dets in zip(utt_ids, det_lists)}
    match = match_corpus(dets_by_utt, refs_by_utt)
    return precision_recall_f1(match)[2]


def train_detector(
    model: Detector,
    train_features: np.ndarray,
    train_targets: Sequence[TargetGrid],
    cfg: GridConfig,
    epochs: int,
    weights: LossWeights = LossWeights(),
    mode: str = "yolo",
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
    validation: Optional[tuple[np.ndarray, dict, list[str]]] = None,
    val_theta: float = 0.4,
    log_stream: Optional[io.TextIOBase] = None,
    checkpoint_path=None,
    checkpoint_meta: Optional[dict] = None,
    optimizer_state: Optional[dict] = None,
    start_epoch: int = 0,
) -> list[dict]:
    """Adam training over (features, targets); one JSONL breakdown per step.

    Writes an atomic checkpoint after every epoch when checkpoint_path is
    set (checkpoint_meta supplies grid/feature configs and the lexicon).
    A non-finite loss raises DivergenceError; the last epoch checkpoint
    stays on disk.  Resuming from epoch k with the saved optimizer state
    reproduces the uninterrupted run exactly.
    """
    if len(train_features) != len(train_targets):
        raise ValueError("features and targets differ in length")
    if len(train_targets) == 0:
        raise ValueError("training corpus is empty")
    x_all = torch.as_tensor(np.asarray(train_features), dtype=torch.float32)
    target_arrays = targets_to_arrays(train_targets)

    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)

    history = []
    for epoch in range(start_epoch, epochs):
        model.train()
        order = _epoch_order(len(train_targets), seed, epoch)
        epoch_terms = np.zeros(6)
        for i in range(0, len(order), batch_size):
            idx = order[i : i + batch_size]
            batch_targets = {k: v[idx] for k, v in target_arrays.items()}
            total, breakdown = detection_loss_batch(
                model(x_all[idx]), batch_targets, cfg, weights, mode
            )
            if not torch.isfinite(total):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, step {i // batch_size}: "
                    f"{breakdown.as_dict()}"
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            if log_stream is not None:
                entry = {"epoch": epoch, "step": i // batch_size}
                entry.update(breakdown.as_dict())
                log_stream.write(json.dumps(entry, sort_keys=True) + "\n")
            row = breakdown.as_dict()
            epoch_terms += np.array(
                [row[k] for k in ("center", "duration", "obj_conf", "noobj_conf",
                                  "classification", "total")]
            ) * len(idx)

        n_examples = len(order)
        record = {
            "epoch": epoch,
            "center": epoch_terms[0] / n_examples,
            "duration": epoch_terms[1] / n_examples,
            "obj_conf": epoch_terms[2] / n_examples,
            "noobj_conf": epoch_terms[3] / n_examples,
            "classification": epoch_terms[4] / n_examples,
            "total": epoch_terms[5] / n_examples,
        }
        if validation is not None:
            val_features, refs_by_utt, utt_ids = validation
            record["val_f1"] = _validation_f1(
                model, val_features, refs_by_utt, utt_ids, cfg, val_theta
            )
        history.append(record)
        if log_stream is not None:
            log_stream.write(json.dumps({"epoch_summary": record}, sort_keys=True) + "\n")
        if checkpoint_path is not None:
            meta = dict(checkpoint_meta or {})
            words = meta.pop("lexicon", [])
            grid_cfg = meta.pop("grid_cfg", cfg)
            feature_cfg = meta.pop("feature_cfg", None)
            if feature_cfg is None:
                raise ValueError("checkpoint_meta must include feature_cfg")
            save_checkpoint(
                checkpoint_path, model, grid_cfg, feature_cfg, words,
                optimizer=optimizer, epoch=epoch + 1,
                extra={"history": history, **meta},
            )
    return history
