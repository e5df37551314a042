"""Command-line surface: prepare, synth, pretrain, train, evaluate, decode,
noise-eval.

Configuration comes from an optional TOML file mirrored by command-line
flags; flags win.  Reports are JSON, curves are CSV, and every output is
written atomically (temp file + rename) so a failed run never leaves a
partial file under its final name.  All randomness descends from the
single --seed value, which is echoed into every JSON report.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import corpus as corpus_mod
from . import evaluate as eval_mod
from . import network as net
from .features import AudioFormatError, FeatureConfig, read_wav
from .grid import (
    GridConfig,
    decode_batch,
    detections_from_jsonl,
    detections_to_csv,
    detections_to_jsonl,
    encode_targets,
)
from .loss import LOSS_MODES, LossWeights
from .metrics import DEFAULT_THETA_GRID, TwvConfig

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class CliError(Exception):
    """User-facing failure; message goes to stderr, exit code attached."""

    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "adam"
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = GridConfig()
    features: FeatureConfig = FeatureConfig(sample_rate=16000)
    loss: LossWeights = LossWeights()
    loss_mode: str = "yolo"
    backbone: str = "tiny"
    optimizer: OptimizerConfig = OptimizerConfig()
    paths: dict = field(default_factory=dict)


def _build_section(cls, table: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(table) - known)
    if unknown:
        raise CliError(f"config [{where}] has unknown keys: {unknown}")
    return cls(**table)


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as handle:
            doc = tomllib.load(handle)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"{path}: invalid TOML ({exc})") from None

    known_sections = {"grid", "features", "loss", "backbone", "optimizer", "paths"}
    unknown = sorted(set(doc) - known_sections)
    if unknown:
        raise CliError(f"config has unknown sections: {unknown}")

    loss_table = dict(doc.get("loss", {}))
    mode = loss_table.pop("mode", "yolo")
    if mode not in LOSS_MODES:
        raise CliError(f"config [loss] mode must be one of {LOSS_MODES}, got {mode!r}")
    backbone = doc.get("backbone", "tiny")
    if isinstance(backbone, dict):
        raise CliError("config key 'backbone' must be a string, not a section")
    try:
        return RunConfig(
            grid=_build_section(GridConfig, doc.get("grid", {}), "grid"),
            features=_build_section(
                FeatureConfig, {"sample_rate": 16000, **doc.get("features", {})}, "features"
            ),
            loss=_build_section(LossWeights, loss_table, "loss"),
            loss_mode=mode,
            backbone=backbone,
            optimizer=_build_section(OptimizerConfig, doc.get("optimizer", {}), "optimizer"),
            paths=dict(doc.get("paths", {})),
        )
    except (TypeError, ValueError) as exc:
        raise CliError(f"{path}: {exc}") from None


# --- small I/O helpers ----------------------------------------------------------


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report(path, report: dict) -> None:
    write_text_atomic(path, json.dumps(report, sort_keys=True, indent=1) + "\n")


def curve_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([row[c] for c in columns])
    return buf.getvalue()


def _load_clips(path) -> tuple[int, float, list]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CliError(f"clip manifest not found: {path}") from None
    try:
        return corpus_mod.clips_manifest_from_json(text)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"{path}: bad clip manifest ({exc})") from None


def _load_lexicon(path) -> corpus_mod.Lexicon:
    try:
        return corpus_mod.Lexicon.load(path)
    except FileNotFoundError:
        raise CliError(f"lexicon file not found: {path}") from None
    except ValueError as exc:
        raise CliError(f"{path}: bad lexicon ({exc})") from None


def _select_split(clips, split: str):
    if split == "all":
        return list(clips)
    chosen = [c for c in clips if c.split == split]
    return chosen


def _load_checkpoint(path):
    try:
        payload = net.load_checkpoint(path)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {path}") from None
    except (ValueError, RuntimeError) as exc:
        raise CliError(f"{path}: cannot load checkpoint ({exc})") from None
    return payload


def _check_lexicon_match(clips, lexicon) -> None:
    words = {corpus_mod.normalize_word(e.word) for c in clips for e in c.events}
    missing = sorted(w for w in words if w not in lexicon)
    if missing:
        raise CliError(
            f"lexicon mismatch: clip events use words outside the lexicon: {missing[:10]}"
        )


# --- subcommands ----------------------------------------------------------------


def cmd_prepare(args) -> int:
    cfg = load_config(args.config)
    grid_cfg = cfg.grid
    out_dir = Path(args.out)

    try:
        manifest_text = Path(args.manifest).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CliError(f"manifest not found: {args.manifest}") from None
    try:
        sample_rate, audio_paths = corpus_mod.audio_manifest_from_json(manifest_text)
    except (ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"{args.manifest}: bad audio manifest ({exc})") from None

    try:
        align_text = Path(args.alignments).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CliError(f"alignment file not found: {args.alignments}") from None
    try:
        records = corpus_mod.read_alignment_csv(align_text)
    except ValueError as exc:
        raise CliError(f"{args.alignments}: {exc}") from None

    if not audio_paths:
        print("warning: empty audio manifest; writing an empty clip manifest", file=sys.stderr)
        write_text_atomic(
            out_dir / "clips.json",
            corpus_mod.clips_manifest_to_json(sample_rate, grid_cfg.duration, []),
        )
        return EXIT_OK

    manifest_dir = Path(args.manifest).parent
    durations = {}
    for utt_id, rel in sorted(audio_paths.items()):
        try:
            rate, samples = read_wav(manifest_dir / rel, expected_rate=sample_rate)
        except (FileNotFoundError, AudioFormatError) as exc:
            raise CliError(f"{utt_id}: {exc}") from None
        durations[utt_id] = len(samples) / rate

    size = args.lexicon_size if args.lexicon_size else grid_cfg.n_keywords
    try:
        lexicon = corpus_mod.build_lexicon(records, size)
    except ValueError as exc:
        raise CliError(str(exc)) from None

    stride = args.stride if args.stride else grid_cfg.duration / 2
    clips = corpus_mod.prepare_clips(records, audio_paths, durations, grid_cfg, stride, lexicon)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_text_atomic(out_dir / "lexicon.txt", lexicon.to_text())
    write_text_atomic(
        out_dir / "clips.json",
        corpus_mod.clips_manifest_to_json(sample_rate, grid_cfg.duration, clips),
    )
    print(f"wrote {out_dir / 'clips.json'} ({len(clips)} clips, lexicon {len(lexicon)})")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    grid_cfg = replace(cfg.grid, n_keywords=args.n_keywords)
    out_dir = Path(args.out)
    try:
        clips, lexicon = corpus_mod.write_synth_corpus(
            out_dir, args.n_clips, args.n_keywords, grid_cfg, args.seed
        )
    except OSError as exc:
        raise CliError(f"cannot write corpus under {out_dir}: {exc}", EXIT_RUNTIME) from None
    print(f"wrote {len(clips)} clips, lexicon {len(lexicon)} -> {out_dir}")
    return EXIT_OK


def _features_and_grid_for_clips(cfg: RunConfig, sample_rate: int, duration: float):
    if abs(duration - cfg.grid.duration) > 1e-9:
        raise CliError(
            f"clip manifest duration {duration} does not match configured "
            f"grid duration {cfg.grid.duration}"
        )
    feature_cfg = replace(
        cfg.features, sample_rate=sample_rate, fft_size=0, clip_duration=duration
    )
    return feature_cfg


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    sample_rate, duration, clips = _load_clips(args.clips)
    lexicon = _load_lexicon(args.lexicon)
    _check_lexicon_match(clips, lexicon)
    feature_cfg = _features_and_grid_for_clips(cfg, sample_rate, duration)

    train_clips = [c for c in _select_split(clips, "train") if len(c.events) == 1]
    if not train_clips:
        raise CliError("no single-event training clips to pretrain on")
    skipped = len(_select_split(clips, "train")) - len(train_clips)
    if skipped:
        print(f"note: skipping {skipped} clips without exactly one event", file=sys.stderr)

    seed = args.seed if args.seed is not None else cfg.optimizer.seed
    torch.manual_seed(seed)
    manifest_dir = Path(args.clips).parent
    waves = eval_mod.load_waveforms(manifest_dir, train_clips, feature_cfg)
    features = eval_mod.cached_features(waves, feature_cfg)
    labels = np.array(
        [lexicon.index(corpus_mod.normalize_word(c.events[0].word)) for c in train_clips]
    )

    model = net.build_model(args.backbone, len(lexicon), feature_cfg.feature_shape)
    epochs = args.epochs if args.epochs is not None else cfg.optimizer.epochs
    try:
        history = net.pretrain_classifier(
            model, features, labels, epochs,
            lr=cfg.optimizer.lr, batch_size=cfg.optimizer.batch_size, seed=seed,
        )
    except net.DivergenceError as exc:
        raise CliError(f"pretraining diverged: {exc}", EXIT_RUNTIME) from None

    net.save_checkpoint(
        args.out, model, cfg.grid, feature_cfg, lexicon.words,
        epoch=len(history), extra={"kind": "classifier", "history": history, "seed": seed},
    )
    accuracy = history[-1]["accuracy"] if history else None
    print(f"wrote {args.out} (final accuracy: {accuracy})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    sample_rate, duration, clips = _load_clips(args.clips)
    lexicon = _load_lexicon(args.lexicon)
    _check_lexicon_match(clips, lexicon)
    feature_cfg = _features_and_grid_for_clips(cfg, sample_rate, duration)
    grid_cfg = replace(cfg.grid, n_keywords=len(lexicon))

    seed = args.seed if args.seed is not None else cfg.optimizer.seed
    epochs = args.epochs if args.epochs is not None else cfg.optimizer.epochs
    lr = args.lr if args.lr is not None else cfg.optimizer.lr
    mode = args.mode or cfg.loss_mode
    torch.manual_seed(seed)

    manifest_dir = Path(args.clips).parent
    train_clips = _select_split(clips, "train")
    val_clips = _select_split(clips, "test")
    if not train_clips:
        raise CliError("clip manifest has no training split")

    waves = eval_mod.load_waveforms(manifest_dir, train_clips, feature_cfg)
    features = eval_mod.cached_features(waves, feature_cfg)
    targets = [
        encode_targets(eval_mod.clip_events(c, lexicon), grid_cfg) for c in train_clips
    ]
    validation = None
    if val_clips:
        val_waves = eval_mod.load_waveforms(manifest_dir, val_clips, feature_cfg)
        val_features = eval_mod.cached_features(val_waves, feature_cfg)
        validation = (
            val_features,
            eval_mod.refs_by_utt(val_clips, lexicon),
            [c.utt_id for c in val_clips],
        )

    start_epoch = 0
    optimizer_state = None
    if args.resume:
        payload = _load_checkpoint(args.out)
        model, grid_cfg, feature_cfg, words = net.model_from_checkpoint(payload)
        if tuple(words) != lexicon.words:
            raise CliError("checkpoint lexicon does not match --lexicon")
        start_epoch = payload["epoch"]
        optimizer_state = payload["optimizer_state"]
        torch.set_rng_state(payload["torch_rng"])
    elif args.init_from:
        payload = _load_checkpoint(args.init_from)
        model, _, ckpt_feat, _ = net.model_from_checkpoint(payload)
        if tuple(ckpt_feat.feature_shape) != feature_cfg.feature_shape:
            raise CliError(
                f"pretrained checkpoint expects features {ckpt_feat.feature_shape}, "
                f"corpus yields {feature_cfg.feature_shape}"
            )
        net.replace_head(model, grid_cfg.output_dim)
    else:
        model = net.build_model(args.backbone, grid_cfg.output_dim, feature_cfg.feature_shape)

    log_path = Path(args.out).with_suffix(".log.jsonl")
    meta = {
        "grid_cfg": grid_cfg,
        "feature_cfg": feature_cfg,
        "lexicon": list(lexicon.words),
        "seed": seed,
        "mode": mode,
        "weights": asdict(cfg.loss),
    }
    log_mode = "a" if args.resume else "w"
    with open(log_path, log_mode, encoding="utf-8") as log_stream:
        try:
            history = net.train_detector(
                model, features, targets, grid_cfg, epochs,
                weights=cfg.loss, mode=mode, lr=lr,
                batch_size=cfg.optimizer.batch_size, seed=seed,
                validation=validation, val_theta=args.theta if args.theta is not None else 0.4,
                log_stream=log_stream, checkpoint_path=args.out, checkpoint_meta=meta,
                optimizer_state=optimizer_state, start_epoch=start_epoch,
            )
        except net.DivergenceError as exc:
            print(f"error: {exc}", file=sys.stderr)
            print("the last completed epoch's checkpoint is retained", file=sys.stderr)
            return EXIT_RUNTIME

    if epochs <= start_epoch:
        # Nothing to do (already at the target epoch); still leave a checkpoint.
        net.save_checkpoint(
            args.out, model, grid_cfg, feature_cfg, lexicon.words,
            epoch=start_epoch, extra={"seed": seed, "mode": mode, "history": []},
        )
    final_f1 = history[-1].get("val_f1") if history else None
    print(f"wrote {args.out} (epochs: {max(epochs, start_epoch)}, val F1: {final_f1})")
    return EXIT_OK


def _report_theta_args(args):
    if args.sweep and args.theta is not None:
        raise CliError("--theta and --sweep are mutually exclusive")
    if args.theta is not None:
        return args.theta
    return None  # sweep by default


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    sample_rate, duration, clips = _load_clips(args.clips)
    clips = _select_split(clips, args.split)
    if not clips:
        raise CliError(f"no clips in split {args.split!r}")

    theta = _report_theta_args(args)
    seed = args.seed if args.seed is not None else cfg.optimizer.seed

    if args.detections:
        if not args.lexicon:
            raise CliError("--detections needs --lexicon to map words to indices")
        lexicon = _load_lexicon(args.lexicon)
        _check_lexicon_match(clips, lexicon)
        grid_cfg = replace(cfg.grid, n_keywords=len(lexicon))
        try:
            text = Path(args.detections).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise CliError(f"detections file not found: {args.detections}") from None
        dets = detections_from_jsonl(text, lexicon.words)
        dets = {utt: dets.get(utt, []) for utt in (c.utt_id for c in clips)}
        refs = eval_mod.refs_by_utt(clips, lexicon)
        report = eval_mod.detection_report(dets, refs, lexicon, duration, theta)
    else:
        if not args.checkpoint:
            raise CliError("evaluate needs --checkpoint (or --detections)")
        payload = _load_checkpoint(args.checkpoint)
        model, grid_cfg, feature_cfg, words = net.model_from_checkpoint(payload)
        lexicon = corpus_mod.Lexicon(words)
        _check_lexicon_match(clips, lexicon)
        if feature_cfg.sample_rate != sample_rate:
            raise CliError(
                f"checkpoint expects {feature_cfg.sample_rate} Hz audio, "
                f"clip manifest is {sample_rate} Hz"
            )
        manifest_dir = Path(args.clips).parent
        waves = eval_mod.load_waveforms(manifest_dir, clips, feature_cfg)
        features = eval_mod.cached_features(waves, feature_cfg)
        report = eval_mod.evaluate_detector(
            model, features, clips, lexicon, grid_cfg, theta
        )

    report["seed"] = seed
    report["split"] = args.split
    write_report(args.out, report)
    if args.curves:
        write_text_atomic(
            args.curves,
            curve_csv(report["theta_curve"], ("theta", "precision", "recall", "f1")),
        )
    print(
        f"wrote {args.out} (theta {report['theta']}: F1 {report['f1']:.4f}, "
        f"actual {report['actual_accuracy']:.4f})"
    )
    return EXIT_OK


def cmd_decode(args) -> int:
    payload = _load_checkpoint(args.checkpoint)
    model, grid_cfg, feature_cfg, words = net.model_from_checkpoint(payload)
    theta = args.theta if args.theta is not None else 0.4
    stride = grid_cfg.duration / 2

    tagged = []
    failures = []
    for audio_path in args.audio:
        try:
            rate, samples = read_wav(audio_path, expected_rate=feature_cfg.sample_rate)
        except (FileNotFoundError, AudioFormatError) as exc:
            failures.append(audio_path)
            print(f"error: {exc}", file=sys.stderr)
            continue
        file_duration = len(samples) / rate
        offsets = [0.0]
        t = stride
        while t + grid_cfg.duration <= file_duration + 1e-9:
            offsets.append(t)
            t += stride
        windows = []
        for offset in offsets:
            start = round(offset * rate)
            segment = samples[start : start + feature_cfg.clip_samples]
            windows.append(eval_mod.fit_duration(segment, feature_cfg))
        features = eval_mod.features_from_waveforms(np.stack(windows), feature_cfg)
        vectors = net.predict_batch(model, features)
        arrays = net.vectors_to_grid_arrays(vectors, grid_cfg)
        det_lists = decode_batch(*arrays, theta, grid_cfg)
        file_dets = []
        for offset, dets in zip(offsets, det_lists):
            for det in dets:
                file_dets.append(
                    replace(det, start=det.start + offset, end=det.end + offset)
                )
        name = Path(audio_path).name
        tagged.extend((name, det) for det in file_dets)

    if failures and len(failures) == len(args.audio):
        print("error: no input file could be decoded", file=sys.stderr)
        return EXIT_RUNTIME
    tagged.sort(key=lambda t: (t[0], t[1].start, t[1].end, t[1].keyword))

    if args.format == "csv":
        text = detections_to_csv(tagged, words)
    else:
        text = detections_to_jsonl(tagged, words)
    if args.out:
        write_text_atomic(args.out, text)
        print(f"wrote {args.out} ({len(tagged)} detections)")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_noise_eval(args) -> int:
    cfg = load_config(args.config)
    sample_rate, duration, clips = _load_clips(args.clips)
    clips = _select_split(clips, args.split)
    if not clips:
        raise CliError(f"no clips in split {args.split!r}")
    try:
        alphas = sorted(float(a) for a in args.alphas.split(","))
    except ValueError:
        raise CliError(f"--alphas must be a comma-separated float list, got {args.alphas!r}") from None

    payload = _load_checkpoint(args.checkpoint)
    model, grid_cfg, feature_cfg, words = net.model_from_checkpoint(payload)
    lexicon = corpus_mod.Lexicon(words)
    _check_lexicon_match(clips, lexicon)
    if feature_cfg.sample_rate != sample_rate:
        raise CliError(
            f"checkpoint expects {feature_cfg.sample_rate} Hz audio, "
            f"clip manifest is {sample_rate} Hz"
        )

    seed = args.seed if args.seed is not None else cfg.optimizer.seed
    theta = args.theta if args.theta is not None else 0.4
    manifest_dir = Path(args.clips).parent
    waves = eval_mod.load_waveforms(manifest_dir, clips, feature_cfg)
    try:
        rows = eval_mod.noise_robustness_curve(
            model, waves, clips, lexicon, grid_cfg, feature_cfg,
            args.kind, alphas, seed, theta,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None
    for row in rows:
        row["seed"] = seed
        row["theta"] = theta
    write_text_atomic(
        args.out,
        curve_csv(rows, ("alpha", "precision", "recall", "f1", "actual_accuracy", "theta", "seed")),
    )
    print(f"wrote {args.out} ({len(rows)} rows)")
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wordspot",
        description="Keyword spotting and localization on fixed-duration audio clips.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, theta=False):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="master RNG seed")
        if theta:
            p.add_argument("--theta", type=float, default=None, help="detection threshold")

    p = sub.add_parser("prepare", help="build lexicon + clip manifest from alignments")
    common(p)
    p.add_argument("--manifest", required=True, help="audio manifest JSON")
    p.add_argument("--alignments", required=True, help="alignment CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--lexicon-size", type=int, default=None)
    p.add_argument("--stride", type=float, default=None, help="window stride in seconds")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate the synthetic oracle corpus")
    common(p)
    p.add_argument("--n-clips", type=int, required=True)
    p.add_argument("--n-keywords", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth, seed_default=7)

    p = sub.add_parser("pretrain", help="train a keyword classifier backbone")
    common(p)
    p.add_argument("--clips", required=True, help="clip manifest JSON")
    p.add_argument("--lexicon", required=True, help="lexicon text file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--backbone", default="tiny", choices=sorted(net.BACKBONES))
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train the detector")
    common(p, theta=True)
    p.add_argument("--clips", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--backbone", default="tiny", choices=sorted(net.BACKBONES))
    p.add_argument("--init-from", default=None, help="pretrained checkpoint to adapt")
    p.add_argument("--resume", action="store_true", help="continue from --out")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--mode", choices=LOSS_MODES, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a clip manifest")
    common(p, theta=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--clips", required=True)
    p.add_argument("--split", default="test", choices=("train", "test", "all"))
    p.add_argument("--sweep", action="store_true", help="pick theta maximizing F1")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--curves", default=None, help="optional theta-curve CSV path")
    p.add_argument("--detections", default=None, help="score these JSONL detections instead")
    p.add_argument("--lexicon", default=None, help="lexicon (needed with --detections)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("decode", help="emit detections for audio files")
    common(p, theta=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="output path (stdout when omitted)")
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.add_argument("audio", nargs="+", help="WAV files")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("noise-eval", help="noise robustness curve")
    common(p, theta=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clips", required=True)
    p.add_argument("--split", default="test", choices=("train", "test", "all"))
    p.add_argument("--kind", required=True, choices=corpus_mod.NOISE_KINDS)
    p.add_argument("--alphas", required=True, help="comma-separated noise strengths")
    p.add_argument("--out", required=True, help="curve CSV path")
    p.set_defaults(func=cmd_noise_eval)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is None and hasattr(args, "seed"):
        args.seed = getattr(args, "seed_default", None)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
