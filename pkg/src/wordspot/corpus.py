"""Corpus handling: alignments, lexicons, clip extraction, synthesis, noise.

Alignment files are headered CSV (utt_id, word, start, end) with times in
seconds at 4-decimal fixed point.  Clips are fixed-duration windows cut
from source utterances; an event belongs to a window only when its whole
span fits inside, so boundary words are picked up by a neighboring window
when the stride is dense enough.

The synthetic corpus gives every keyword a distinct tone or chirp
template and places events on a 10 ms lattice, so the written alignments
are exact: parsing the 4-decimal CSV reproduces the event times to the
bit.
"""

from __future__ import annotations

import csv
import io
import json
import string
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import chirp as _chirp

from .features import read_wav, write_wav
from .grid import GridConfig

ALIGNMENT_CSV_FIELDS = ("utt_id", "word", "start", "end")
NOISE_KINDS = ("gaussian", "speckle", "babble")

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_word(word: str) -> str:
    """Canonical lexicon form: case-folded, punctuation removed."""
    return word.casefold().translate(_PUNCT_TABLE)


@dataclass(frozen=True)
class AlignmentRecord:
    """One aligned word occurrence in a source utterance."""

    utt_id: str
    word: str
    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(
                f"alignment for {self.word!r} must have start < end, "
                f"got ({self.start}, {self.end})"
            )
        if self.start < 0:
            raise ValueError(f"alignment start must be nonnegative, got {self.start}")


def read_alignment_csv(text: str) -> list[AlignmentRecord]:
    """Parse alignment CSV; malformed rows raise with their line number."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or tuple(reader.fieldnames) != ALIGNMENT_CSV_FIELDS:
        raise ValueError(
            f"line 1: expected header {','.join(ALIGNMENT_CSV_FIELDS)!r}, "
            f"got {reader.fieldnames}"
        )
    records = []
    for row in reader:
        lineno = reader.line_num
        if None in row.values() or None in row or not all(
            row.get(f) not in (None, "") for f in ALIGNMENT_CSV_FIELDS
        ):
            raise ValueError(f"line {lineno}: expected 4 fields {ALIGNMENT_CSV_FIELDS}")
        try:
            start = float(row["start"])
            end = float(row["end"])
        except ValueError:
            raise ValueError(
                f"line {lineno}: start/end must be numeric, "
                f"got ({row['start']!r}, {row['end']!r})"
            ) from None
        try:
            records.append(AlignmentRecord(row["utt_id"], row["word"], start, end))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return records


def write_alignment_csv(records: Iterable[AlignmentRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ALIGNMENT_CSV_FIELDS)
    for rec in records:
        writer.writerow([rec.utt_id, rec.word, f"{rec.start:.4f}", f"{rec.end:.4f}"])
    return buf.getvalue()


class Lexicon:
    """Ordered closed keyword set with a word <-> index bijection."""

    def __init__(self, words: Sequence[str]):
        words = tuple(words)
        if not words:
            raise ValueError("lexicon must contain at least one word")
        if len(set(words)) != len(words):
            raise ValueError("lexicon words must be unique")
        self.words = words
        self._index = {w: i for i, w in enumerate(words)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Lexicon) and self.words == other.words

    def index(self, word: str) -> int:
        return self._index[word]

    def word(self, i: int) -> str:
        return self.words[i]

    def to_text(self) -> str:
        """One word per line; the line number is the index."""
        return "\n".join(self.words) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Lexicon":
        return cls([line for line in text.splitlines() if line])

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Lexicon":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def build_lexicon(records: Iterable[AlignmentRecord], size: int) -> Lexicon:
    """The `size` most frequent normalized words; ties break lexicographically."""
    if size < 1:
        raise ValueError(f"lexicon size must be >= 1, got {size}")
    counts = Counter()
    for rec in records:
        word = normalize_word(rec.word)
        if word:
            counts[word] += 1
    if len(counts) < size:
        raise ValueError(
            f"corpus has only {len(counts)} distinct words, need {size}"
        )
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Lexicon([w for w, _ in ranked[:size]])


@dataclass(frozen=True)
class ClipEvent:
    """A lexicon word occurrence in clip-local time."""

    word: str
    start: float
    end: float


@dataclass(frozen=True)
class ClipExample:
    """One fixed-duration training/eval window cut from a source utterance."""

    utt_id: str
    source: str
    offset: float
    events: tuple[ClipEvent, ...]


def extract_clips(
    utt_id: str,
    records: Sequence[AlignmentRecord],
    source_duration: float,
    cfg: GridConfig,
    stride: float,
    lexicon: Lexicon,
) -> list[ClipExample]:
    """Cut one utterance into windows of length cfg.duration at `stride`.

    A word is attached to a window only when its full span lies inside it
    and its normalized form is in the lexicon; times are rebased to the
    window.  Sources shorter than one window yield a single window (the
    audio loader zero-pads).
    """
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    if source_duration < 0:
        raise ValueError("source duration must be nonnegative")
    bad = sorted({rec.utt_id for rec in records} - {utt_id})
    if bad:
        raise ValueError(f"records for {bad} mixed into utterance {utt_id!r}")

    span = cfg.duration
    if source_duration <= span:
        n_windows = 1
    else:
        n_windows = 1 + int(np.floor((source_duration - span) / stride + 1e-9))

    clips = []
    for w in range(n_windows):
        offset = w * stride
        events = []
        for rec in records:
            if rec.start < offset or rec.end > offset + span:
                continue
            word = normalize_word(rec.word)
            if word not in lexicon:
                continue
            events.append(ClipEvent(word, rec.start - offset, rec.end - offset))
        name = f"{utt_id}_{w:03d}" if n_windows > 1 else utt_id
        clips.append(ClipExample(name, utt_id, offset, tuple(events)))
    return clips


# --- clip manifest I/O --------------------------------------------------------


@dataclass(frozen=True)
class ManifestClip:
    """One clip as recorded in clips.json; audio path is manifest-relative."""

    utt_id: str
    audio: str
    offset: float
    split: str
    events: tuple[ClipEvent, ...]


def clips_manifest_to_json(sample_rate: int, duration: float,
                           clips: Sequence[ManifestClip]) -> str:
    doc = {
        "sample_rate": sample_rate,
        "duration": duration,
        "clips": [
            {
                "utt_id": c.utt_id,
                "audio": c.audio,
                "offset": c.offset,
                "split": c.split,
                "events": [
                    {"word": e.word, "start": e.start, "end": e.end} for e in c.events
                ],
            }
            for c in clips
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def clips_manifest_from_json(text: str) -> tuple[int, float, list[ManifestClip]]:
    doc = json.loads(text)
    for key in ("sample_rate", "duration", "clips"):
        if key not in doc:
            raise ValueError(f"clip manifest missing {key!r}")
    clips = []
    for entry in doc["clips"]:
        events = tuple(
            ClipEvent(e["word"], float(e["start"]), float(e["end"]))
            for e in entry["events"]
        )
        clips.append(
            ManifestClip(
                entry["utt_id"], entry["audio"], float(entry["offset"]),
                entry.get("split", "train"), events,
            )
        )
    return int(doc["sample_rate"]), float(doc["duration"]), clips


# --- synthetic oracle corpus --------------------------------------------------

SYNTH_SAMPLE_RATE = 8000
_LATTICE_PER_SECOND = 100  # event boundaries sit on a 10 ms lattice
_EVENT_AMPLITUDE = 0.5
_NOISE_FLOOR = 0.01
_EDGE_MARGIN_H = 2  # hundredths of a second kept clear at clip edges
_EVENT_GAP_H = 5  # minimum spacing between events, hundredths


@dataclass(frozen=True)
class SynthClip:
    utt_id: str
    waveform: np.ndarray
    events: tuple[AlignmentRecord, ...]
    split: str


def keyword_word(i: int) -> str:
    return f"kw{i:03d}"


def _template_duration_h(i: int, n_keywords: int) -> int:
    """Template length in hundredths of a second, spread over 15..30."""
    if n_keywords == 1:
        return 22
    return 15 + round(15 * i / (n_keywords - 1))


def _template_frequency(i: int, n_keywords: int) -> float:
    """Distinct center frequencies well inside the 8 kHz Nyquist band."""
    return 400.0 + 3000.0 * i / max(n_keywords, 2)


def render_template(i: int, n_keywords: int, sample_rate: int = SYNTH_SAMPLE_RATE) -> np.ndarray:
    """Render keyword i's signature: even indices are tones, odd are chirps."""
    dur_h = _template_duration_h(i, n_keywords)
    n = dur_h * sample_rate // _LATTICE_PER_SECOND
    t = np.arange(n) / sample_rate
    f = _template_frequency(i, n_keywords)
    if i % 2 == 0:
        wave = np.sin(2 * np.pi * f * t)
    else:
        wave = _chirp(t, f0=0.8 * f, t1=t[-1], f1=1.2 * f, method="linear")
    ramp = min(int(0.005 * sample_rate), n // 4)
    env = np.ones(n)
    if ramp > 0:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = fade
        env[-ramp:] = fade[::-1]
    return _EVENT_AMPLITUDE * wave * env


def synth_split(clip_index: int) -> str:
    return "test" if clip_index % 5 == 4 else "train"


def synth_corpus(
    n_clips: int,
    n_keywords: int,
    cfg: GridConfig,
    seed: int,
    sample_rate: int = SYNTH_SAMPLE_RATE,
) -> tuple[list[SynthClip], list[str]]:
    """Generate clips with exactly-known alignments, reproducible from seed.

    Each clip holds 0-2 non-overlapping keyword events over a low noise
    floor; the first n_keywords clips are guaranteed to contain their
    index's keyword so every lexicon entry occurs at least once.
    """
    if n_keywords < 1:
        raise ValueError("n_keywords must be >= 1")
    if n_clips < 0:
        raise ValueError("n_clips must be >= 0")
    rng = np.random.default_rng(seed)
    words = [keyword_word(i) for i in range(n_keywords)]
    templates = [render_template(i, n_keywords, sample_rate) for i in range(n_keywords)]
    durations_h = [_template_duration_h(i, n_keywords) for i in range(n_keywords)]
    clip_h = round(cfg.duration * _LATTICE_PER_SECOND)
    clip_samples = clip_h * sample_rate // _LATTICE_PER_SECOND

    clips = []
    for c in range(n_clips):
        utt_id = f"clip_{c:04d}"
        n_events = int(rng.integers(0, 3))
        keywords = [int(rng.integers(0, n_keywords)) for _ in range(n_events)]
        if c < n_keywords:
            if not keywords:
                keywords = [c]
            else:
                keywords[0] = c

        placed: list[tuple[int, int, int]] = []  # (keyword, start_h, end_h)
        for k in keywords:
            dur_h = durations_h[k]
            lo = _EDGE_MARGIN_H
            hi = clip_h - _EDGE_MARGIN_H - dur_h
            if hi < lo:
                continue
            for _ in range(30):
                start_h = int(rng.integers(lo, hi + 1))
                end_h = start_h + dur_h
                if all(
                    end_h + _EVENT_GAP_H <= s or e + _EVENT_GAP_H <= start_h
                    for _, s, e in placed
                ):
                    placed.append((k, start_h, end_h))
                    break

        placed.sort(key=lambda p: p[1])
        waveform = _NOISE_FLOOR * rng.standard_normal(clip_samples)
        events = []
        for k, start_h, end_h in placed:
            a = start_h * sample_rate // _LATTICE_PER_SECOND
            waveform[a : a + len(templates[k])] += templates[k]
            events.append(
                AlignmentRecord(
                    utt_id,
                    words[k],
                    start_h / _LATTICE_PER_SECOND,
                    end_h / _LATTICE_PER_SECOND,
                )
            )
        clips.append(SynthClip(utt_id, waveform, tuple(events), synth_split(c)))
    return clips, words


def prepare_clips(
    alignments: Sequence[AlignmentRecord],
    audio_paths: dict[str, str],
    durations: dict[str, float],
    cfg: GridConfig,
    stride: float,
    lexicon: Lexicon,
) -> list[ManifestClip]:
    """Window every manifest utterance and attach its contained events.

    Splits are assigned per source utterance (every fifth id in sorted
    order goes to test) so windows of one recording never straddle the
    train/test boundary.
    """
    by_utt: dict[str, list[AlignmentRecord]] = {}
    for rec in alignments:
        by_utt.setdefault(rec.utt_id, []).append(rec)
    orphan = sorted(set(by_utt) - set(audio_paths))
    if orphan:
        raise ValueError(f"alignments reference utterances missing from the manifest: {orphan}")

    out = []
    for idx, utt_id in enumerate(sorted(audio_paths)):
        split = "test" if idx % 5 == 4 else "train"
        for clip in extract_clips(
            utt_id, by_utt.get(utt_id, []), durations[utt_id], cfg, stride, lexicon
        ):
            out.append(
                ManifestClip(clip.utt_id, audio_paths[utt_id], clip.offset, split, clip.events)
            )
    return out


def audio_manifest_to_json(sample_rate: int, utterances: dict[str, str]) -> str:
    return json.dumps(
        {"sample_rate": sample_rate, "utterances": utterances}, sort_keys=True, indent=1
    ) + "\n"


def audio_manifest_from_json(text: str) -> tuple[int, dict[str, str]]:
    doc = json.loads(text)
    if "utterances" not in doc or "sample_rate" not in doc:
        raise ValueError("audio manifest must carry sample_rate and utterances")
    return int(doc["sample_rate"]), dict(doc["utterances"])


def write_synth_corpus(
    out_dir,
    n_clips: int,
    n_keywords: int,
    cfg: GridConfig,
    seed: int,
    sample_rate: int = SYNTH_SAMPLE_RATE,
) -> tuple[list[ManifestClip], Lexicon]:
    """Generate and persist a synthetic corpus under out_dir.

    Writes wavs/, manifest.json, alignments.csv, lexicon.txt, and
    clips.json; the clip manifest is produced through the same windowing
    path `prepare` uses, so re-preparing the written files reproduces it.
    """
    out_dir = Path(out_dir)
    (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
    clips, words = synth_corpus(n_clips, n_keywords, cfg, seed, sample_rate)

    records: list[AlignmentRecord] = []
    audio_paths: dict[str, str] = {}
    durations: dict[str, float] = {}
    for clip in clips:
        rel = f"wavs/{clip.utt_id}.wav"
        write_wav(out_dir / rel, clip.waveform, sample_rate)
        audio_paths[clip.utt_id] = rel
        durations[clip.utt_id] = len(clip.waveform) / sample_rate
        records.extend(clip.events)

    (out_dir / "alignments.csv").write_text(write_alignment_csv(records), encoding="utf-8")
    (out_dir / "manifest.json").write_text(
        audio_manifest_to_json(sample_rate, audio_paths), encoding="utf-8"
    )
    try:
        lexicon = build_lexicon(records, n_keywords)
    except ValueError:
        # Too few clips for every keyword to occur; fall back to template order.
        lexicon = Lexicon(words)
    lexicon.save(out_dir / "lexicon.txt")

    manifest_clips = prepare_clips(records, audio_paths, durations, cfg, cfg.duration, lexicon)
    (out_dir / "clips.json").write_text(
        clips_manifest_to_json(sample_rate, cfg.duration, manifest_clips), encoding="utf-8"
    )
    return manifest_clips, lexicon


# --- noise injection ----------------------------------------------------------

_BABBLE_CACHE: dict[int, np.ndarray] = {}


def _babble_texture() -> np.ndarray:
    """The packaged band-limited noise texture, normalized to unit RMS."""
    if 0 not in _BABBLE_CACHE:
        from importlib import resources

        with resources.as_file(
            resources.files("wordspot").joinpath("data/babble.wav")
        ) as path:
            _, samples = read_wav(path)
        rms = float(np.sqrt(np.mean(samples**2)))
        _BABBLE_CACHE[0] = samples / rms
    return _BABBLE_CACHE[0]


def _unit_rms(x: np.ndarray) -> np.ndarray:
    rms = float(np.sqrt(np.mean(x**2)))
    return x / rms if rms > 0 else x


def inject_noise(waveform: np.ndarray, kind: str, alpha: float, seed) -> np.ndarray:
    """Additive or multiplicative noise at relative amplitude alpha.

    gaussian: x + alpha*n with n white at unit RMS; speckle: x + alpha*x*n
    (silence stays silent); babble: x + alpha*b with b the stored texture
    looped from a seeded start offset at unit RMS.  alpha=0 returns the
    input unchanged.  Samples stay in the float domain and may exceed
    [-1, 1]; PCM serialization clips at write time.
    """
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    x = np.asarray(waveform, dtype=np.float64)
    if alpha == 0:
        return x.copy()
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        noise = _unit_rms(rng.standard_normal(x.shape))
        return x + alpha * noise
    if kind == "speckle":
        return x + alpha * x * rng.standard_normal(x.shape)
    texture = _babble_texture()
    start = int(rng.integers(0, len(texture)))
    reps = 1 + (start + x.size) // len(texture)
    tiled = np.tile(texture, reps)[start : start + x.size]
    return x + alpha * tiled
