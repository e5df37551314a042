"""Waveform I/O and spectro-temporal feature extraction.

Clips are forced to a fixed duration, framed with a Hann window, and
turned into non-negative magnitude spectra (optionally log-compressed).
Shapes depend on the config alone, never on the samples, so the network
input geometry is fixed per run.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window


class AudioFormatError(ValueError):
    """Unreadable audio or audio whose format disagrees with the config."""


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


@dataclass(frozen=True)
class FeatureConfig:
    """STFT front-end settings; `fft_size=0` picks the next power of two.

    `clip_duration` must equal the grid's clip duration; it fixes the
    frame count and therefore the network input shape.
    """

    sample_rate: int
    window_len: float = 0.020
    hop_len: float = 0.010
    fft_size: int = 0
    log_compress: bool = True
    normalize: bool = True
    clip_duration: float = 1.0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not self.window_len >= self.hop_len > 0:
            raise ValueError("need window_len >= hop_len > 0")
        if self.clip_duration <= 0:
            raise ValueError("clip_duration must be positive")
        if self.fft_size == 0:
            object.__setattr__(self, "fft_size", _next_pow2(self.window_samples))
        if self.fft_size < self.window_samples:
            raise ValueError(
                f"fft_size {self.fft_size} smaller than the {self.window_samples}-sample window"
            )

    @property
    def window_samples(self) -> int:
        return round(self.window_len * self.sample_rate)

    @property
    def hop_samples(self) -> int:
        return round(self.hop_len * self.sample_rate)

    @property
    def clip_samples(self) -> int:
        return round(self.clip_duration * self.sample_rate)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def n_frames(self) -> int:
        return 1 + (self.clip_samples - self.window_samples) // self.hop_samples

    @property
    def feature_shape(self) -> tuple[int, int]:
        return (self.n_bins, self.n_frames)

    def with_duration(self, clip_duration: float) -> "FeatureConfig":
        return replace(self, clip_duration=clip_duration)


def fit_duration(waveform: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Zero-pad or truncate at the tail to exactly `clip_samples`."""
    waveform = np.asarray(waveform, dtype=np.float64)
    if waveform.ndim != 1 or waveform.size == 0:
        raise ValueError("waveform must be a non-empty 1-D array")
    n = cfg.clip_samples
    if waveform.size >= n:
        return waveform[:n]
    out = np.zeros(n, dtype=np.float64)
    out[: waveform.size] = waveform
    return out


def stft_features(waveform: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Hann-windowed magnitude spectrogram, (n_bins, n_frames).

    Frames start every `hop_samples` and only full windows are taken, so
    n_frames = 1 + (len - window) // hop.  With log compression entries
    are log(1 + magnitude); either way all entries are >= 0.
    """
    waveform = np.asarray(waveform, dtype=np.float64)
    win = cfg.window_samples
    hop = cfg.hop_samples
    if waveform.ndim != 1 or waveform.size < win:
        raise ValueError(f"waveform must hold at least one {win}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(waveform, win)[::hop]
    window = get_window("hann", win, fftbins=True)
    spectrum = np.fft.rfft(frames * window, n=cfg.fft_size, axis=1)
    mag = np.abs(spectrum).T  # (n_bins, n_frames)
    if cfg.log_compress:
        mag = np.log1p(mag)
    return mag


def normalize_features(feats: np.ndarray) -> np.ndarray:
    """Per-utterance zero-mean unit-variance scaling (all-zero safe)."""
    mean = feats.mean()
    std = feats.std()
    return (feats - mean) / (std + 1e-8)


def extract(waveform: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Full front end: duration fit, STFT, optional normalization."""
    feats = stft_features(fit_duration(waveform, cfg), cfg)
    if cfg.normalize:
        feats = normalize_features(feats)
    return feats


# --- WAV I/O -----------------------------------------------------------------

_INT_SCALES = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def read_wav(path: str | Path, expected_rate: int | None = None) -> tuple[int, np.ndarray]:
    """Read a mono PCM/float WAV as float64 samples in [-1, 1].

    A sample rate differing from `expected_rate` is an error; this
    library never resamples silently.
    """
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise AudioFormatError(f"{path}: unreadable WAV ({exc})") from exc
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.size == 0:
        raise AudioFormatError(f"{path}: empty audio")
    if expected_rate is not None and rate != expected_rate:
        raise AudioFormatError(
            f"{path}: sample rate {rate} does not match the configured {expected_rate}"
        )
    if data.dtype in _INT_SCALES:
        samples = data.astype(np.float64) / _INT_SCALES[data.dtype]
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")
    return rate, samples


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """Write float samples as 16-bit PCM, clipping to [-1, 1]."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    wavfile.write(str(path), sample_rate, pcm)


def wav_duration(path: str | Path) -> float:
    rate, samples = read_wav(path)
    return samples.size / rate
