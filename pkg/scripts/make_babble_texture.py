"""Regenerate the packaged babble noise texture.

Band-limited (300-3000 Hz) gaussian noise with a slow multi-rate
amplitude modulation, which reads as a crowd-murmur surrogate.  The
output is committed at src/wordspot/data/babble.wav; rerunning with the
same seed reproduces it byte-for-byte.
"""

from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfiltfilt

from wordspot.features import write_wav

SAMPLE_RATE = 8000
DURATION = 2.0
SEED = 20240817


def main() -> None:
    rng = np.random.default_rng(SEED)
    n = int(DURATION * SAMPLE_RATE)
    raw = rng.standard_normal(n)
    sos = butter(4, [300, 3000], btype="bandpass", fs=SAMPLE_RATE, output="sos")
    band = sosfiltfilt(sos, raw)

    t = np.arange(n) / SAMPLE_RATE
    env = np.ones(n)
    for rate in (2.3, 4.1, 6.7):
        phase = rng.uniform(0, 2 * np.pi)
        env *= 1.0 + 0.35 * np.sin(2 * np.pi * rate * t + phase)
    band *= env

    band /= np.sqrt(np.mean(band**2))
    out = Path(__file__).resolve().parents[1] / "src" / "wordspot" / "data" / "babble.wav"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_wav(out, 0.3 * band, SAMPLE_RATE)
    print(f"wrote {out} ({n} samples at {SAMPLE_RATE} Hz)")


if __name__ == "__main__":
    main()
