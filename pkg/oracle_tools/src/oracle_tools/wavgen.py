"""Deterministic shared test WAVs for fixture generation.

Self-contained speech-ish and noise signals (modulated harmonic bursts,
filtered noise) plus constructed delayed copies with known lags. These are
inputs shared with the main package's tests, not oracle outputs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import lfilter

FS = 16_000


def speechish(duration_s: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x0AC1E])
    n = int(duration_s * FS)
    out = np.zeros(n)
    pos = 0
    while pos < n:
        seg = min(int(rng.uniform(0.1, 0.3) * FS), n - pos)
        kind = rng.integers(0, 5)
        t = np.arange(seg) / FS
        if kind < 3:  # voiced burst
            f0 = rng.uniform(90, 220)
            sig = sum(np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 6.28)) / k
                      for k in range(1, 9))
            w0 = 2 * np.pi * rng.uniform(400, 2200) / FS
            sig = lfilter([1.0], [1.0, -2 * 0.96 * np.cos(w0), 0.96**2], sig)
            sig *= rng.uniform(0.4, 1.0)
        elif kind == 3:  # fricative-ish
            sig = lfilter([1.0, -0.9], [1.0], rng.standard_normal(seg)) * 0.08
        else:  # pause
            sig = np.zeros(seg)
        ramp = min(seg // 4, 200)
        if ramp:
            sig[:ramp] *= np.linspace(0, 1, ramp)
            sig[-ramp:] *= np.linspace(1, 0, ramp)
        out[pos : pos + seg] = sig
        pos += seg
    rms = np.sqrt(np.mean(out**2))
    return (0.1 / rms) * out if rms > 0 else out


def pinkish(duration_s: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x90126])
    w = rng.standard_normal(int(duration_s * FS))
    w = lfilter([0.05, -0.095, 0.05], [1.0, -1.8, 0.81], w)
    return 0.05 * w / np.sqrt(np.mean(w**2))


def shifted(x: np.ndarray, lag: int) -> np.ndarray:
    if lag > 0:
        return np.concatenate([np.zeros(lag), x[:-lag]])
    if lag < 0:
        return np.concatenate([x[-lag:], np.zeros(-lag)])
    return x.copy()


GCC_LAGS = (100, -37)


def write_test_wavs(out_dir) -> dict:
    """Write the shared WAV set; returns {name: path}. Deterministic."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    speech_a = speechish(3.2, seed=1)
    speech_b = speechish(3.2, seed=2)
    noise = pinkish(3.2, seed=3)
    snr_db = 10.0
    scale = np.sqrt(np.mean(speech_a**2) / np.mean(noise**2)) * 10 ** (-snr_db / 20)
    files = {
        "speech_a": speech_a,
        "speech_b": speech_b,
        "noisy_a_snr10": speech_a + scale * noise,
        "tone_1k": 0.5 * np.sin(2 * np.pi * 1000 * np.arange(FS) / FS),
        "impulse": np.concatenate([[1.0], np.zeros(2047)]),
    }
    for lag in GCC_LAGS:
        tag = f"shift_{'p' if lag >= 0 else 'm'}{abs(lag)}"
        files[tag] = shifted(speech_a, lag)
    paths = {}
    for name, data in files.items():
        p = out_dir / f"{name}.wav"
        wavfile.write(p, FS, data.astype(np.float32))
        paths[name] = str(p)
    return paths
