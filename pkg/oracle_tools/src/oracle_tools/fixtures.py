"""Cross-implementation fixture generation (schema v1).

For each shared WAV the fixture stores the reference STFT's shape, its
first/last three frames and a hash of the full matrix; ESTOI scores for
selected (clean, degraded) pairs; and GCC-PHAT lags for the constructed
shifts. Regeneration under the pinned library versions must reproduce the
committed JSON byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path

import numpy as np
import scipy

from oracle_tools.reference import (
    load_wav,
    reference_estoi,
    reference_gcc_phat,
    reference_stft,
)
from oracle_tools.wavgen import GCC_LAGS

SCHEMA_VERSION = 1

ESTOI_PAIRS = (
    ("speech_a", "speech_a"),
    ("speech_a", "noisy_a_snr10"),
    ("speech_a", "speech_b"),
)

STFT_WAVS = ("speech_a", "tone_1k", "impulse")


def _frames_to_json(frames: np.ndarray) -> list:
    return [[[float(v.real), float(v.imag)] for v in col] for col in frames.T]


def make_fixtures(wav_dir, out_json) -> dict:
    wav_dir = Path(wav_dir)
    wavs = {p.stem: p for p in sorted(wav_dir.glob("*.wav"))}
    if not wavs:
        raise FileNotFoundError(f"no fixture WAVs in {wav_dir}")

    stft_block = {}
    for name in STFT_WAVS:
        spec = reference_stft(load_wav(wavs[name]))
        stft_block[name] = {
            "shape": list(spec.shape),
            "first_frames": _frames_to_json(spec[:, :3]),
            "last_frames": _frames_to_json(spec[:, -3:]),
            "matrix_sha256": hashlib.sha256(
                np.ascontiguousarray(spec).tobytes()
            ).hexdigest(),
        }

    estoi_block = [
        {
            "clean": clean,
            "degraded": degraded,
            "score": float(reference_estoi(load_wav(wavs[clean]), load_wav(wavs[degraded]))),
        }
        for clean, degraded in ESTOI_PAIRS
    ]

    gcc_block = []
    for lag in GCC_LAGS:
        tag = f"shift_{'p' if lag >= 0 else 'm'}{abs(lag)}"
        est = reference_gcc_phat(load_wav(wavs[tag]), load_wav(wavs["speech_a"]), 512)
        gcc_block.append(
            {"mic": tag, "ref": "speech_a", "max_lag": 512, "constructed_lag": lag,
             "lag": int(est)}
        )

    fixtures = {
        "schema_version": SCHEMA_VERSION,
        "pinned": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "stft": stft_block,
        "estoi": estoi_block,
        "gcc_phat": gcc_block,
    }
    out_json = Path(out_json)
    out_json.parent.mkdir(parents=True, exist_ok=True)
    with open(out_json, "w") as f:
        json.dump(fixtures, f, indent=2, sort_keys=True)
        f.write("\n")
    return fixtures
