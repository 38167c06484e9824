"""Objective evaluation: ESTOI, SNR/ERLE measures, tables and ranking.

ESTOI follows the extended short-time objective intelligibility algorithm:
both signals are resampled to 10 kHz, silent frames (40 dB below the loudest
clean frame) are removed, a 15-band one-third-octave decomposition from
150 Hz feeds 384 ms segments whose row- then column-normalized band
matrices are correlated and averaged.

PESQ, LPS, AECMOS and DNSMOS are intentionally not computed here (licensed
or model-based); MetricRow reserves slots so externally computed values can
be merged from JSON and ranked alongside.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.stats import rankdata

from handsfree.dsp import Waveform, resample
from handsfree.errors import ConfigError, DataError

ESTOI_FS = 10_000
ESTOI_FRAME = 256
ESTOI_HOP = 128
ESTOI_NFFT = 512
ESTOI_BANDS = 15
ESTOI_MIN_FREQ = 150.0
ESTOI_SEG = 30
DYN_RANGE_DB = 40.0
_EPS = np.finfo(np.float64).eps


def _hann_sym(n: int) -> np.ndarray:
    # endpoint-free symmetric Hann, the STOI-family analysis window
    return np.hanning(n + 2)[1:-1]


def _frame(x: np.ndarray, framelen: int, hop: int) -> np.ndarray:
    n = (len(x) - framelen) // hop + 1
    if n < 1:
        return np.empty((0, framelen))
    return np.lib.stride_tricks.sliding_window_view(x, framelen)[:: hop][:n]


def remove_silent_frames(
    clean: np.ndarray, degraded: np.ndarray, dyn_range_db: float = DYN_RANGE_DB
) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames 40 dB below the loudest clean frame; rebuild by overlap-add."""
    win = _hann_sym(ESTOI_FRAME)
    xf = _frame(clean, ESTOI_FRAME, ESTOI_HOP) * win
    yf = _frame(degraded, ESTOI_FRAME, ESTOI_HOP) * win
    if xf.shape[0] == 0:
        raise DataError("input too short for silence analysis")
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    mask = energy > energy.max() - dyn_range_db
    xk, yk = xf[mask], yf[mask]
    n_out = (xk.shape[0] - 1) * ESTOI_HOP + ESTOI_FRAME if xk.shape[0] else 0
    xs = np.zeros(n_out)
    ys = np.zeros(n_out)
    for i in range(xk.shape[0]):
        sl = slice(i * ESTOI_HOP, i * ESTOI_HOP + ESTOI_FRAME)
        xs[sl] += xk[i]
        ys[sl] += yk[i]
    return xs, ys


def third_octave_matrix(fs: int, nfft: int, n_bands: int, min_freq: float) -> np.ndarray:
    """Binary FFT-bin -> one-third-octave band matrix (nearest-bin edges)."""
    f = np.linspace(0.0, fs / 2.0, nfft // 2 + 1)
    k = np.arange(n_bands, dtype=np.float64)
    cf = min_freq * 2.0 ** (k / 3.0)
    fl = cf * 2.0 ** (-1.0 / 6.0)
    fh = cf * 2.0 ** (1.0 / 6.0)
    obm = np.zeros((n_bands, f.size))
    for j in range(n_bands):
        lo = int(np.argmin(np.square(f - fl[j])))
        hi = int(np.argmin(np.square(f - fh[j])))
        obm[j, lo:hi] = 1.0
    return obm


def _band_envelopes(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    win = _hann_sym(ESTOI_FRAME)
    frames = _frame(x, ESTOI_FRAME, ESTOI_HOP) * win
    spec = np.fft.rfft(frames, n=ESTOI_NFFT, axis=1)
    return np.sqrt(obm @ (np.abs(spec.T) ** 2))


def estoi(clean: Waveform, degraded: Waveform) -> float:
    """Extended short-time objective intelligibility in [-1, 1].

    Inputs must be aligned and equal in length; at least ~1 s of active
    speech is required (3 s or more recommended for stable scores).
    """
    if len(clean) != len(degraded):
        raise DataError("ESTOI inputs must have equal length")
    if clean.sample_rate_hz != degraded.sample_rate_hz:
        raise DataError("ESTOI inputs must share a sample rate")
    x = resample(clean, ESTOI_FS).samples
    y = resample(degraded, ESTOI_FS).samples
    if not np.any(x):
        raise DataError("ESTOI undefined for silent clean reference")
    x, y = remove_silent_frames(x, y)

    obm = third_octave_matrix(ESTOI_FS, ESTOI_NFFT, ESTOI_BANDS, ESTOI_MIN_FREQ)
    xb = _band_envelopes(x, obm)
    yb = _band_envelopes(y, obm)
    n_frames = xb.shape[1]
    if n_frames < ESTOI_SEG:
        raise DataError(
            f"too short: {n_frames} active frames, ESTOI needs >= {ESTOI_SEG}"
        )

    scores = []
    for m in range(ESTOI_SEG, n_frames + 1):
        xs = xb[:, m - ESTOI_SEG : m]
        ys = yb[:, m - ESTOI_SEG : m]
        xs = xs - xs.mean(axis=1, keepdims=True)
        xs = xs / (np.linalg.norm(xs, axis=1, keepdims=True) + _EPS)
        ys = ys - ys.mean(axis=1, keepdims=True)
        ys = ys / (np.linalg.norm(ys, axis=1, keepdims=True) + _EPS)
        xs = xs - xs.mean(axis=0, keepdims=True)
        xs = xs / (np.linalg.norm(xs, axis=0, keepdims=True) + _EPS)
        ys = ys - ys.mean(axis=0, keepdims=True)
        ys = ys / (np.linalg.norm(ys, axis=0, keepdims=True) + _EPS)
        scores.append(float(np.sum(xs * ys) / ESTOI_SEG))
    return float(np.mean(scores))


# -- scene evaluation ---------------------------------------------------

ACTIVITY_FRAME_S = 0.02


def _activity_mask(x: np.ndarray, fs: int, dyn_range_db: float = DYN_RANGE_DB) -> np.ndarray:
    n = int(fs * ACTIVITY_FRAME_S)
    n_frames = len(x) // n
    if n_frames == 0:
        return np.zeros(0, dtype=bool)
    frames = x[: n_frames * n].reshape(n_frames, n)
    rms = np.sqrt(np.mean(np.square(frames), axis=1))
    peak = rms.max()
    if peak == 0:
        return np.zeros(n_frames, dtype=bool)
    return 20.0 * np.log10(np.maximum(rms, _EPS * peak) / peak) > -dyn_range_db


@dataclass
class MetricRow:
    """Per-scene metric record; ``extras`` holds merged external metrics."""

    scene_id: str
    method: str
    condition: str
    estoi: float | None = None
    snr_db: float | None = None
    erle_db: float | None = None
    residual_echo_db: float | None = None
    extras: dict = field(default_factory=dict)

    def metric_values(self) -> dict:
        vals = {
            "estoi": self.estoi,
            "snr_db": self.snr_db,
            "erle_db": self.erle_db,
            "residual_echo_db": self.residual_echo_db,
        }
        vals.update(self.extras)
        return {k: v for k, v in vals.items() if v is not None}

    def to_json(self) -> dict:
        return asdict(self)


def scene_condition(augmentation: str) -> str:
    """Scene-level talk condition from the augmentation tag."""
    return {"drop_nearend": "STFE", "drop_farend": "STNE"}.get(augmentation, "DT")


def evaluate_scene(
    scene_id: str,
    method: str,
    mic: Waveform,
    target: Waveform,
    echo: Waveform,
    enhanced: Waveform,
    augmentation: str = "none",
) -> MetricRow:
    """Score one enhanced scene against its ground-truth components.

    Computes ESTOI and output SNR against the target (skipped when the
    target is silent) and residual-echo ERLE over echo-active/near-end-
    silent frames (None when no such region exists).
    """
    fs = mic.sample_rate_hz
    if not (len(mic) == len(target) == len(echo) == len(enhanced)):
        raise DataError("scene signals must be aligned to equal length")

    row = MetricRow(scene_id, method, scene_condition(augmentation))
    if np.any(target.samples):
        row.estoi = estoi(target, enhanced)
        err = enhanced.samples - target.samples
        p_err = float(np.mean(np.square(err)))
        p_tgt = float(np.mean(np.square(target.samples)))
        row.snr_db = float("inf") if p_err == 0 else 10.0 * float(np.log10(p_tgt / p_err))

    if np.any(echo.samples):
        n = int(fs * ACTIVITY_FRAME_S)
        echo_act = _activity_mask(echo.samples, fs)
        near_act = _activity_mask(target.samples, fs)
        if near_act.size < echo_act.size:
            near_act = np.pad(near_act, (0, echo_act.size - near_act.size))
        region = echo_act & ~near_act[: echo_act.size]
        if np.any(region):
            sel = np.repeat(region, n)
            mic_r = mic.samples[: sel.size][sel]
            enh_r = enhanced.samples[: sel.size][sel]
            p_mic = float(np.mean(np.square(mic_r)))
            p_enh = float(np.mean(np.square(enh_r)))
            # erle: suppression achieved; residual_echo: what is left (-inf
            # sentinel when the output is exactly silent over the region)
            if p_enh == 0.0:
                row.erle_db = float("inf")
                row.residual_echo_db = float("-inf")
            elif p_mic > 0.0:
                row.erle_db = 10.0 * float(np.log10(p_mic / p_enh))
                row.residual_echo_db = -row.erle_db
    return row


HIGHER_IS_BETTER = {
    "estoi": True,
    "snr_db": True,
    "erle_db": True,
    "residual_echo_db": False,
    "pesq": True,
    "lps": True,
}


def rank_methods(rows, metrics=None, higher_is_better=None) -> dict:
    """Average rank per method (1 = best), Table-style arithmetic.

    Rows are grouped by method; every method must cover the same scene
    set. Each metric is aggregated (mean over scenes), methods are ranked
    per metric with ties averaged, and ranks are averaged across metrics.
    """
    hib = dict(HIGHER_IS_BETTER)
    hib.update(higher_is_better or {})
    by_method: dict = {}
    for row in rows:
        by_method.setdefault(row.method, []).append(row)
    if len(by_method) < 2:
        raise ConfigError("ranking needs at least 2 methods")
    scene_sets = {m: sorted(r.scene_id for r in rs) for m, rs in by_method.items()}
    reference = next(iter(scene_sets.values()))
    if any(s != reference for s in scene_sets.values()):
        raise DataError("methods cover different scene sets")

    aggregates: dict = {}
    for method, rs in by_method.items():
        sums: dict = {}
        counts: dict = {}
        for r in rs:
            for k, v in r.metric_values().items():
                if np.isfinite(v):
                    sums[k] = sums.get(k, 0.0) + v
                    counts[k] = counts.get(k, 0) + 1
        aggregates[method] = {k: sums[k] / counts[k] for k in sums}

    methods = sorted(by_method)
    common = set.intersection(*(set(aggregates[m]) for m in methods))
    use = sorted(common if metrics is None else [m for m in metrics if m in common])
    if not use:
        raise DataError("no metric is available for every method")

    per_metric = {}
    total = np.zeros(len(methods))
    for metric in use:
        vals = np.array([aggregates[m][metric] for m in methods])
        ranks = rankdata(-vals if hib.get(metric, True) else vals, method="average")
        per_metric[metric] = dict(zip(methods, ranks))
        total += ranks
    avg = dict(zip(methods, total / len(use)))
    return {"average_rank": avg, "per_metric": per_metric, "aggregates": aggregates}


# -- tables and external merge ------------------------------------------

_CSV_FIELDS = [
    "scene_id", "method", "condition", "estoi", "snr_db", "erle_db",
    "residual_echo_db", "extras",
]


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for r in rows:
            d = r.to_json()
            d["extras"] = json.dumps(d["extras"], sort_keys=True)
            writer.writerow(d)


def write_metrics_json(rows, path) -> None:
    with open(path, "w") as f:
        json.dump([r.to_json() for r in rows], f, indent=2, sort_keys=True)


def merge_external_metrics(rows, json_path) -> int:
    """Attach externally computed metrics ({scene_id, metric_name, value})
    to matching rows; returns the number of merged values."""
    with open(json_path) as f:
        records = json.load(f)
    by_scene: dict = {}
    for row in rows:
        by_scene.setdefault(row.scene_id, []).append(row)
    merged = 0
    for rec in records:
        for row in by_scene.get(rec["scene_id"], []):
            row.extras[rec["metric_name"]] = float(rec["value"])
            merged += 1
    return merged
