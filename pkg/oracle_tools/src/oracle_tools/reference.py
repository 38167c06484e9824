"""Independent reference computations for the fixtures.

STFT framing/windowing/FFT goes through scipy.signal.stft (descaled to the
unnormalized-DFT convention); ESTOI is a vectorized implementation of the
published extended short-time intelligibility algorithm; GCC-PHAT uses
explicit phase-difference whitening. None of this code is shared with the
main package.
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly, stft as scipy_stft

FRAME = 512
HOP = 128
PAD_BINS = 260
FS = 16_000


def load_wav(path) -> np.ndarray:
    rate, data = wavfile.read(path)
    if rate != FS:
        raise ValueError(f"{path}: expected {FS} Hz, got {rate}")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    return data.astype(np.float64)


def sqrt_hann(n: int) -> np.ndarray:
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n))


def reference_stft(x: np.ndarray) -> np.ndarray:
    """Padded-bin spectrogram under the toolkit's framing convention,
    computed by scipy's STFT machinery (descaled to unnormalized DFT)."""
    pad = FRAME - HOP
    align = (-len(x)) % HOP
    if len(x) < FRAME:
        x = np.pad(x, (0, FRAME - len(x)))
        align = 0
    xp = np.pad(x, (pad, pad + align))
    win = sqrt_hann(FRAME)
    _f, _t, zxx = scipy_stft(
        xp,
        fs=FS,
        window=win,
        nperseg=FRAME,
        noverlap=FRAME - HOP,
        boundary=None,
        padded=False,
        detrend=False,
        return_onesided=True,
        scaling="spectrum",
    )
    spec = zxx * win.sum()  # undo scipy's 1/win.sum() spectrum scaling
    out = np.zeros((PAD_BINS, spec.shape[1]), dtype=np.complex128)
    out[: FRAME // 2 + 1] = spec
    return out


# -- ESTOI ----------------------------------------------------------------

E_FS = 10_000
E_FRAME = 256
E_HOP = 128
E_NFFT = 512
E_BANDS = 15
E_MINFREQ = 150.0
E_SEG = 30
E_DYN = 40.0
_EPS = np.finfo(np.float64).eps


def _resample_10k(x: np.ndarray, fs: int) -> np.ndarray:
    if fs == E_FS:
        return x
    g = np.gcd(fs, E_FS)
    return resample_poly(x, E_FS // g, fs // g)


def _frames(x: np.ndarray) -> np.ndarray:
    n = (len(x) - E_FRAME) // E_HOP + 1
    idx = np.arange(E_FRAME)[None, :] + E_HOP * np.arange(n)[:, None]
    return x[idx]


def _octave_bands() -> np.ndarray:
    f = np.linspace(0.0, E_FS / 2.0, E_NFFT // 2 + 1)
    bands = np.zeros((E_BANDS, f.size))
    for j in range(E_BANDS):
        cf = E_MINFREQ * 2.0 ** (j / 3.0)
        lo = int(np.argmin((f - cf * 2.0 ** (-1 / 6)) ** 2))
        hi = int(np.argmin((f - cf * 2.0 ** (1 / 6)) ** 2))
        bands[j, lo:hi] = 1.0
    return bands


def reference_estoi(clean: np.ndarray, degraded: np.ndarray, fs: int = FS) -> float:
    x = _resample_10k(np.asarray(clean, dtype=np.float64), fs)
    y = _resample_10k(np.asarray(degraded, dtype=np.float64), fs)
    win = np.hanning(E_FRAME + 2)[1:-1]
    xf = _frames(x) * win
    yf = _frames(y) * win
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > energy.max() - E_DYN
    xf, yf = xf[keep], yf[keep]
    # overlap-add reconstruction of the silence-stripped signals
    n_out = (len(xf) - 1) * E_HOP + E_FRAME
    xs = np.zeros(n_out)
    ys = np.zeros(n_out)
    for i, (a, b) in enumerate(zip(xf, yf)):
        xs[i * E_HOP : i * E_HOP + E_FRAME] += a
        ys[i * E_HOP : i * E_HOP + E_FRAME] += b
    bands = _octave_bands()
    xs_spec = np.fft.rfft(_frames(xs) * win, n=E_NFFT, axis=1)
    ys_spec = np.fft.rfft(_frames(ys) * win, n=E_NFFT, axis=1)
    xb = np.sqrt(bands @ (np.abs(xs_spec) ** 2).T)
    yb = np.sqrt(bands @ (np.abs(ys_spec) ** 2).T)

    m = xb.shape[1]
    if m < E_SEG:
        raise ValueError("too few active frames for ESTOI")
    # all segments at once: (n_seg, bands, E_SEG)
    starts = np.arange(m - E_SEG + 1)
    idx = starts[:, None] + np.arange(E_SEG)[None, :]
    xs_seg = np.transpose(xb[:, idx], (1, 0, 2))
    ys_seg = np.transpose(yb[:, idx], (1, 0, 2))

    def norm_rows(a):
        a = a - a.mean(axis=2, keepdims=True)
        return a / (np.linalg.norm(a, axis=2, keepdims=True) + _EPS)

    def norm_cols(a):
        a = a - a.mean(axis=1, keepdims=True)
        return a / (np.linalg.norm(a, axis=1, keepdims=True) + _EPS)

    xs_seg = norm_cols(norm_rows(xs_seg))
    ys_seg = norm_cols(norm_rows(ys_seg))
    per_segment = np.sum(xs_seg * ys_seg, axis=(1, 2)) / E_SEG
    return float(np.mean(per_segment))


# -- GCC-PHAT -------------------------------------------------------------


def reference_gcc_phat(mic: np.ndarray, ref: np.ndarray, max_lag: int) -> int:
    """Integer-lag GCC-PHAT via explicit phase-difference whitening."""
    n = len(mic) + len(ref)
    phase = np.angle(np.fft.rfft(mic, n)) - np.angle(np.fft.rfft(ref, n))
    cc = np.fft.irfft(np.exp(1j * phase), n)
    window = np.concatenate([cc[-max_lag:], cc[: max_lag + 1]])
    return int(np.argmax(np.abs(window))) - max_lag
