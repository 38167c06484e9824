"""Time/frequency conversion and basic waveform utilities.

Conventions used throughout the toolkit:

* analysis/synthesis window is a periodic square-root Hann, 512 samples,
  hop 128 (75% overlap), which satisfies constant overlap-add with sum 2;
* analysis is an unnormalized real FFT of each windowed frame, synthesis
  folds the window-sum-square compensation in, so ``istft(stft(w)) == w``
  to machine precision over the whole original signal;
* the signal is zero padded by ``frame_length - hop`` samples on both ends
  (plus tail alignment to a whole hop), so every original sample has full
  window coverage;
* the bin axis is array-padded from ``frame_length//2 + 1`` (257) to
  ``pad_bins_to`` (260) with zeros. This is padding of the stored matrix
  only, for stride divisibility in the U-Net, not spectral zero padding.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from handsfree.errors import ConfigError, DataError

DEFAULT_SAMPLE_RATE = 16_000


@dataclass(frozen=True)
class Waveform:
    """Mono time-domain signal, nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DataError(f"Waveform must be mono 1-D, got shape {samples.shape}")
        if self.sample_rate_hz <= 0:
            raise ConfigError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if samples.size and not np.all(np.isfinite(samples)):
            bad = int(np.flatnonzero(~np.isfinite(samples))[0])
            raise DataError(f"non-finite sample at index {bad}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters: 512/128 square-root Hann, bins padded to 260."""

    frame_length: int = 512
    hop: int = 128
    pad_bins_to: int = 260

    def __post_init__(self):
        if self.frame_length <= 0 or self.hop <= 0:
            raise ConfigError("frame_length and hop must be positive")
        if self.frame_length % self.hop != 0:
            raise ConfigError(
                f"hop ({self.hop}) must divide frame_length ({self.frame_length})"
            )
        if self.pad_bins_to < self.n_bins:
            raise ConfigError(
                f"pad_bins_to ({self.pad_bins_to}) < frame_length//2+1 ({self.n_bins})"
            )

    @property
    def n_bins(self) -> int:
        """Physical bin count K = frame_length//2 + 1."""
        return self.frame_length // 2 + 1

    def window(self) -> np.ndarray:
        """Periodic square-root Hann analysis/synthesis window."""
        n = np.arange(self.frame_length)
        return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.frame_length))

    def edge_pad(self) -> int:
        """Zero padding added on each side so edge samples get full overlap."""
        return self.frame_length - self.hop

    def n_frames(self, n_samples: int) -> int:
        """Frame count for a signal of ``n_samples`` (>= frame_length)."""
        n_samples = max(n_samples, self.frame_length)
        align = (-n_samples) % self.hop
        padded = n_samples + 2 * self.edge_pad() + align
        return (padded - self.frame_length) // self.hop + 1


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT matrix of shape (pad_bins_to, L) plus its provenance."""

    bins: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)
    n_samples: int = 0
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.ndim != 2 or bins.shape[0] != self.config.pad_bins_to:
            raise DataError(
                f"spectrogram shape {bins.shape} inconsistent with "
                f"pad_bins_to={self.config.pad_bins_to}"
            )
        if bins.size and not np.all(np.isfinite(bins)):
            raise DataError("non-finite spectrogram entries")
        object.__setattr__(self, "bins", bins)

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    def with_bins(self, bins: np.ndarray) -> "Spectrogram":
        """Same provenance, new bin matrix (shape-checked)."""
        return Spectrogram(bins, self.config, self.n_samples, self.sample_rate_hz)


def stft(wave: Waveform, cfg: StftConfig | None = None) -> Spectrogram:
    """Analyze a waveform into a padded complex spectrogram.

    Inputs shorter than one frame are zero padded up to ``frame_length``
    (a warning is emitted). Linearity holds to machine precision; padded
    bins beyond the physical K are exactly zero.
    """
    cfg = cfg or StftConfig()
    x = wave.samples
    n_orig = x.size
    if n_orig < cfg.frame_length:
        warnings.warn(
            f"input of {n_orig} samples shorter than frame_length={cfg.frame_length}; "
            "zero padding",
            stacklevel=2,
        )
        x = np.pad(x, (0, cfg.frame_length - n_orig))
    align = (-x.size) % cfg.hop
    pad = cfg.edge_pad()
    x = np.pad(x, (pad, pad + align))

    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.frame_length)[:: cfg.hop]
    windowed = frames * cfg.window()
    spec = np.fft.rfft(windowed, n=cfg.frame_length, axis=1).T
    padded = np.zeros((cfg.pad_bins_to, spec.shape[1]), dtype=np.complex128)
    padded[: cfg.n_bins] = spec
    return Spectrogram(padded, cfg, n_orig, wave.sample_rate_hz)


def istft(spec: Spectrogram) -> Waveform:
    """Resynthesize a waveform by square-root Hann overlap-add.

    Padded bins (>= K) are ignored. The synthesis divides by the summed
    analysis*synthesis window product, so the round trip is an identity on
    every original sample (the edge zero padding guarantees full overlap).
    """
    cfg = spec.config
    if spec.n_samples <= 0:
        raise DataError("spectrogram carries no target length (n_samples)")
    expected = cfg.n_frames(spec.n_samples)
    if spec.n_frames != expected:
        raise DataError(
            f"spectrogram has {spec.n_frames} frames, expected {expected} "
            f"for n_samples={spec.n_samples}"
        )

    win = cfg.window()
    frames = np.fft.irfft(spec.bins[: cfg.n_bins].T, n=cfg.frame_length, axis=1)
    frames *= win

    pad = cfg.edge_pad()
    total = (spec.n_frames - 1) * cfg.hop + cfg.frame_length
    out = np.zeros(total)
    wsum = np.zeros(total)
    wsq = win * win
    for i in range(spec.n_frames):
        sl = slice(i * cfg.hop, i * cfg.hop + cfg.frame_length)
        out[sl] += frames[i]
        wsum[sl] += wsq
    good = wsum > 1e-12
    out[good] /= wsum[good]
    return Waveform(out[pad : pad + spec.n_samples], spec.sample_rate_hz)


def measure_power_db(wave: Waveform) -> float:
    """Mean-square power in dB: 10*log10(mean(x^2)).

    Silence returns -inf by convention. Empty input is an error.
    """
    if len(wave) == 0:
        raise DataError("cannot measure power of an empty waveform")
    p = float(np.mean(np.square(wave.samples)))
    if p == 0.0:
        return float("-inf")
    return 10.0 * np.log10(p)


def power(wave: Waveform) -> float:
    """Linear mean-square power (0 for silence)."""
    if len(wave) == 0:
        raise DataError("cannot measure power of an empty waveform")
    return float(np.mean(np.square(wave.samples)))


def resample(wave: Waveform, target_hz: int) -> Waveform:
    """Deterministic polyphase resampling with a Kaiser windowed-sinc filter.

    Quality: scipy's resample_poly with its default (kaiser, 5.0) design,
    adequate for speech band work; identity when rates already match.
    """
    if target_hz <= 0:
        raise ConfigError("target rate must be positive")
    if target_hz == wave.sample_rate_hz:
        return wave
    g = np.gcd(int(target_hz), int(wave.sample_rate_hz))
    up, down = target_hz // g, wave.sample_rate_hz // g
    return Waveform(resample_poly(wave.samples, up, down), target_hz)


def read_wav(path, target_hz: int | None = None) -> Waveform:
    """Read a mono 16-bit PCM or 32-bit float WAV.

    Integer PCM is scaled to [-1, 1). Multi-channel input is rejected.
    If ``target_hz`` is given the file is resampled to it.
    """
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported WAV dtype {data.dtype}")
    wave = Waveform(samples, int(rate))
    if target_hz is not None:
        wave = resample(wave, target_hz)
    return wave


def write_wav(path, wave: Waveform, fmt: str = "float32") -> None:
    """Write a mono WAV as 32-bit float (default) or 16-bit PCM."""
    if fmt == "float32":
        wavfile.write(path, wave.sample_rate_hz, wave.samples.astype(np.float32))
    elif fmt == "int16":
        clipped = np.clip(wave.samples, -1.0, 32767.0 / 32768.0)
        wavfile.write(path, wave.sample_rate_hz, np.round(clipped * 32768.0).astype(np.int16))
    else:
        raise ConfigError(f"unknown WAV format {fmt!r}")
