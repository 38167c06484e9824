"""Classical echo-control baselines and alignment utilities.

NLMS adapts a time-domain FIR sample by sample; FDKF runs a per-bin
diagonal Kalman filter over overlap-save blocks. GCC-PHAT estimates
integer-sample delays between the far-end reference and the microphone;
ERLE measures echo power reduction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from handsfree.dsp import Waveform
from handsfree.errors import ConfigError, DataError, DivergenceError


def gcc_phat_delay(
    mic: Waveform, ref: Waveform, max_lag: int, segment_s: float | None = None
) -> int:
    """Integer delay of ``ref`` within ``mic`` by PHAT-weighted correlation.

    Positive lag means the reference leads the microphone (mic[n] contains
    ref[n - lag]); the search covers [-max_lag, +max_lag]. All-zero input
    has undefined phase and is rejected. By default the whole file is
    correlated at once; ``segment_s`` instead estimates per segment and
    returns the most frequent lag (robust on long recordings whose delay
    is constant but whose content is sparse).
    """
    if max_lag < 0:
        raise ConfigError("max_lag must be >= 0")
    if len(mic) < 2 * max_lag or len(ref) < 2 * max_lag:
        raise DataError(f"signals must be at least 2*max_lag={2 * max_lag} samples")
    if not np.any(mic.samples) or not np.any(ref.samples):
        raise DataError("GCC-PHAT undefined for an all-zero signal")
    if segment_s is None:
        return _phat_argmax(mic.samples, ref.samples, max_lag)
    seg = int(segment_s * mic.sample_rate_hz)
    if seg < 2 * max_lag:
        raise ConfigError(f"segment of {seg} samples is below 2*max_lag={2 * max_lag}")
    votes: dict = {}
    for lo in range(0, min(len(mic), len(ref)) - seg + 1, seg):
        m = mic.samples[lo : lo + seg]
        r = ref.samples[lo : lo + seg]
        if not np.any(m) or not np.any(r):
            continue
        lag = _phat_argmax(m, r, max_lag)
        votes[lag] = votes.get(lag, 0) + 1
    if not votes:
        return _phat_argmax(mic.samples, ref.samples, max_lag)
    best = max(votes.values())
    return min(lag for lag, count in votes.items() if count == best)


def _phat_argmax(mic: np.ndarray, ref: np.ndarray, max_lag: int) -> int:
    n = len(mic) + len(ref)
    spec = np.fft.rfft(mic, n) * np.conj(np.fft.rfft(ref, n))
    mag = np.abs(spec)
    cc = np.fft.irfft(spec / np.maximum(mag, 1e-15 * mag.max()), n)
    lags = np.concatenate([cc[-max_lag:], cc[: max_lag + 1]]) if max_lag else cc[:1]
    return int(np.argmax(np.abs(lags))) - max_lag


def compensate_delay(mic: Waveform, ref: Waveform, lag: int) -> tuple[Waveform, Waveform]:
    """Shift the reference by ``lag`` samples (zero-filled) to align with mic.

    Re-running gcc_phat_delay on the output yields 0. Shifts beyond the
    signal length are rejected.
    """
    if abs(lag) >= len(ref):
        raise ConfigError(f"|lag|={abs(lag)} exceeds reference length {len(ref)}")
    r = ref.samples
    if lag > 0:
        shifted = np.concatenate([np.zeros(lag), r[:-lag]])
    elif lag < 0:
        shifted = np.concatenate([r[-lag:], np.zeros(-lag)])
    else:
        shifted = r.copy()
    return mic, Waveform(shifted, ref.sample_rate_hz)


class NlmsFilter:
    """Sample-wise normalized LMS state: FIR taps plus reference history.

    Single-owner streaming object; feed aligned chunks in order. The tap
    vector is exposed as ``taps_vector`` for inspection.
    """

    def __init__(self, taps: int = 256, mu: float = 0.5, eps: float = 1e-6):
        if not 0.0 <= mu <= 2.0:
            raise ConfigError(f"step size mu must satisfy 0 <= mu <= 2, got {mu}")
        if taps < 1:
            raise ConfigError("taps must be >= 1")
        self.n_taps = taps
        self.mu = mu
        self.eps = eps
        self.taps_vector = np.zeros(taps)
        self._history = np.zeros(taps - 1)
        self._samples_seen = 0

    def process(self, mic: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Adapt over one chunk; returns (echo_estimate, residual)."""
        if len(mic) != len(ref):
            raise DataError("mic and reference chunks must have equal length")
        d = np.asarray(mic, dtype=np.float64)
        x = np.concatenate([self._history, np.asarray(ref, dtype=np.float64)])
        w = self.taps_vector
        taps = self.n_taps
        y = np.zeros(len(d))
        e = np.zeros(len(d))
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            for i in range(len(d)):
                frame = x[i : i + taps][::-1]
                y[i] = w @ frame
                e[i] = d[i] - y[i]
                norm = frame @ frame + self.eps
                w += (self.mu * e[i] / norm) * frame
                if not np.isfinite(w[0]):
                    raise DivergenceError(
                        "NLMS filter diverged", index=self._samples_seen + i
                    )
        if taps > 1:
            self._history = x[len(d) : len(d) + taps - 1]
        self._samples_seen += len(d)
        return y, e


def nlms_cancel(
    mic: Waveform,
    ref: Waveform,
    taps: int = 256,
    mu: float = 0.5,
    eps: float = 1e-6,
) -> tuple[Waveform, Waveform]:
    """Sample-wise normalized LMS echo canceller (whole-signal wrapper).

    Returns (echo_estimate, residual) with residual = mic - estimate.
    Divergence (non-finite filter state) aborts with the sample index.
    """
    if len(mic) != len(ref):
        raise DataError("mic and reference must have equal length")
    y, e = NlmsFilter(taps, mu, eps).process(mic.samples, ref.samples)
    return Waveform(y, mic.sample_rate_hz), Waveform(e, mic.sample_rate_hz)


@dataclass(frozen=True)
class FdkfConfig:
    """Frequency-domain Kalman filter parameters.

    Overlap-save with FFT length ``block`` (the analysis frame length) and
    hop ``block // 2``. ``transition`` is the state decay A; process noise
    has a structural part (1 - A^2)|H|^2 plus ``error_process_noise`` times
    the smoothed error PSD, which keeps the gain open after abrupt
    echo-path changes instead of misreading the misalignment burst as
    observation noise.
    """

    block: int = 512
    transition: float = 0.999
    obs_smoothing: float = 0.5
    error_process_noise: float = 0.3
    initial_cov: float = 10.0
    regularization: float = 1e-10

    def __post_init__(self):
        if self.block < 4 or self.block % 2:
            raise ConfigError("block must be an even length >= 4")
        if not 0.0 < self.transition <= 1.0:
            raise ConfigError("transition factor must be in (0, 1]")
        if not 0.0 <= self.obs_smoothing < 1.0:
            raise ConfigError("obs_smoothing must be in [0, 1)")
        if self.error_process_noise < 0:
            raise ConfigError("error_process_noise must be >= 0")


class FdkfFilter:
    """Per-bin diagonal Kalman state: complex filter, covariance, noise PSD.

    Single-owner streaming object operating on overlap-save blocks of
    ``block // 2`` samples; ``process`` buffers arbitrary chunk sizes and
    emits output for every completed block, ``flush`` zero-pads the final
    partial block.
    """

    def __init__(self, cfg: FdkfConfig | None = None):
        self.cfg = cfg or FdkfConfig()
        m = self.cfg.block
        self.hop = m // 2
        self.filter_spectrum = np.zeros(m // 2 + 1, dtype=np.complex128)
        self.state_cov = np.full(m // 2 + 1, self.cfg.initial_cov)
        self.noise_psd = np.full(m // 2 + 1, 1e-6)
        self._x_hist = np.zeros(self.hop)
        self._pend_mic = np.zeros(0)
        self._pend_ref = np.zeros(0)
        self._blocks_seen = 0

    def _step(self, d_blk: np.ndarray, x_new: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.cfg
        m = cfg.block
        hop = self.hop
        a = cfg.transition
        a2 = a * a
        lam = cfg.obs_smoothing
        h, p, psi = self.filter_spectrum, self.state_cov, self.noise_psd

        x_blk = np.fft.rfft(np.concatenate([self._x_hist, x_new]))
        y_blk = np.fft.irfft(h * x_blk, m)[hop:]
        e_blk = d_blk - y_blk

        e_spec = np.fft.rfft(np.concatenate([np.zeros(hop), e_blk]))
        psi = lam * psi + (1.0 - lam) * np.abs(e_spec) ** 2
        p_pred = a2 * p + (1.0 - a2) * np.abs(h) ** 2 + cfg.error_process_noise * psi
        x_pow = np.abs(x_blk) ** 2
        gain = p_pred * np.conj(x_blk) / (p_pred * x_pow + 2.0 * psi + cfg.regularization)
        h = a * (h + gain * e_spec)
        # gradient constraint: the filter models only `hop` time-domain taps
        h_t = np.fft.irfft(h, m)
        h_t[hop:] = 0.0
        h = np.fft.rfft(h_t)
        p = (1.0 - (gain * x_blk).real) * p_pred
        if not np.all(np.isfinite(h)):
            raise DivergenceError("FDKF state diverged", index=self._blocks_seen)
        self.filter_spectrum, self.state_cov, self.noise_psd = h, p, psi
        self._x_hist = x_new
        self._blocks_seen += 1
        return y_blk, e_blk

    def process(self, mic: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Consume one aligned chunk; returns output for completed blocks."""
        if len(mic) != len(ref):
            raise DataError("mic and reference chunks must have equal length")
        self._pend_mic = np.concatenate([self._pend_mic, np.asarray(mic, dtype=np.float64)])
        self._pend_ref = np.concatenate([self._pend_ref, np.asarray(ref, dtype=np.float64)])
        ys, es = [], []
        while self._pend_mic.size >= self.hop:
            y_blk, e_blk = self._step(self._pend_mic[: self.hop], self._pend_ref[: self.hop])
            self._pend_mic = self._pend_mic[self.hop :]
            self._pend_ref = self._pend_ref[self.hop :]
            ys.append(y_blk)
            es.append(e_blk)
        if ys:
            return np.concatenate(ys), np.concatenate(es)
        return np.zeros(0), np.zeros(0)

    def flush(self) -> tuple[np.ndarray, np.ndarray]:
        """Zero-pad and emit the trailing partial block, if any."""
        n_left = self._pend_mic.size
        if n_left == 0:
            return np.zeros(0), np.zeros(0)
        pad = self.hop - n_left
        y, e = self.process(np.zeros(pad), np.zeros(pad))
        return y[:n_left], e[:n_left]


def fdkf_cancel(
    mic: Waveform, ref: Waveform, cfg: FdkfConfig | None = None
) -> tuple[Waveform, Waveform]:
    """Per-bin diagonal Kalman echo canceller (whole-signal wrapper).

    Returns (echo_estimate, residual); the trailing partial block is
    flushed with zero padding. Diverging state aborts with the block index.
    """
    if len(mic) != len(ref):
        raise DataError("mic and reference must have equal length")
    filt = FdkfFilter(cfg)
    y, e = filt.process(mic.samples, ref.samples)
    y_tail, e_tail = filt.flush()
    y = np.concatenate([y, y_tail])
    e = np.concatenate([e, e_tail])
    return Waveform(y, mic.sample_rate_hz), Waveform(e, mic.sample_rate_hz)


def erle_db(mic_echo_only: Waveform, residual: Waveform) -> float:
    """Echo return loss enhancement: 10*log10(P(mic)/P(residual)).

    A silent residual returns +inf by convention.
    """
    if len(mic_echo_only) != len(residual):
        raise DataError("ERLE inputs must have equal length")
    if len(mic_echo_only) == 0:
        raise DataError("ERLE undefined for empty signals")
    p_mic = float(np.mean(np.square(mic_echo_only.samples)))
    p_res = float(np.mean(np.square(residual.samples)))
    if p_res == 0.0:
        return float("inf")
    if p_mic == 0.0:
        return float("-inf")
    return 10.0 * float(np.log10(p_mic / p_res))


def erle_over_window(mic: Waveform, residual: Waveform, t_start: float, t_end: float) -> float:
    """ERLE restricted to the [t_start, t_end) seconds window."""
    fs = mic.sample_rate_hz
    lo, hi = int(t_start * fs), int(t_end * fs)
    return erle_db(
        Waveform(mic.samples[lo:hi], fs), Waveform(residual.samples[lo:hi], fs)
    )
