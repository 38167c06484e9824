"""Variance-exploding diffusion machinery with noise-consistent sampling.

The forward process perturbs a clean spectrogram S as S_t = S + sigma_t * Z
on a geometric noise scale sigma_t = sigma_min * (sigma_max/sigma_min)**t,
t in [0, T]. Z is always realized as the STFT of time-domain white Gaussian
noise, matching the process the score model sees in training; toy oracles
may substitute i.i.d. per-bin draws via the ``noise_fn`` hooks.

The reverse sampler runs noise-consistent Langevin steps

    S_{t-dt} = S_t + eta * sigma_t**2 * score(S_t) + beta * sigma_{t-dt} * Z

with eta = 1 - gamma**eps, gamma = (sigma_max/sigma_min)**(-dt),
beta = sqrt(1 - gamma**(2*(eps-1))). eps = 1 makes beta exactly zero
(deterministic sampling); eps < 1 would make beta imaginary and is
rejected. Single-step inference applies the final-estimate correction
directly at t = T:  S_hat = S_T + sigma_T**2 * score(S_T),
S_T = S_cond_hat + sigma_T * Z.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Protocol

import numpy as np

from handsfree.dsp import Spectrogram, Waveform, stft
from handsfree.errors import ConfigError, DataError

GRID_TOL = 1e-9


@dataclass(frozen=True)
class NoiseSchedule:
    """Geometric sigma schedule; t runs in [0, t_max] during inference."""

    sigma_min: float = 0.01
    sigma_max: float = 5.0
    t_max: float = 0.3

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )
        if not 0 < self.t_max <= 1.0:
            raise ConfigError(f"t_max must be in (0, 1], got {self.t_max}")

    @property
    def ratio(self) -> float:
        return self.sigma_max / self.sigma_min

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj) -> "NoiseSchedule":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(**obj)


def sigma_at(sched: NoiseSchedule, t: float) -> float:
    """sigma_t = sigma_min * (sigma_max/sigma_min)**t; valid on [0, 1]."""
    if t < 0:
        raise ConfigError(f"diffusion time must be >= 0, got {t}")
    return sched.sigma_min * sched.ratio**t


@dataclass(frozen=True)
class SamplerConfig:
    """Step count, stochasticity exponent and seed for the reverse sampler."""

    n_steps: int = 1
    epsilon: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.epsilon < 1.0:
            raise ConfigError(
                f"epsilon must be >= 1 (beta == sqrt(1 - gamma**(2*(eps-1))) "
                f"requires it for gamma < 1), got {self.epsilon}"
            )

    def coefficients(self, sched: NoiseSchedule) -> dict:
        """Derived (dt, gamma, eta, beta) for a schedule."""
        dt = sched.t_max / self.n_steps
        gamma = sched.ratio ** (-dt)
        eta = 1.0 - gamma**self.epsilon
        beta = float(np.sqrt(1.0 - gamma ** (2.0 * (self.epsilon - 1.0))))
        return {"dt": dt, "gamma": gamma, "eta": eta, "beta": beta}

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj) -> "SamplerConfig":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(**obj)


class ScoreFn(Protocol):
    """Score estimate: (S_t bins, sigma, conditioning) -> score bins."""

    def __call__(self, s_t: np.ndarray, sigma: float, cond) -> np.ndarray: ...


NoiseFn = Callable[[np.random.Generator], np.ndarray]


def stft_noise_fn(template: Spectrogram) -> NoiseFn:
    """Noise draws matching the training construction: STFT of N(0, I) time noise.

    Per-bin complex variance equals the window energy sum (256 for the
    default 512-point sqrt-Hann), not 1; all score conventions in the
    pipeline share this scale.
    """

    def draw(rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(template.n_samples)
        return stft(Waveform(z, template.sample_rate_hz), template.config).bins

    return draw


def iid_noise_fn(shape) -> NoiseFn:
    """Unit-variance-per-component complex draws for analytic toy oracles."""

    def draw(rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    return draw


def forward_perturb(
    s: Spectrogram,
    t: float,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    noise_fn: NoiseFn | None = None,
) -> tuple[Spectrogram, np.ndarray]:
    """Diffuse a clean spectrogram to time t: returns (S_t, Z)."""
    sig = sigma_at(sched, t)
    z = (noise_fn or stft_noise_fn(s))(rng)
    if z.shape != s.bins.shape:
        raise DataError(f"noise shape {z.shape} != spectrogram shape {s.bins.shape}")
    return s.with_bins(s.bins + sig * z), z


def analytic_gaussian_score(
    s_t: np.ndarray, t: float, sigma_s, sched: NoiseSchedule
) -> np.ndarray:
    """Exact score for a zero-mean Gaussian prior: -S_t / (sigma_s^2 + sigma_t^2).

    ``sigma_s`` is the prior scale per component (real and imaginary parts
    are each N(0, sigma_s^2)); it may be a scalar or a per-bin array
    broadcastable over ``s_t``. Serves as the independent oracle for the
    score-matching objective and the sampler.
    """
    sigma_s = np.asarray(sigma_s, dtype=np.float64)
    if np.any(sigma_s < 0):
        raise ConfigError("prior sigma_s must be >= 0")
    sig = sigma_at(sched, t)
    return -np.asarray(s_t) / (sigma_s**2 + sig**2)


def score_matching_loss(
    score_fn: ScoreFn,
    s: Spectrogram,
    cond,
    t: float,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    noise_fn: NoiseFn | None = None,
    reduction: str = "sum",
) -> float:
    """Single-draw denoising score-matching objective.

    || score_fn(S + sigma_t Z | sigma_t, C) + Z / sigma_t ||^2, summed over
    all entries (``reduction="mean"`` divides by the element count; batch
    averaging is the caller's concern).
    """
    sig = sigma_at(sched, t)
    s_t, z = forward_perturb(s, t, sched, rng, noise_fn)
    est = score_fn(s_t.bins, sig, cond)
    if not np.all(np.isfinite(est)):
        raise DataError("score function produced non-finite output")
    resid = est + z / sig
    total = float(np.sum(np.abs(resid) ** 2))
    if reduction == "sum":
        return total
    if reduction == "mean":
        return total / resid.size
    raise ConfigError(f"unknown reduction {reduction!r}")


def _grid_index(t: float, sched: NoiseSchedule, cfg: SamplerConfig) -> int:
    dt = sched.t_max / cfg.n_steps
    k = (sched.t_max - t) / dt
    if abs(k - round(k)) > GRID_TOL or not -GRID_TOL <= round(k) <= cfg.n_steps - 1:
        raise ConfigError(
            f"t={t} not on the sampler grid {{T, T-dt, ..., dt}} "
            f"(T={sched.t_max}, dt={dt})"
        )
    return int(round(k))


def langevin_step(
    s_t: Spectrogram,
    t: float,
    score_fn: ScoreFn,
    cond,
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    noise_fn: NoiseFn | None = None,
) -> Spectrogram:
    """One noise-consistent Langevin update from t to t - dt."""
    _grid_index(t, sched, cfg)
    co = cfg.coefficients(sched)
    sig = sigma_at(sched, t)
    sig_next = sigma_at(sched, max(t - co["dt"], 0.0))
    est = score_fn(s_t.bins, sig, cond)
    out = s_t.bins + co["eta"] * sig**2 * est
    if co["beta"] != 0.0:
        z = (noise_fn or stft_noise_fn(s_t))(rng)
        out = out + co["beta"] * sig_next * z
    return s_t.with_bins(out)


def final_estimate(
    s: Spectrogram, sigma: float, score_fn: ScoreFn, cond
) -> Spectrogram:
    """Denoising correction S + sigma^2 * score(S | sigma, C)."""
    return s.with_bins(s.bins + sigma**2 * score_fn(s.bins, sigma, cond))


def single_step_enhance(
    s_cond_hat: Spectrogram,
    score_fn: ScoreFn,
    cond,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    noise_fn: NoiseFn | None = None,
) -> Spectrogram:
    """Single-step inference: perturb the conditioner estimate to t = T and
    apply the final-estimate correction there."""
    sig_t = sigma_at(sched, sched.t_max)
    z = (noise_fn or stft_noise_fn(s_cond_hat))(rng)
    s_big_t = s_cond_hat.with_bins(s_cond_hat.bins + sig_t * z)
    return final_estimate(s_big_t, sig_t, score_fn, cond)


def reverse_sample(
    score_fn: ScoreFn,
    cond,
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    template: Spectrogram | None = None,
    init: Spectrogram | None = None,
    mode: str = "multi",
    noise_fn: NoiseFn | None = None,
) -> Spectrogram:
    """Draw an enhanced spectrogram by reverse-time sampling.

    mode="multi": start at S_T = sigma_T * Z (plus ``init`` bins when a
    conditioner estimate is supplied), run n_steps Langevin updates down
    the grid, then apply the final estimate at sigma(0) = sigma_min.

    mode="single": exact single-step inference; requires ``init`` and
    n_steps == 1 and shares the single_step_enhance code path bit for bit.
    """
    if mode == "single":
        if init is None:
            raise ConfigError("single-step mode needs a conditioner estimate (init)")
        if cfg.n_steps != 1:
            raise ConfigError("single-step mode is defined for n_steps == 1")
        return single_step_enhance(init, score_fn, cond, sched, rng, noise_fn)
    if mode != "multi":
        raise ConfigError(f"unknown sampler mode {mode!r}")

    base = init if init is not None else template
    if base is None:
        raise ConfigError("multi-step mode needs a template or init spectrogram")
    nf = noise_fn or stft_noise_fn(base)
    sig_t = sigma_at(sched, sched.t_max)
    start = sig_t * nf(rng)
    if init is not None:
        start = init.bins + start
    state = base.with_bins(start)

    dt = sched.t_max / cfg.n_steps
    for k in range(cfg.n_steps):
        t = sched.t_max - k * dt
        state = langevin_step(state, t, score_fn, cond, cfg, sched, rng, nf)
    return final_estimate(state, sigma_at(sched, 0.0), score_fn, cond)


class PreconditionedModel:
    """EDM-style wrapper turning a raw network into denoiser and score views.

    c_skip = sd^2 / (sigma^2 + sd^2), c_out = sigma*sd / sqrt(sigma^2 + sd^2),
    c_in = 1 / sqrt(sigma^2 + sd^2), noise embedding log(sigma) / 4. The raw
    network is called as raw_net(x_in, c_noise, cond) on the c_in-scaled
    input. Calling the wrapper yields the score view
    (denoise(S) - S) / sigma^2.
    """

    def __init__(self, raw_net, sigma_data: float = 0.5):
        if sigma_data <= 0:
            raise ConfigError(f"sigma_data must be positive, got {sigma_data}")
        self.raw_net = raw_net
        self.sigma_data = float(sigma_data)

    def scalings(self, sigma: float) -> tuple[float, float, float, float]:
        sd2 = self.sigma_data**2
        den = sigma**2 + sd2
        return (
            sd2 / den,
            sigma * self.sigma_data / np.sqrt(den),
            1.0 / np.sqrt(den),
            float(np.log(sigma) / 4.0),
        )

    def denoise(self, s_t: np.ndarray, sigma: float, cond) -> np.ndarray:
        c_skip, c_out, c_in, c_noise = self.scalings(sigma)
        raw = self.raw_net(c_in * s_t, c_noise, cond)
        return c_skip * s_t + c_out * raw

    def score(self, s_t: np.ndarray, sigma: float, cond) -> np.ndarray:
        return (self.denoise(s_t, sigma, cond) - s_t) / sigma**2

    __call__ = score


def precondition(raw_net, sigma_data: float = 0.5) -> PreconditionedModel:
    """Wrap a raw network with the unit-variance preconditioning scalings."""
    return PreconditionedModel(raw_net, sigma_data)


def estimate_sigma_data(specs) -> float:
    """Empirical per-component RMS of clean spectrograms (for preconditioning)."""
    total = 0.0
    count = 0
    for s in specs:
        b = s.bins if isinstance(s, Spectrogram) else np.asarray(s)
        total += float(np.sum(b.real**2) + np.sum(b.imag**2))
        count += 2 * b.size
    if count == 0:
        raise DataError("no spectrograms supplied")
    return float(np.sqrt(total / count))
