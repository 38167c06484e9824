"""Desk-scale trainable scorer for validating the diffusion objective.

The scorer is a per-bin linear map: score(S_t)[k, :] = g_k * S_t[k, :]
(+ optional complex bias), trained by SGD on the single-draw score-matching
loss with analytically derived gradients. For a zero-mean Gaussian prior
with per-component variance sigma_s^2 and fixed diffusion time t, the
quadratic objective has the closed-form optimum g_k = -1/(sigma_s^2 +
sigma_t^2), which training must approach; that closed form is the oracle
the tests check against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from handsfree.diffusion import NoiseSchedule, sigma_at
from handsfree.errors import ConfigError, DivergenceError


@dataclass
class ToyScorer:
    """Per-bin linear score model with real gains and optional complex bias."""

    gains: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.float64)
        if self.gains.ndim != 1:
            raise ConfigError("gains must be one value per bin")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.complex128)
            if self.bias.shape != self.gains.shape:
                raise ConfigError("bias must match gains shape")
        if not np.all(np.isfinite(self.gains)):
            raise ConfigError("non-finite scorer parameters")

    @classmethod
    def zeros(cls, n_bins: int, with_bias: bool = False) -> "ToyScorer":
        return cls(np.zeros(n_bins), np.zeros(n_bins, dtype=complex) if with_bias else None)

    def apply(self, s_t: np.ndarray) -> np.ndarray:
        if s_t.ndim == 1:
            out = self.gains * s_t
            return out + self.bias if self.bias is not None else out
        out = self.gains[:, None] * s_t
        return out + self.bias[:, None] if self.bias is not None else out

    def __call__(self, s_t: np.ndarray, sigma: float, cond=None) -> np.ndarray:
        return self.apply(s_t)


def score_loss_and_grads(
    scorer: ToyScorer,
    s: np.ndarray,
    z: np.ndarray,
    sigma: float,
) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Single-draw objective and its exact parameter gradients.

    The loss sums per-bin frame-averaged residuals
    sum_k mean_j |g_k (S + sigma Z) + Z/sigma + b_k|^2, so each bin's
    quadratic problem is independent and the gradient scale does not
    shrink with the bin count.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        s_t = s + sigma * z
        resid = scorer.apply(s_t) + z / sigma
        if resid.ndim == 1:
            resid = resid[:, None]
            s_t = s_t[:, None]
        loss = float(np.sum(np.mean(np.abs(resid) ** 2, axis=1)))
        g_grad = 2.0 * np.mean((resid * np.conj(s_t)).real, axis=1)
        b_grad = None
        if scorer.bias is not None:
            b_grad = 2.0 * np.mean(resid, axis=1)
    return loss, g_grad, b_grad


def lr_schedule(step: int, total_steps: int, peak: float,
                warmup_frac: float = 0.015, constant_frac: float = 0.5,
                floor_ratio: float = 0.002) -> float:
    """Warmup -> constant -> cosine decay, scaled to desk step counts."""
    warm = max(int(total_steps * warmup_frac), 1)
    const_until = max(int(total_steps * constant_frac), warm)
    if step < warm:
        return peak * (step + 1) / warm
    if step < const_until:
        return peak
    span = max(total_steps - const_until, 1)
    frac = (step - const_until) / span
    floor = peak * floor_ratio
    return floor + 0.5 * (peak - floor) * (1.0 + np.cos(np.pi * frac))


@dataclass
class ToyTrainReport:
    """Loss trace and final state of a toy training run."""

    steps: int
    losses: list = field(default_factory=list)
    final_gains: np.ndarray | None = None


def draw_gaussian_prior(
    n_bins: int, n_frames: int, sigma_s, rng: np.random.Generator
) -> np.ndarray:
    """Complex prior draw: real and imaginary parts each N(0, sigma_s^2)."""
    sigma_s = np.asarray(sigma_s, dtype=np.float64)
    scale = np.broadcast_to(sigma_s, (n_bins,))[:, None]
    return scale * (
        rng.standard_normal((n_bins, n_frames)) + 1j * rng.standard_normal((n_bins, n_frames))
    )


def toy_train(
    scorer: ToyScorer,
    prior_sigma_s,
    sched: NoiseSchedule,
    steps: int,
    lr: float,
    rng: np.random.Generator,
    t: float | None = None,
    frames_per_step: int = 8,
    trace_every: int = 100,
    decay: bool = True,
) -> ToyTrainReport:
    """SGD on the score-matching objective at fixed diffusion time.

    ``t`` defaults to the schedule's t_max (matched-condition training).
    ``lr`` is the peak rate of the warmup/constant/cosine shape unless
    ``decay`` is disabled (then it is constant, including lr=0 as a no-op).
    Divergence (non-finite loss) raises with the offending step index.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    t = sched.t_max if t is None else t
    sigma = sigma_at(sched, t)
    n_bins = scorer.gains.size
    report = ToyTrainReport(steps=steps)
    for step in range(steps):
        s = draw_gaussian_prior(n_bins, frames_per_step, prior_sigma_s, rng)
        z = rng.standard_normal((n_bins, frames_per_step)) + 1j * rng.standard_normal(
            (n_bins, frames_per_step)
        )
        loss, g_grad, b_grad = score_loss_and_grads(scorer, s, z, sigma)
        if not np.isfinite(loss):
            raise DivergenceError("toy training diverged", index=step)
        step_lr = lr_schedule(step, steps, lr) if decay else lr
        scorer.gains = scorer.gains - step_lr * g_grad
        if b_grad is not None:
            scorer.bias = scorer.bias - step_lr * b_grad
        if step % trace_every == 0 or step == steps - 1:
            report.losses.append((step, loss))
    report.final_gains = scorer.gains.copy()
    return report


def optimal_gain(prior_sigma_s, sched: NoiseSchedule, t: float | None = None):
    """Closed-form minimizer -1/(sigma_s^2 + sigma_t^2) of the toy objective."""
    t = sched.t_max if t is None else t
    sigma = sigma_at(sched, t)
    return -1.0 / (np.asarray(prior_sigma_s, dtype=np.float64) ** 2 + sigma**2)
