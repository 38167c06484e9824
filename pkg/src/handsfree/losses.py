"""Training losses and the desk-scale end-to-end toy training loop.

The compressed complex MSE blends a phase-aware term on magnitude-
compressed spectra with a magnitude-only term:

    J = blend * mean(| |S|^c e^{j phi_S} - |S_hat|^c e^{j phi_S_hat} |^2)
      + (1 - blend) * mean((|S|^c - |S_hat|^c)^2)

and the total objective adds the conditioner term, the final-estimate term
and alpha times the score-matching loss. Compression/blend defaults (0.3,
0.3) follow the convention of the loss's original formulation; alpha
defaults to 0.005 to balance loss magnitudes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from handsfree.diffusion import NoiseSchedule, sigma_at
from handsfree.dsp import Spectrogram, stft, read_wav
from handsfree.errors import ConfigError, DataError, DivergenceError
from handsfree.scenes import read_manifest
from handsfree.toyscore import ToyScorer, lr_schedule

_EPS = 1e-300


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.005
    compression: float = 0.3
    blend: float = 0.3

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if not 0.0 < self.compression <= 1.0:
            raise ConfigError("compression exponent must be in (0, 1]")
        if not 0.0 <= self.blend <= 1.0:
            raise ConfigError("blend must be in [0, 1]")


def _compress(v: np.ndarray, c: float) -> np.ndarray:
    """|v|^c with the original phase; exactly zero stays zero."""
    mag = np.abs(v)
    return np.where(mag > 0, mag**c * (v / np.maximum(mag, _EPS)), 0.0 + 0.0j)


def cc_mse(s_hat: np.ndarray, s: np.ndarray, cfg: LossConfig | None = None) -> float:
    """Compressed complex MSE, normalized per element.

    Invariant under a global phase rotation applied to both arguments;
    zero iff the arguments are equal.
    """
    cfg = cfg or LossConfig()
    a = s_hat.bins if isinstance(s_hat, Spectrogram) else np.asarray(s_hat)
    b = s.bins if isinstance(s, Spectrogram) else np.asarray(s)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch {a.shape} vs {b.shape}")
    ca = _compress(a, cfg.compression)
    cb = _compress(b, cfg.compression)
    complex_term = float(np.mean(np.abs(cb - ca) ** 2))
    mag_term = float(np.mean((np.abs(cb) - np.abs(ca)) ** 2))
    return cfg.blend * complex_term + (1.0 - cfg.blend) * mag_term


def total_loss(
    s_cond_hat, s_hat, s, sm_loss: float, cfg: LossConfig | None = None
) -> float:
    """J = J_cc(S_cond_hat, S) + J_cc(S_hat, S) + alpha * J_sm."""
    cfg = cfg or LossConfig()
    for name, value in (("sm_loss", sm_loss),):
        if not np.isfinite(value):
            raise DataError(f"{name} must be finite")
    return cc_mse(s_cond_hat, s, cfg) + cc_mse(s_hat, s, cfg) + cfg.alpha * sm_loss


@dataclass(frozen=True)
class ToyPipelineConfig:
    """Desk-scale joint training of a per-bin conditioner and scorer."""

    steps: int = 2000
    peak_lr: float = 5e-3
    frames_per_step: int = 24
    holdout_fraction: float = 0.25
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)

    def to_json(self) -> dict:
        return {
            "steps": self.steps,
            "peak_lr": self.peak_lr,
            "frames_per_step": self.frames_per_step,
            "holdout_fraction": self.holdout_fraction,
            "seed": self.seed,
            "loss": asdict(self.loss),
            "schedule": self.schedule.to_json(),
        }


def _load_pairs(manifest_path) -> list:
    """(Y, S) spectrogram pairs for every scene of a manifest."""
    records = read_manifest(manifest_path)
    if not records:
        raise DataError("empty manifest")
    base = Path(manifest_path).parent
    pairs = []
    for rec in records:
        mic = read_wav(base / rec["paths"]["mic"])
        target = read_wav(base / rec["paths"]["target"])
        pairs.append((stft(mic).bins, stft(target).bins))
    return pairs


def _toy_losses(w, scorer, y_blk, s_blk, sigma, rng):
    """Forward pass of the toy pipeline on one frame block."""
    s_cond = w[:, None] * y_blk
    z = rng.standard_normal(s_blk.shape) + 1j * rng.standard_normal(s_blk.shape)
    s_big_t = s_cond + sigma * z
    est = scorer.apply(s_big_t)
    sm = float(np.mean(np.abs(est + z / sigma) ** 2))
    s_hat = s_big_t + sigma**2 * est
    return s_cond, s_big_t, z, est, sm, s_hat


def toy_pipeline_train(manifest_path, cfg: ToyPipelineConfig) -> dict:
    """Matched-condition toy training over a scene-synth dataset.

    A per-bin real conditioner gain w is trained by complex MSE toward the
    target; the scorer is trained on the score-matching objective around
    S_T = w*Y + sigma_T * Z. The report carries the config echo, the
    total-loss trace and holdout losses before/after; identical seeds give
    identical traces.
    """
    pairs = _load_pairs(manifest_path)
    rng = np.random.default_rng([cfg.seed, 0x70F])
    n_hold = max(int(len(pairs) * cfg.holdout_fraction), 1) if len(pairs) > 1 else 0
    order = rng.permutation(len(pairs))
    hold_idx = set(order[:n_hold].tolist())
    train = [p for i, p in enumerate(pairs) if i not in hold_idx]
    hold = [p for i, p in enumerate(pairs) if i in hold_idx] or train

    n_bins = pairs[0][0].shape[0]
    sigma = sigma_at(cfg.schedule, cfg.schedule.t_max)
    w = np.ones(n_bins)
    scorer = ToyScorer.zeros(n_bins)
    # running per-bin curvature estimates normalize the step size; raw
    # spectrogram scales differ by orders of magnitude across bins
    curv_w = np.full(n_bins, 1.0)
    curv_g = np.full(n_bins, 1.0)

    def holdout_loss() -> float:
        vals = []
        hrng = np.random.default_rng([cfg.seed, 0xE7A1])
        for y_bins, s_bins in hold:
            s_cond, _s_big_t, _z, _est, sm, s_hat = _toy_losses(
                w, scorer, y_bins, s_bins, sigma, hrng
            )
            vals.append(total_loss(s_cond, s_hat, s_bins, sm, cfg.loss))
        return float(np.mean(vals))

    loss_before = holdout_loss()
    trace = []
    for step in range(cfg.steps):
        lr = lr_schedule(step, cfg.steps, cfg.peak_lr)
        y_bins, s_bins = train[int(rng.integers(len(train)))]
        lo = int(rng.integers(0, max(y_bins.shape[1] - cfg.frames_per_step, 0) + 1))
        y_blk = y_bins[:, lo : lo + cfg.frames_per_step]
        s_blk = s_bins[:, lo : lo + cfg.frames_per_step]
        s_cond, s_big_t, z, est, sm, s_hat = _toy_losses(
            w, scorer, y_blk, s_blk, sigma, rng
        )
        j_total = total_loss(s_cond, s_hat, s_blk, sm, cfg.loss)
        if not np.isfinite(j_total):
            raise DivergenceError("toy pipeline diverged", index=step)

        # conditioner: complex-MSE surrogate gradient toward the target
        w_grad = 2.0 * np.mean(((s_cond - s_blk) * np.conj(y_blk)).real, axis=1)
        # scorer: exact score-matching gradient around the matched condition
        resid = est + z / sigma
        g_grad = 2.0 * np.mean((resid * np.conj(s_big_t)).real, axis=1)
        curv_w = 0.95 * curv_w + 0.05 * 2.0 * np.mean(np.abs(y_blk) ** 2, axis=1)
        curv_g = 0.95 * curv_g + 0.05 * 2.0 * np.mean(np.abs(s_big_t) ** 2, axis=1)
        w = w - lr * w_grad / np.maximum(curv_w, 1e-8)
        scorer.gains = scorer.gains - lr * g_grad / np.maximum(curv_g, 1e-8)
        if step % max(cfg.steps // 200, 1) == 0 or step == cfg.steps - 1:
            trace.append([step, float(j_total)])
    loss_after = holdout_loss()

    return {
        "config": cfg.to_json(),
        "loss_trace": trace,
        "holdout_loss_before": loss_before,
        "holdout_loss_after": loss_after,
        "improved": bool(loss_after < loss_before),
        "final_cond_gain_mean": float(np.mean(w)),
        "final_score_gain_mean": float(np.mean(scorer.gains)),
    }


def save_run_report(report: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
