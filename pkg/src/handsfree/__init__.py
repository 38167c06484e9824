"""Hands-free communication toolkit.

Synthetic echo/noise scene generation, a VE-SDE score-based diffusion
enhancer with single-step inference, classical adaptive-filter baselines,
and an objective evaluation harness. Everything runs on mono 16 kHz audio.
"""

from handsfree.dsp import (
    Waveform,
    StftConfig,
    Spectrogram,
    stft,
    istft,
    measure_power_db,
    read_wav,
    write_wav,
    resample,
)
from handsfree.diffusion import (
    NoiseSchedule,
    SamplerConfig,
    sigma_at,
    forward_perturb,
    analytic_gaussian_score,
    score_matching_loss,
    langevin_step,
    reverse_sample,
    single_step_enhance,
    precondition,
)

__version__ = "0.1.0"
