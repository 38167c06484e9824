"""End-to-end enhancement: waveforms -> spectrograms -> nets -> waveform.

The conditioner U-Net sees the early fusion of far-end and microphone
spectrograms (real/imag channels, X before Y) and produces both the
discriminative estimate and the conditioning feature map. The score U-Net
is wrapped in the unit-variance preconditioning and consumes the diffused
state, the conditioning features and a constant noise-embedding channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from handsfree.diffusion import (
    NoiseSchedule,
    SamplerConfig,
    precondition,
    reverse_sample,
    single_step_enhance,
)
from handsfree.dsp import Spectrogram, StftConfig, Waveform, istft, stft
from handsfree.errors import ConfigError, DataError
from handsfree.unet import (
    UNet,
    UNetSpec,
    channels_to_complex,
    complex_to_channels,
)
from handsfree.weights import WeightContainer


class _RawScoreNet:
    """Adapter giving the score U-Net the raw-network calling convention
    (scaled input, scalar noise embedding, conditioning features)."""

    def __init__(self, net: UNet):
        self.net = net

    def __call__(self, s_scaled: np.ndarray, c_noise: float, cond: np.ndarray) -> np.ndarray:
        x = complex_to_channels(s_scaled)
        if cond.shape[1:] != x.shape[1:]:
            raise DataError(
                f"conditioning shape {cond.shape} incompatible with input {x.shape}"
            )
        noise_ch = np.full((1,) + x.shape[1:], c_noise)
        stacked = np.concatenate([x, cond, noise_ch], axis=0)
        out, _ = self.net.forward(stacked)
        return channels_to_complex(out)


@dataclass
class EnhanceResult:
    enhanced: Waveform
    s_cond_hat: Spectrogram
    s_hat: Spectrogram


class DiffusionEnhancer:
    """Cond + Score networks assembled from one weight container."""

    def __init__(self, container: WeightContainer):
        specs = container.specs
        if "cond" not in specs or "score" not in specs:
            raise DataError("weight container must carry 'cond' and 'score' specs")
        self.cond_spec = UNetSpec.from_json(specs["cond"])
        self.score_spec = UNetSpec.from_json(specs["score"])
        self.sigma_data = float(container.meta.get("sigma_data", 0.5))
        self.cond_net = UNet(self.cond_spec, container.tensors, prefix="cond.")
        self.score_net = UNet(self.score_spec, container.tensors, prefix="score.")
        self.score_fn = precondition(_RawScoreNet(self.score_net), self.sigma_data)
        self.stft_cfg = StftConfig(pad_bins_to=self.cond_spec.pad_bins)

    def cond_forward(self, far: Spectrogram, mic: Spectrogram) -> tuple[Spectrogram, np.ndarray]:
        """Early-fusion conditioner pass: (S_cond_hat, conditioning features)."""
        x = np.concatenate(
            [complex_to_channels(far.bins), complex_to_channels(mic.bins)], axis=0
        )
        out, features = self.cond_net.forward(x)
        return mic.with_bins(channels_to_complex(out)), features

    def enhance(
        self,
        mic: Waveform,
        far: Waveform,
        sampler: SamplerConfig,
        sched: NoiseSchedule,
        rng: np.random.Generator,
        mode: str = "single",
    ) -> EnhanceResult:
        if len(mic) != len(far):
            raise DataError("mic and far-end must be aligned to equal length")
        spec_far = stft(far, self.stft_cfg)
        spec_mic = stft(mic, self.stft_cfg)
        s_cond_hat, features = self.cond_forward(spec_far, spec_mic)
        if mode == "single":
            s_hat = single_step_enhance(s_cond_hat, self.score_fn, features, sched, rng)
        elif mode == "multi":
            s_hat = reverse_sample(
                self.score_fn, features, sampler, sched, rng,
                init=s_cond_hat, mode="multi",
            )
        else:
            raise ConfigError(f"unknown enhancement mode {mode!r}")
        return EnhanceResult(istft(s_hat), s_cond_hat, s_hat)
