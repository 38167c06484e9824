"""U-Net forward engine for the conditioner and score networks.

Tensors are laid out (channels, time frames, frequency bins). The encoder
is a stack of DSBlocks whose closing strided convolution halves the
frequency axis (ceil rule) at every level except the first; the decoder
mirrors them with USBlocks that upsample by subpixel shuffling of channel
groups into frequency positions. Skip connections concatenate the
pre-downsampling features of each level; odd sizes are reconciled by
center crop. Time stays frame-convolutional (kernel 3, stride 1,
non-causal context).

The engine is pure numpy and deterministic: identical weights and input
give bit-identical output. Training lives elsewhere; weights arrive via
``WeightContainer`` or random initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from handsfree.errors import ConfigError, DataError
from handsfree.weights import WeightContainer

BASE_CHANNELS = (11, 16, 23, 33, 50)
SMALL_CHANNELS = (11, 15, 21, 29, 40)
NORM_EPS = 1e-5


@dataclass(frozen=True)
class UNetSpec:
    """Architecture hyperparameters; recorded in weight-file headers."""

    variant: str = "cond"
    in_channels: int = 4
    out_channels: int = 2
    channels: tuple = BASE_CHANNELS
    kernel: tuple = (3, 5)
    stride: tuple = (1, 2)
    pad_bins: int = 260
    cond_channels: int = 0
    activation: str = "prelu"
    normalization: str = "channel"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "stride", tuple(int(s) for s in self.stride))
        if self.variant not in ("cond", "score", "plain"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise ConfigError(f"channels must be strictly increasing, got {self.channels}")
        if self.kernel[0] % 2 != 1:
            raise ConfigError("time kernel must be odd (same-padded, non-causal)")
        if self.stride[0] != 1:
            raise ConfigError("time axis is never strided")
        if self.pad_bins % self.stride[1] != 0:
            raise ConfigError(
                f"pad_bins ({self.pad_bins}) must be divisible by the frequency "
                f"stride ({self.stride[1]})"
            )
        if self.activation not in ("prelu", "identity"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.normalization not in ("channel", "none"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")

    @property
    def n_levels(self) -> int:
        return len(self.channels)

    def encoder_freq_sizes(self) -> list:
        """Frequency size after each level's closing convolution."""
        sizes = []
        f = self.pad_bins
        for i in range(self.n_levels):
            if i > 0:
                f = math.ceil(f / self.stride[1])
            sizes.append(f)
        return sizes

    def to_json(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["kernel"] = list(self.kernel)
        d["stride"] = list(self.stride)
        return d

    @classmethod
    def from_json(cls, obj) -> "UNetSpec":
        return cls(**obj)


def cond_spec(channels=BASE_CHANNELS) -> UNetSpec:
    """Conditioner: early fusion of far-end X and mic Y (2 channels each)."""
    return UNetSpec(variant="cond", in_channels=4, channels=tuple(channels),
                    cond_channels=int(channels[0]))


def score_spec(channels=BASE_CHANNELS) -> UNetSpec:
    """Score net: diffused S_t (2ch) + conditioning features + noise channel."""
    return UNetSpec(variant="score", in_channels=2 + int(channels[0]) + 1,
                    channels=tuple(channels), cond_channels=int(channels[0]))


def subpixel_upsample(x: np.ndarray, factor_f: int) -> np.ndarray:
    """Shuffle channel groups into frequency positions.

    (C, T, F) -> (C//factor, T, F*factor) with
    out[c, t, f*factor + p] = x[c*factor + p, t, f]; bit-exact reversible.
    """
    if factor_f < 1:
        raise ConfigError("factor must be >= 1")
    if factor_f == 1:
        return x
    c, t, f = x.shape
    if c % factor_f:
        raise ConfigError(f"channel count {c} not divisible by factor {factor_f}")
    return (
        x.reshape(c // factor_f, factor_f, t, f)
        .transpose(0, 2, 3, 1)
        .reshape(c // factor_f, t, f * factor_f)
    )


def subpixel_downsample(x: np.ndarray, factor_f: int) -> np.ndarray:
    """Exact inverse of subpixel_upsample."""
    if factor_f < 1:
        raise ConfigError("factor must be >= 1")
    if factor_f == 1:
        return x
    c, t, f = x.shape
    if f % factor_f:
        raise ConfigError(f"frequency size {f} not divisible by factor {factor_f}")
    return (
        x.reshape(c, t, f // factor_f, factor_f)
        .transpose(0, 3, 1, 2)
        .reshape(c * factor_f, t, f // factor_f)
    )


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride_f: int = 1) -> np.ndarray:
    """Same-padded 2-D convolution on (C, T, F), strided on F only.

    Frequency output size is ceil(F / stride_f); padding splits low/high
    with the extra sample on the high side.
    """
    c_in, t, f = x.shape
    c_out, c_in_w, k_t, k_f = w.shape
    if c_in_w != c_in:
        raise DataError(f"conv expects {c_in_w} input channels, got {c_in}")
    out_f = -(-f // stride_f)
    pad_f = max((out_f - 1) * stride_f + k_f - f, 0)
    pad_t = k_t - 1
    xp = np.pad(x, ((0, 0), (pad_t // 2, pad_t - pad_t // 2), (pad_f // 2, pad_f - pad_f // 2)))
    out = np.zeros((c_out, t, out_f), dtype=np.promote_types(x.dtype, w.dtype))
    for dt in range(k_t):
        for df in range(k_f):
            sl = xp[:, dt : dt + t, df : df + (out_f - 1) * stride_f + 1 : stride_f]
            out += np.tensordot(w[:, :, dt, df], sl, axes=([1], [0]))
    return out + b[:, None, None]


def channel_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Per-channel normalization over (time, frequency) with affine params."""
    mu = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    return (x - mu) / np.sqrt(var + NORM_EPS) * gain[:, None, None] + bias[:, None, None]


def prelu(x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + alpha[:, None, None] * np.minimum(x, 0.0)


def center_crop_freq(x: np.ndarray, target_f: int) -> np.ndarray:
    f = x.shape[2]
    if f == target_f:
        return x
    if f < target_f:
        pad = target_f - f
        return np.pad(x, ((0, 0), (0, 0), (pad // 2, pad - pad // 2)))
    off = (f - target_f) // 2
    return x[:, :, off : off + target_f]


class UNet:
    """Loadable forward engine; see the module docstring for the topology."""

    def __init__(self, spec: UNetSpec, tensors: dict | None = None,
                 rng: np.random.Generator | None = None, prefix: str = ""):
        self.spec = spec
        self.prefix = prefix
        if tensors is None:
            rng = rng or np.random.default_rng(0)
            tensors = self._init_tensors(rng)
        self.tensors = {}
        for name, shape in self._shape_map().items():
            key = prefix + name
            if key not in tensors:
                raise DataError(f"missing weight tensor {key!r}")
            arr = np.asarray(tensors[key], dtype=np.float64)
            if arr.shape != shape:
                raise DataError(
                    f"weight {key!r} has shape {arr.shape}, spec requires {shape}"
                )
            self.tensors[name] = arr

    # -- layer catalogue -------------------------------------------------

    def _conv_defs(self):
        """(name, c_in, c_out, stride_f) for every convolution, in order."""
        sp = self.spec
        ch = sp.channels
        s_f = sp.stride[1]
        defs = []
        prev = sp.in_channels
        for i, c in enumerate(ch):
            defs.append((f"enc{i}.conv1", prev, c, 1))
            defs.append((f"enc{i}.conv2", c, c, 1))
            defs.append((f"enc{i}.down", c, c, s_f if i > 0 else 1))
            prev = c
        for i in range(sp.n_levels - 1, 0, -1):
            c_in, c_out = ch[i], ch[i - 1]
            defs.append((f"dec{i}.pre", c_in, c_out * s_f, 1))
            defs.append((f"dec{i}.post", c_out + ch[i], c_out, 1))
        defs.append(("out", ch[0] * 2, sp.out_channels, 1))
        return defs

    def _norm_act_defs(self):
        names = []
        for i in range(self.spec.n_levels):
            names += [f"enc{i}.n1", f"enc{i}.n2"]
        for i in range(self.spec.n_levels - 1, 0, -1):
            names += [f"dec{i}.na", f"dec{i}.nb"]
        return names

    def _shape_map(self):
        sp = self.spec
        k_t, k_f = sp.kernel
        shapes = {}
        for name, c_in, c_out, _s in self._conv_defs():
            shapes[f"{name}.weight"] = (c_out, c_in, k_t, k_f)
            shapes[f"{name}.bias"] = (c_out,)
        for name in self._norm_act_defs():
            c = self._stage_channels(name)
            shapes[f"{name}.gain"] = (c,)
            shapes[f"{name}.bias"] = (c,)
            shapes[f"{name.replace('.n', '.a')}.alpha"] = (c,)
        return shapes

    def _stage_channels(self, norm_name: str) -> int:
        level = int(norm_name.split(".")[0][3:])
        if norm_name.startswith("enc"):
            return self.spec.channels[level]
        return self.spec.channels[level - 1]

    def _init_tensors(self, rng: np.random.Generator) -> dict:
        k_t, k_f = self.spec.kernel
        tensors = {}
        for name, c_in, c_out, _s in self._conv_defs():
            fan_in = c_in * k_t * k_f
            tensors[self.prefix + f"{name}.weight"] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, k_t, k_f)
            ).astype(np.float32)
            tensors[self.prefix + f"{name}.bias"] = np.zeros(c_out, dtype=np.float32)
        for name in self._norm_act_defs():
            c = self._stage_channels(name)
            tensors[self.prefix + f"{name}.gain"] = np.ones(c, dtype=np.float32)
            tensors[self.prefix + f"{name}.bias"] = np.zeros(c, dtype=np.float32)
            tensors[self.prefix + f"{name.replace('.n', '.a')}.alpha"] = np.full(
                c, 0.25, dtype=np.float32
            )
        return tensors

    # -- forward ---------------------------------------------------------

    def _norm(self, x, name):
        if self.spec.normalization == "none":
            return x
        return channel_norm(x, self.tensors[f"{name}.gain"], self.tensors[f"{name}.bias"])

    def _act(self, x, name):
        if self.spec.activation == "identity":
            return x
        return prelu(x, self.tensors[f"{name}.alpha"])

    def _conv(self, x, name, stride_f=1):
        return conv2d(x, self.tensors[f"{name}.weight"], self.tensors[f"{name}.bias"], stride_f)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Run the network; returns (output, pre-output decoder features)."""
        sp = self.spec
        if x.ndim != 3 or x.shape[0] != sp.in_channels or x.shape[2] != sp.pad_bins:
            raise DataError(
                f"input shape {x.shape} incompatible with spec "
                f"(in_channels={sp.in_channels}, pad_bins={sp.pad_bins})"
            )
        s_f = sp.stride[1]
        skips = []
        h = x
        for i in range(sp.n_levels):
            h = self._act(self._norm(self._conv(h, f"enc{i}.conv1"), f"enc{i}.n1"), f"enc{i}.a1")
            r = h
            h = self._act(self._norm(self._conv(h, f"enc{i}.conv2"), f"enc{i}.n2"), f"enc{i}.a2")
            h = h + r
            skips.append(h)
            h = self._conv(h, f"enc{i}.down", s_f if i > 0 else 1)

        z = h
        for i in range(sp.n_levels - 1, 0, -1):
            z = self._conv(z, f"dec{i}.pre")
            z = subpixel_upsample(z, s_f)
            z = center_crop_freq(z, skips[i].shape[2])
            z = self._act(self._norm(z, f"dec{i}.na"), f"dec{i}.aa")
            r = z
            z = np.concatenate([z, skips[i]], axis=0)
            z = self._act(self._norm(self._conv(z, f"dec{i}.post"), f"dec{i}.nb"), f"dec{i}.ab")
            z = z + r

        features = z
        out = self._conv(np.concatenate([z, skips[0]], axis=0), "out")
        return out, features

    # -- persistence -----------------------------------------------------

    def named_tensors(self) -> dict:
        return {self.prefix + name: arr for name, arr in self.tensors.items()}

    def parameter_count(self) -> int:
        return sum(int(a.size) for a in self.tensors.values())


def complex_to_channels(bins: np.ndarray) -> np.ndarray:
    """(K bins, L frames) complex -> (2, T=L, F=K) real/imag channels."""
    return np.stack([bins.real.T, bins.imag.T])


def channels_to_complex(x: np.ndarray) -> np.ndarray:
    """(2, T, F) -> (F, T) complex; inverse of complex_to_channels."""
    if x.shape[0] != 2:
        raise DataError(f"expected 2 channels (real, imag), got {x.shape[0]}")
    return (x[0] + 1j * x[1]).T


def init_model_container(
    channels=BASE_CHANNELS, seed: int = 0, sigma_data: float = 0.5
) -> WeightContainer:
    """Random cond+score weight container (for tests, demos and training
    bootstrap)."""
    rng = np.random.default_rng([seed, 0xD1FF])
    cspec = cond_spec(channels)
    sspec = score_spec(channels)
    cond = UNet(cspec, None, rng, prefix="cond.")
    score = UNet(sspec, None, rng, prefix="score.")
    tensors = {}
    tensors.update(cond.named_tensors())
    tensors.update(score.named_tensors())
    return WeightContainer(
        tensors,
        specs={"cond": cspec.to_json(), "score": sspec.to_json()},
        meta={"sigma_data": sigma_data},
    )
