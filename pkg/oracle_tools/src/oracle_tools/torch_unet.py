"""Torch twin of the toolkit's U-Net forward pass.

Same topology, same tensor names, independent computational engine
(torch convolutions vs. the toolkit's numpy GEMMs). Used as the source
framework for checkpoint export and the forward-agreement check.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

NORM_EPS = 1e-5


def spec_conv_defs(spec: dict):
    """(name, c_in, c_out, stride_f) for every convolution, in order."""
    ch = list(spec["channels"])
    s_f = spec["stride"][1]
    defs = []
    prev = spec["in_channels"]
    for i, c in enumerate(ch):
        defs.append((f"enc{i}.conv1", prev, c, 1))
        defs.append((f"enc{i}.conv2", c, c, 1))
        defs.append((f"enc{i}.down", c, c, s_f if i > 0 else 1))
        prev = c
    for i in range(len(ch) - 1, 0, -1):
        defs.append((f"dec{i}.pre", ch[i], ch[i - 1] * s_f, 1))
        defs.append((f"dec{i}.post", ch[i - 1] + ch[i], ch[i - 1], 1))
    defs.append(("out", ch[0] * 2, spec["out_channels"], 1))
    return defs


def spec_norm_act_defs(spec: dict):
    ch = list(spec["channels"])
    names = []
    for i in range(len(ch)):
        names += [(f"enc{i}.n1", ch[i]), (f"enc{i}.n2", ch[i])]
    for i in range(len(ch) - 1, 0, -1):
        names += [(f"dec{i}.na", ch[i - 1]), (f"dec{i}.nb", ch[i - 1])]
    return names


def expected_shapes(spec: dict) -> dict:
    k_t, k_f = spec["kernel"]
    shapes = {}
    for name, c_in, c_out, _s in spec_conv_defs(spec):
        shapes[f"{name}.weight"] = (c_out, c_in, k_t, k_f)
        shapes[f"{name}.bias"] = (c_out,)
    for name, c in spec_norm_act_defs(spec):
        shapes[f"{name}.gain"] = (c,)
        shapes[f"{name}.bias"] = (c,)
        shapes[f"{name.replace('.n', '.a')}.alpha"] = (c,)
    return shapes


def init_checkpoint(spec: dict, seed: int = 0) -> dict:
    """Random torch checkpoint with the architecture's tensor names."""
    gen = torch.Generator().manual_seed(seed)
    k_t, k_f = spec["kernel"]
    ckpt = {}
    for name, shape in expected_shapes(spec).items():
        if name.endswith(".weight") and len(shape) == 4:
            fan_in = shape[1] * k_t * k_f
            ckpt[name] = torch.randn(shape, generator=gen) * math.sqrt(2.0 / fan_in)
        elif name.endswith(".alpha"):
            ckpt[name] = torch.full(shape, 0.25)
        elif name.endswith(".gain"):
            ckpt[name] = torch.ones(shape)
        else:
            ckpt[name] = torch.zeros(shape)
    return ckpt


def _same_pad(x, k_t, k_f, stride_f):
    t, f = x.shape[2], x.shape[3]
    out_f = -(-f // stride_f)
    pad_f = max((out_f - 1) * stride_f + k_f - f, 0)
    pad_t = k_t - 1
    return F.pad(x, (pad_f // 2, pad_f - pad_f // 2, pad_t // 2, pad_t - pad_t // 2))


class TorchUNet:
    """Forward-only evaluation of a checkpoint under the shared topology."""

    def __init__(self, spec: dict, checkpoint: dict):
        self.spec = spec
        self.t = {k: torch.as_tensor(v, dtype=torch.float32) for k, v in checkpoint.items()}
        missing = set(expected_shapes(spec)) - set(self.t)
        if missing:
            raise KeyError(f"checkpoint missing tensors: {sorted(missing)}")

    def _conv(self, x, name, stride_f=1):
        k_t, k_f = self.spec["kernel"]
        x = _same_pad(x, k_t, k_f, stride_f)
        return F.conv2d(x, self.t[f"{name}.weight"], self.t[f"{name}.bias"],
                        stride=(1, stride_f))

    def _norm(self, x, name):
        if self.spec.get("normalization", "channel") == "none":
            return x
        mu = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
        g = self.t[f"{name}.gain"].view(1, -1, 1, 1)
        b = self.t[f"{name}.bias"].view(1, -1, 1, 1)
        return (x - mu) / torch.sqrt(var + NORM_EPS) * g + b

    def _act(self, x, name):
        if self.spec.get("activation", "prelu") == "identity":
            return x
        a = self.t[f"{name}.alpha"].view(1, -1, 1, 1)
        return torch.clamp(x, min=0) + a * torch.clamp(x, max=0)

    @staticmethod
    def _shuffle(x, r):
        n, c, t, f = x.shape
        return (
            x.view(n, c // r, r, t, f).permute(0, 1, 3, 4, 2).reshape(n, c // r, t, f * r)
        )

    @staticmethod
    def _crop(x, target_f):
        f = x.shape[3]
        if f == target_f:
            return x
        off = (f - target_f) // 2
        return x[:, :, :, off : off + target_f]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        spec = self.spec
        s_f = spec["stride"][1]
        h = torch.as_tensor(x, dtype=torch.float32)[None]
        skips = []
        with torch.no_grad():
            for i in range(len(spec["channels"])):
                h = self._act(self._norm(self._conv(h, f"enc{i}.conv1"), f"enc{i}.n1"), f"enc{i}.a1")
                r = h
                h = self._act(self._norm(self._conv(h, f"enc{i}.conv2"), f"enc{i}.n2"), f"enc{i}.a2")
                h = h + r
                skips.append(h)
                h = self._conv(h, f"enc{i}.down", s_f if i > 0 else 1)
            z = h
            for i in range(len(spec["channels"]) - 1, 0, -1):
                z = self._conv(z, f"dec{i}.pre")
                z = self._shuffle(z, s_f)
                z = self._crop(z, skips[i].shape[3])
                z = self._act(self._norm(z, f"dec{i}.na"), f"dec{i}.aa")
                r = z
                z = torch.cat([z, skips[i]], dim=1)
                z = self._act(self._norm(self._conv(z, f"dec{i}.post"), f"dec{i}.nb"), f"dec{i}.ab")
                z = z + r
            features = z
            out = self._conv(torch.cat([z, skips[0]], dim=1), "out")
        return out[0].numpy(), features[0].numpy()
