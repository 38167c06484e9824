"""Checkpoint export into the portable weight-container format.

The container layout (magic ``DVQE``, little-endian u32 version, u64 JSON
header length, JSON header with per-tensor shape/offset/nbytes, float32
little-endian payload packed in sorted-name order) is the interface
contract with the main toolkit; this writer implements it independently.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from oracle_tools.torch_unet import expected_shapes

MAGIC = b"DVQE"
FORMAT_VERSION = 1


def write_container(tensors: dict, specs: dict, meta: dict, out_path) -> None:
    arrays = {
        str(k): np.ascontiguousarray(np.asarray(v), dtype=np.float32)
        for k, v in tensors.items()
    }
    names = sorted(arrays)
    entries = {}
    offset = 0
    for name in names:
        nbytes = arrays[name].size * 4
        entries[name] = {"shape": list(arrays[name].shape), "offset": offset, "nbytes": nbytes}
        offset += nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "specs": specs,
        "meta": meta,
        "tensors": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(out_path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in names:
            f.write(arrays[name].astype("<f4").tobytes())


def load_checkpoint(source) -> dict:
    """Accept a dict of tensors or a torch-saved file path."""
    if isinstance(source, dict):
        return source
    obj = torch.load(source, map_location="cpu", weights_only=True)
    if not isinstance(obj, dict):
        raise ValueError(f"{source}: expected a state-dict checkpoint")
    return obj


def export_weights(checkpoint, spec_json, out_path, prefix: str = "",
                   sigma_data: float = 0.5, extra_specs: dict | None = None) -> None:
    """Validate a checkpoint against a UNet spec and write the container.

    Every expected tensor must be present with the exact shape; unmapped
    checkpoint tensors are listed exhaustively and rejected before any
    bytes are written.
    """
    if isinstance(spec_json, (str, Path)):
        with open(spec_json) as f:
            spec = json.load(f)
    else:
        spec = dict(spec_json)
    ckpt = {str(k): np.asarray(torch.as_tensor(v).detach().cpu().numpy())
            for k, v in load_checkpoint(checkpoint).items()}

    expected = expected_shapes(spec)
    missing = sorted(set(expected) - set(ckpt))
    if missing:
        raise ValueError(f"checkpoint is missing tensors: {missing}")
    unmapped = sorted(set(ckpt) - set(expected))
    if unmapped:
        raise ValueError(f"checkpoint tensors do not map to the spec: {unmapped}")
    for name, shape in expected.items():
        if tuple(ckpt[name].shape) != tuple(shape):
            raise ValueError(
                f"tensor {name!r} has shape {tuple(ckpt[name].shape)}, "
                f"spec requires {tuple(shape)}"
            )
    tensors = {prefix + name: ckpt[name] for name in expected}
    specs = {"net" if not prefix else prefix.rstrip("."): spec}
    if extra_specs:
        specs.update(extra_specs)
    write_container(tensors, specs, {"sigma_data": sigma_data}, out_path)
