"""Portable named-tensor weight files.

Binary layout: magic ``DVQE``, little-endian u32 format version, u64 JSON
header length, UTF-8 JSON header, then the raw float32 little-endian
payload. The header carries the format version, the network spec echo and
per-tensor ``{shape, offset, nbytes}`` entries; offsets are relative to the
payload start, tightly packed in sorted-name order so save -> load -> save
is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from handsfree.errors import WeightFormatError

MAGIC = b"DVQE"
FORMAT_VERSION = 1


@dataclass
class WeightContainer:
    """Named float32 tensors plus the spec/meta JSON they belong to."""

    tensors: dict
    specs: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for name, arr in self.tensors.items():
            a = np.ascontiguousarray(arr, dtype=np.float32)
            clean[str(name)] = a
        self.tensors = clean

    def __eq__(self, other):
        if not isinstance(other, WeightContainer):
            return NotImplemented
        if self.specs != other.specs or self.meta != other.meta:
            return False
        if self.tensors.keys() != other.tensors.keys():
            return False
        return all(np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors)

    def total_parameters(self) -> int:
        return sum(int(a.size) for a in self.tensors.values())


def save_weights(container: WeightContainer, path) -> None:
    """Write a container; deterministic for identical content."""
    entries = {}
    offset = 0
    names = sorted(container.tensors)
    for name in names:
        arr = container.tensors[name]
        nbytes = arr.size * 4
        entries[name] = {"shape": list(arr.shape), "offset": offset, "nbytes": nbytes}
        offset += nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "specs": container.specs,
        "meta": container.meta,
        "tensors": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in names:
            f.write(container.tensors[name].astype("<f4").tobytes())


def load_weights(path) -> WeightContainer:
    """Read and validate a container.

    Distinct failures: bad magic / unparseable header (corrupt header),
    unsupported version, overlapping tensor offsets, payload truncation.
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise WeightFormatError(f"cannot read weight file: {exc}") from exc
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise WeightFormatError(f"{path}: corrupt header (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise WeightFormatError(
            f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})"
        )
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    if 16 + hlen > len(raw):
        raise WeightFormatError(f"{path}: corrupt header (length field exceeds file)")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise WeightFormatError(f"{path}: header format_version mismatch")

    payload = raw[16 + hlen :]
    entries = header.get("tensors", {})
    spans = []
    for name, ent in entries.items():
        shape = tuple(int(v) for v in ent["shape"])
        nbytes = int(ent["nbytes"])
        offset = int(ent["offset"])
        if nbytes != int(np.prod(shape, dtype=np.int64)) * 4:
            raise WeightFormatError(f"{path}: tensor {name!r} nbytes/shape mismatch")
        if offset < 0 or offset + nbytes > len(payload):
            raise WeightFormatError(
                f"{path}: tensor {name!r} truncated (needs bytes up to "
                f"{offset + nbytes}, payload has {len(payload)})"
            )
        spans.append((offset, offset + nbytes, name))
    spans.sort()
    for (s0, e0, n0), (s1, _e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise WeightFormatError(f"{path}: tensors {n0!r} and {n1!r} overlap")

    tensors = {}
    for name, ent in entries.items():
        shape = tuple(int(v) for v in ent["shape"])
        offset = int(ent["offset"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.reshape(shape).copy()
    return WeightContainer(tensors, header.get("specs", {}), header.get("meta", {}))
