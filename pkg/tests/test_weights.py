import json
import struct

import numpy as np
import pytest

from handsfree.errors import WeightFormatError
from handsfree.weights import FORMAT_VERSION, WeightContainer, load_weights, save_weights


@pytest.fixture
def container(rng):
    return WeightContainer(
        tensors={
            "net.conv.weight": rng.standard_normal((4, 3, 3, 5)).astype(np.float32),
            "net.conv.bias": rng.standard_normal(4).astype(np.float32),
            "net.norm.gain": np.ones(4, dtype=np.float32),
        },
        specs={"net": {"channels": [4]}},
        meta={"sigma_data": 0.5},
    )


class TestRoundTrip:
    def test_save_load_equal(self, tmp_path, container):
        path = tmp_path / "w.dvqe"
        save_weights(container, path)
        assert load_weights(path) == container

    def test_save_is_byte_deterministic(self, tmp_path, container):
        p1, p2 = tmp_path / "a.dvqe", tmp_path / "b.dvqe"
        save_weights(container, p1)
        save_weights(load_weights(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_and_version_layout(self, tmp_path, container):
        path = tmp_path / "w.dvqe"
        save_weights(container, path)
        raw = path.read_bytes()
        assert raw[:4] == b"DVQE"
        assert struct.unpack_from("<I", raw, 4)[0] == FORMAT_VERSION


class TestFailures:
    def test_truncated_payload(self, tmp_path, container):
        path = tmp_path / "w.dvqe"
        save_weights(container, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(WeightFormatError, match="truncated"):
            load_weights(path)

    def test_bad_magic(self, tmp_path, container):
        path = tmp_path / "w.dvqe"
        save_weights(container, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(WeightFormatError, match="magic"):
            load_weights(path)

    def test_unknown_version(self, tmp_path, container):
        path = tmp_path / "w.dvqe"
        save_weights(container, path)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<I", raw, 4, 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(WeightFormatError, match="version 99"):
            load_weights(path)

    def test_corrupt_header_json(self, tmp_path, container):
        path = tmp_path / "w.dvqe"
        save_weights(container, path)
        raw = bytearray(path.read_bytes())
        raw[16] = ord("{") ^ 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(WeightFormatError, match="corrupt header"):
            load_weights(path)

    def test_overlapping_offsets(self, tmp_path):
        header = {
            "format_version": FORMAT_VERSION,
            "specs": {},
            "meta": {},
            "tensors": {
                "a": {"shape": [2], "offset": 0, "nbytes": 8},
                "b": {"shape": [2], "offset": 4, "nbytes": 8},
            },
        }
        blob = json.dumps(header).encode()
        path = tmp_path / "overlap.dvqe"
        with open(path, "wb") as f:
            f.write(b"DVQE")
            f.write(struct.pack("<I", FORMAT_VERSION))
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            f.write(b"\x00" * 12)
        with pytest.raises(WeightFormatError, match="overlap"):
            load_weights(path)

    def test_nbytes_shape_mismatch(self, tmp_path):
        header = {
            "format_version": FORMAT_VERSION,
            "specs": {},
            "meta": {},
            "tensors": {"a": {"shape": [3], "offset": 0, "nbytes": 8}},
        }
        blob = json.dumps(header).encode()
        path = tmp_path / "bad.dvqe"
        with open(path, "wb") as f:
            f.write(b"DVQE" + struct.pack("<I", FORMAT_VERSION) + struct.pack("<Q", len(blob)))
            f.write(blob + b"\x00" * 12)
        with pytest.raises(WeightFormatError, match="mismatch"):
            load_weights(path)
