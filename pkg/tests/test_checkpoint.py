import struct

import numpy as np
import pytest

from subnetpack.checkpoint import (MAGIC, VERSION, checkpoint_version,
                                   decode_state, encode_state,
                                   load_checkpoint, save_checkpoint)
from subnetpack.errors import CheckpointError


def deep_equal(a, b):
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return (isinstance(a, np.ndarray) and isinstance(b, np.ndarray)
                and a.dtype == b.dtype and a.shape == b.shape
                and np.array_equal(a, b))
    if isinstance(a, dict):
        return (isinstance(b, dict) and a.keys() == b.keys()
                and all(deep_equal(a[k], b[k]) for k in a))
    if isinstance(a, list):
        return (isinstance(b, list) and len(a) == len(b)
                and all(deep_equal(x, y) for x, y in zip(a, b)))
    return type(a) is type(b) and a == b


SAMPLE = {
    "none": None,
    "int": 42,
    "negative": -(2**40),
    "float": 0.1,
    "text": "subnet ✓",
    "blob": b"\x00\xffraw",
    "list": [1, [2.5, None], "x"],
    "nested": {"z": 1, "a": [b"q"]},
    "f64": np.linspace(-1, 1, 7),
    "f32": np.float32([[1.5, -2.25], [0.0, 3.125]]),
    "i64": np.int64([[-5], [9]]),
    "u32": np.uint32([0, 1, 2**32 - 1]),
    "bools": np.array([True, False, True]),
    "empty": np.zeros((0, 3)),
}


def test_encode_decode_identity():
    back = decode_state(encode_state(SAMPLE))
    assert deep_equal(back, SAMPLE)


def test_encode_is_deterministic():
    assert encode_state(SAMPLE) == encode_state(SAMPLE)
    # key order never changes the bytes
    a = encode_state({"a": 1, "b": 2})
    b = encode_state({"b": 2, "a": 1})
    assert a == b


def test_encode_rejects_unknown_types():
    with pytest.raises(TypeError):
        encode_state({"x": object()})
    with pytest.raises(TypeError):
        encode_state({"x": True})  # bools are not silently stored as ints
    with pytest.raises(TypeError):
        encode_state({1: "non-string key"})


def test_decode_rejects_stray_bytes():
    payload = encode_state({"a": 1})
    with pytest.raises(CheckpointError):
        decode_state(payload + b"\x00")


def test_decode_rejects_truncation():
    payload = encode_state(SAMPLE)
    with pytest.raises(CheckpointError):
        decode_state(payload[:-3])


def test_save_load_round_trip(tmp_path):
    path = tmp_path / "state.bin"
    save_checkpoint(path, SAMPLE)
    assert deep_equal(load_checkpoint(path), SAMPLE)
    assert checkpoint_version(path) == VERSION


def test_save_is_byte_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(p1, SAMPLE)
    save_checkpoint(p2, SAMPLE)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_detects_flipped_payload_byte(tmp_path):
    path = tmp_path / "state.bin"
    save_checkpoint(path, SAMPLE)
    raw = bytearray(path.read_bytes())
    raw[20] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "state.bin"
    save_checkpoint(path, SAMPLE)
    raw = bytearray(path.read_bytes())
    raw[:8] = b"NOTAPACK"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        checkpoint_version(path)


def test_load_rejects_future_version(tmp_path):
    path = tmp_path / "state.bin"
    save_checkpoint(path, SAMPLE)
    raw = bytearray(path.read_bytes())
    raw[8:12] = struct.pack("<I", VERSION + 1)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="newer"):
        load_checkpoint(path)
    assert checkpoint_version(path) == VERSION + 1


def test_load_rejects_short_file(tmp_path):
    path = tmp_path / "stub.bin"
    path.write_bytes(MAGIC)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(b"")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_arrays_survive_non_native_order(tmp_path):
    # big-endian input is normalized on write and reads back little-endian
    arr = np.arange(6, dtype=">f8").reshape(2, 3)
    path = tmp_path / "be.bin"
    save_checkpoint(path, {"arr": arr})
    back = load_checkpoint(path)["arr"]
    np.testing.assert_array_equal(back, arr.astype("<f8"))
    assert back.dtype == np.dtype("float64")
