"""Self-validating binary checkpoints.

Layout: 8-byte magic, little-endian u32 format version, payload, and a
trailing little-endian u64 BLAKE2b digest of the payload. The payload is a
tagged tree of None/int/float/str/bytes/list/dict/ndarray nodes, everything
little-endian, dict keys sorted so equal states serialize to equal bytes.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"SUBNPACK"
VERSION = 1

_T_NONE = 0
_T_INT = 1
_T_FLOAT = 2
_T_STR = 3
_T_BYTES = 4
_T_LIST = 5
_T_DICT = 6
_T_ARRAY = 7


def _encode_into(buf: bytearray, node) -> None:
    if node is None:
        buf.append(_T_NONE)
    elif isinstance(node, bool):
        raise TypeError("encode booleans as ints explicitly")
    elif isinstance(node, (int, np.integer)):
        buf.append(_T_INT)
        buf += struct.pack("<q", int(node))
    elif isinstance(node, (float, np.floating)):
        buf.append(_T_FLOAT)
        buf += struct.pack("<d", float(node))
    elif isinstance(node, str):
        raw = node.encode("utf-8")
        buf.append(_T_STR)
        buf += struct.pack("<Q", len(raw))
        buf += raw
    elif isinstance(node, (bytes, bytearray)):
        buf.append(_T_BYTES)
        buf += struct.pack("<Q", len(node))
        buf += node
    elif isinstance(node, (list, tuple)):
        buf.append(_T_LIST)
        buf += struct.pack("<Q", len(node))
        for item in node:
            _encode_into(buf, item)
    elif isinstance(node, dict):
        buf.append(_T_DICT)
        buf += struct.pack("<Q", len(node))
        for key in sorted(node):
            if not isinstance(key, str):
                raise TypeError(f"dict keys must be str, got {type(key).__name__}")
            _encode_into(buf, key)
            _encode_into(buf, node[key])
    elif isinstance(node, np.ndarray):
        arr = np.ascontiguousarray(node)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        dtype_text = arr.dtype.str.encode("ascii")
        buf.append(_T_ARRAY)
        buf += struct.pack("<B", len(dtype_text))
        buf += dtype_text
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        raw = arr.tobytes()
        buf += struct.pack("<Q", len(raw))
        buf += raw
    else:
        raise TypeError(f"cannot encode {type(node).__name__}")


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"{self.path}: payload truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode_node(r: _Reader):
    tag = r.take(1)[0]
    if tag == _T_NONE:
        return None
    if tag == _T_INT:
        return r.unpack("<q")[0]
    if tag == _T_FLOAT:
        return r.unpack("<d")[0]
    if tag == _T_STR:
        (n,) = r.unpack("<Q")
        return r.take(n).decode("utf-8")
    if tag == _T_BYTES:
        (n,) = r.unpack("<Q")
        return bytes(r.take(n))
    if tag == _T_LIST:
        (n,) = r.unpack("<Q")
        return [_decode_node(r) for _ in range(n)]
    if tag == _T_DICT:
        (n,) = r.unpack("<Q")
        out = {}
        for _ in range(n):
            key = _decode_node(r)
            out[key] = _decode_node(r)
        return out
    if tag == _T_ARRAY:
        (dlen,) = r.unpack("<B")
        dtype = np.dtype(r.take(dlen).decode("ascii"))
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        (nbytes,) = r.unpack("<Q")
        return np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape).copy()
    raise CheckpointError(f"{r.path}: unknown node tag {tag} at byte {r.pos - 1}")


def encode_state(state: dict) -> bytes:
    buf = bytearray()
    _encode_into(buf, state)
    return bytes(buf)


def decode_state(payload: bytes, path: str = "<memory>") -> dict:
    r = _Reader(payload, path)
    node = _decode_node(r)
    if r.pos != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - r.pos} stray payload bytes")
    return node


def _digest(payload: bytes) -> int:
    return int.from_bytes(
        hashlib.blake2b(payload, digest_size=8).digest(), "little")


def save_checkpoint(path, state: dict) -> None:
    payload = encode_state(state)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(payload)
        fh.write(struct.pack("<Q", _digest(payload)))


def checkpoint_version(path) -> int:
    """Format version from the header, validating the magic only."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(len(MAGIC) + 4)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path!r}: {exc}") from None
    if len(head) < len(MAGIC) + 4:
        raise CheckpointError(f"{path}: file too short ({len(head)} bytes)")
    if head[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {head[:len(MAGIC)]!r}")
    return struct.unpack_from("<I", head, len(MAGIC))[0]


def load_checkpoint(path) -> dict:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path!r}: {exc}") from None
    head = len(MAGIC) + 4
    if len(blob) < head + 8:
        raise CheckpointError(f"{path}: file too short ({len(blob)} bytes)")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:len(MAGIC)]!r}")
    (version,) = struct.unpack_from("<I", blob, len(MAGIC))
    if version > VERSION:
        raise CheckpointError(
            f"{path}: format version {version} newer than supported {VERSION}")
    payload, trailer = blob[head:-8], blob[-8:]
    (stored,) = struct.unpack("<Q", trailer)
    actual = _digest(payload)
    if stored != actual:
        raise CheckpointError(
            f"{path}: checksum mismatch (stored {stored:#018x}, "
            f"computed {actual:#018x})")
    return decode_state(payload, str(path))
