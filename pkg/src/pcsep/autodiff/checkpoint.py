"""Versioned binary container for named float64 arrays.

Layout (all integers little-endian)::

    b"PCSEP001"
    uint32  array count
    repeat:
        uint32  name length, then UTF-8 name bytes
        uint32  ndim, then ndim x uint64 dims
        prod(dims) x float64 values, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict

import numpy as np

from ..errors import ParseError

MAGIC = b"PCSEP001"
_META_PREFIX = "meta:"


def dumps(arrays: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def loads(buf: bytes, path=None) -> Dict[str, np.ndarray]:
    if buf[:8] != MAGIC:
        raise ParseError("bad checkpoint magic", 0, path)
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise ParseError("truncated checkpoint", pos, path)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(buf):
        raise ParseError("trailing bytes after last array", pos, path)
    return out


def save(path, arrays: Dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(arrays))
    tmp.replace(path)


def load(path) -> Dict[str, np.ndarray]:
    return loads(Path(path).read_bytes(), path=str(path))


def encode_meta(key: str, value) -> Dict[str, np.ndarray]:
    """Store JSON metadata as a byte-valued float64 array."""
    raw = json.dumps(value, sort_keys=True).encode("utf-8")
    return {_META_PREFIX + key: np.frombuffer(raw, dtype=np.uint8).astype(np.float64)}


def decode_meta(arrays: Dict[str, np.ndarray], key: str):
    arr = arrays.get(_META_PREFIX + key)
    if arr is None:
        return None
    return json.loads(arr.astype(np.uint8).tobytes().decode("utf-8"))
