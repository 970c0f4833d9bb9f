"""
Binary checkpoint files.

Layout: an 8-byte magic, then one record per array:
    u32 name length | name (utf-8) | u32 rank | u32 dim x rank | payload
All integers are little-endian. "UFOR0001" files carry f32 payloads,
"UFOR0002" files carry f64 payloads (used for double-precision states).
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from app.core.errors import FormatError

MAGIC_SINGLE = b"UFOR0001"
MAGIC_DOUBLE = b"UFOR0002"
_PAYLOAD = {MAGIC_SINGLE: np.dtype("<f4"), MAGIC_DOUBLE: np.dtype("<f8")}
_U32 = np.dtype("<u4")


def save_arrays(path: str | os.PathLike, arrays: dict[str, np.ndarray], double: bool = False) -> None:
    magic = MAGIC_DOUBLE if double else MAGIC_SINGLE
    dtype = _PAYLOAD[magic]
    chunks = [magic]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        chunks.append(np.array([len(raw)], dtype=_U32).tobytes())
        chunks.append(raw)
        chunks.append(np.array([arr.ndim, *arr.shape], dtype=_U32).tobytes())
        chunks.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def load_arrays(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], bool]:
    """Read a checkpoint; returns (arrays by name, whether the payload is double)."""
    buf = Path(path).read_bytes()
    magic = buf[:8]
    if magic not in _PAYLOAD:
        raise FormatError(f"{path}: unknown checkpoint magic {magic!r}")
    dtype = _PAYLOAD[magic]
    pos = 8
    arrays: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{path}: truncated checkpoint at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        name_len = int(np.frombuffer(take(4), dtype=_U32)[0])
        name = take(name_len).decode("utf-8")
        rank = int(np.frombuffer(take(4), dtype=_U32)[0])
        dims = tuple(int(d) for d in np.frombuffer(take(4 * rank), dtype=_U32))
        count = int(np.prod(dims)) if dims else 1
        payload = np.frombuffer(take(count * dtype.itemsize), dtype=dtype)
        arrays[name] = payload.reshape(dims).copy()
    return arrays, magic == MAGIC_DOUBLE
