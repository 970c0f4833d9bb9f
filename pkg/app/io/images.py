"""
Netpbm (PPM P6 / PGM P5, 8-bit) and PFM codecs.

Colors are float arrays in [0, 1] of shape (H, W, 3); depth maps are float
arrays (H, W) stored as grayscale little-endian PFM (scale -1.0), bottom row first.
"""

from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np

from app.core.errors import FormatError

_NETPBM_HEADER = re.compile(rb"^(P[56])\s+(\d+)\s+(\d+)\s+(\d+)\s")


def _to_bytes(values: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path: str | os.PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(f"PPM needs an (H, W, 3) array, got {image.shape}")
    h, w, _ = image.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + _to_bytes(image).tobytes())


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise FormatError(f"PGM needs an (H, W) array, got {image.shape}")
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + _to_bytes(image).tobytes())


def _read_netpbm(path: str | os.PathLike, magic: bytes) -> np.ndarray:
    buf = Path(path).read_bytes()
    match = _NETPBM_HEADER.match(buf)
    if match is None or match.group(1) != magic:
        raise FormatError(f"{path}: not a binary {magic.decode()} file")
    w, h, maxval = (int(match.group(i)) for i in (2, 3, 4))
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit files are supported (maxval {maxval})")
    channels = 3 if magic == b"P6" else 1
    payload = buf[match.end():]
    if len(payload) < w * h * channels:
        raise FormatError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(payload[:w * h * channels], dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(h, w, 3) if channels == 3 else pixels.reshape(h, w)


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    return _read_netpbm(path, b"P6")


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    return _read_netpbm(path, b"P5")


def write_pfm(path: str | os.PathLike, depth: np.ndarray) -> None:
    depth = np.asarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise FormatError(f"PFM depth needs an (H, W) array, got {depth.shape}")
    h, w = depth.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(depth[::-1]).tobytes())


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if len(parts) < 4 or parts[0].strip() not in (b"Pf", b"PF"):
        raise FormatError(f"{path}: not a PFM file")
    channels = 3 if parts[0].strip() == b"PF" else 1
    try:
        w, h = (int(v) for v in parts[1].split())
        scale = float(parts[2])
    except ValueError:
        raise FormatError(f"{path}: malformed PFM header") from None
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    if len(parts[3]) < count * 4:
        raise FormatError(f"{path}: truncated PFM payload")
    data = np.frombuffer(parts[3][:count * 4], dtype=dtype).astype(np.float32)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].copy()
