"""
MVS camera text files.

    extrinsic
    <4 rows of 4 floats>

    intrinsic
    <3 rows of 3 floats>

    depth_min depth_interval depth_num depth_max
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from app.core.errors import CameraError, FormatError
from app.geometry.camera import Camera


def _fmt(v: float) -> str:
    return repr(float(v))


def format_camera(cam: Camera) -> str:
    lines = ["extrinsic"]
    lines += [" ".join(_fmt(v) for v in row) for row in cam.E]
    lines += ["", "intrinsic"]
    lines += [" ".join(_fmt(v) for v in row) for row in cam.K]
    lines += ["", f"{_fmt(cam.depth_min)} {_fmt(cam.depth_interval)} {cam.depth_num} {_fmt(cam.depth_max)}"]
    return "\n".join(lines) + "\n"


def parse_camera(text: str, width: int | None = None, height: int | None = None, source: str = "<camera>") -> Camera:
    """
    Parse one camera file. Image size is not part of the format; when not
    given it is inferred from the principal point (2c + 1).
    """
    rows = [line.split() for line in text.splitlines()]
    rows = [r for r in rows if r]
    try:
        if rows[0] != ["extrinsic"] or rows[5] != ["intrinsic"]:
            raise FormatError(f"{source}: expected 'extrinsic' and 'intrinsic' headers")
        E = np.array([[float(v) for v in r] for r in rows[1:5]])
        K = np.array([[float(v) for v in r] for r in rows[6:9]])
        depth_row = rows[9]
        depth_min, depth_num = float(depth_row[0]), int(float(depth_row[2]))
        depth_max = float(depth_row[3]) if len(depth_row) > 3 else depth_min + float(depth_row[1]) * (depth_num - 1)
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{source}: malformed camera file ({exc})") from None
    if E.shape != (4, 4) or K.shape != (3, 3):
        raise FormatError(f"{source}: extrinsic must be 4x4 and intrinsic 3x3")
    if width is None:
        width = int(round(2 * K[0, 2] + 1))
    if height is None:
        height = int(round(2 * K[1, 2] + 1))
    try:
        return Camera(K, E, depth_min, depth_max, width, height, depth_num)
    except CameraError as exc:
        raise CameraError(f"{source}: {exc.detail}") from None


def write_camera(path: str | os.PathLike, cam: Camera) -> None:
    Path(path).write_text(format_camera(cam))


def read_camera(path: str | os.PathLike, width: int | None = None, height: int | None = None) -> Camera:
    return parse_camera(Path(path).read_text(), width, height, source=str(path))


def read_camera_dir(directory: str | os.PathLike, width: int | None = None, height: int | None = None) -> list[Camera]:
    """All `*_cam.txt` files in id order."""
    paths = sorted(Path(directory).glob("*_cam.txt"))
    if not paths:
        raise FormatError(f"{directory}: no *_cam.txt files")
    return [read_camera(p, width, height) for p in paths]
