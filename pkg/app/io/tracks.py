"""
Track files: one track per line, `x y z v1 v2 ... vk`.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from app.core.errors import FormatError
from app.geometry.tracks import TrackSet


def write_tracks(path: str | os.PathLike, tracks: TrackSet) -> None:
    lines = []
    for p, views in zip(tracks.points, tracks.views):
        coords = " ".join(repr(float(c)) for c in p)
        lines.append(f"{coords} {' '.join(str(v) for v in sorted(views))}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_tracks(path: str | os.PathLike) -> TrackSet:
    points, views = [], []
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        if len(fields) < 5:
            raise FormatError(f"{path}:{n}: expected 'x y z' and at least two view ids")
        try:
            points.append([float(v) for v in fields[:3]])
            views.append([int(v) for v in fields[3:]])
        except ValueError:
            raise FormatError(f"{path}:{n}: non-numeric field") from None
    return TrackSet(np.array(points, dtype=np.float64).reshape(-1, 3), views)
