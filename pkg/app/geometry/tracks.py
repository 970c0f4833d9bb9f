"""
Sparse 3D tracks with per-view visibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from app.core.errors import SceneError


@dataclass
class TrackSet:
    points: np.ndarray                # (N, 3) world positions
    views: list[frozenset[int]]       # visible view ids per track

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.views = [frozenset(int(v) for v in vs) for vs in self.views]
        if len(self.views) != len(self.points):
            raise SceneError(f"{len(self.points)} track positions but {len(self.views)} visibility lists")
        for n, vs in enumerate(self.views):
            if len(vs) < 2:
                raise SceneError(f"track {n} is visible in {len(vs)} view(s); at least 2 required")

    def __len__(self) -> int:
        return len(self.points)

    def validate_views(self, num_views: int) -> None:
        """Every referenced view id must name an existing camera."""
        for n, vs in enumerate(self.views):
            bad = [v for v in vs if not 0 <= v < num_views]
            if bad:
                raise SceneError(f"track {n} references unknown view(s) {sorted(bad)} (have {num_views})")

    def common(self, i: int, j: int) -> np.ndarray:
        """Positions of tracks visible in both views i and j."""
        mask = np.fromiter((i in vs and j in vs for vs in self.views), dtype=bool, count=len(self.views))
        return self.points[mask]

    def transformed(self, scale: float = 1.0, rotation: np.ndarray | None = None,
                    translation: np.ndarray | None = None) -> "TrackSet":
        pts = self.points * scale
        if rotation is not None:
            pts = pts @ np.asarray(rotation).T
        if translation is not None:
            pts = pts + translation
        return TrackSet(pts, list(self.views))
