"""
Scene directories.

    DIR/cams/0000_cam.txt ...
    DIR/images/0000.ppm ...
    DIR/depths/0000.pfm ...      z depth, 0 where no surface is hit
    DIR/tracks.txt
    DIR/spec.json                optional, the generating SceneSpec
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger
from pydantic import ValidationError

from app.core.errors import FormatError, SceneError
from app.geometry.camera import Camera
from app.geometry.tracks import TrackSet
from app.io.cameras import read_camera, write_camera
from app.io.images import read_pfm, read_ppm, write_pfm, write_ppm
from app.io.tracks import read_tracks, write_tracks
from app.schemas.scene import SceneSpec


@dataclass
class Scene:
    cams: list[Camera]
    images: np.ndarray               # (N, H, W, 3) in [0, 1]
    depths: np.ndarray | None        # (N, H, W) z depth, 0 = no surface
    tracks: TrackSet | None
    spec: SceneSpec | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if len(self.cams) != len(self.images):
            raise SceneError(f"{len(self.cams)} cameras but {len(self.images)} images")
        if self.depths is not None and self.depths.shape != self.images.shape[:3]:
            raise SceneError(f"depth maps {self.depths.shape} do not match images {self.images.shape}")
        if self.tracks is not None:
            self.tracks.validate_views(len(self.cams))

    def __len__(self) -> int:
        return len(self.cams)

    @property
    def depth_range(self) -> float:
        return float(np.mean([c.depth_max - c.depth_min for c in self.cams]))

    def select(self, views: list[int]) -> tuple[np.ndarray, list[Camera]]:
        """Images and cameras of the given view ids, in that order."""
        bad = [v for v in views if not 0 <= v < len(self)]
        if bad:
            raise SceneError(f"unknown view id(s) {bad}; scene has {len(self)} views")
        return self.images[list(views)], [self.cams[v] for v in views]


def save_scene(directory: str | os.PathLike, scene: Scene) -> None:
    root = Path(directory)
    for sub in ("cams", "images", "depths"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i, cam in enumerate(scene.cams):
        write_camera(root / "cams" / f"{i:04d}_cam.txt", cam)
        write_ppm(root / "images" / f"{i:04d}.ppm", scene.images[i])
        if scene.depths is not None:
            write_pfm(root / "depths" / f"{i:04d}.pfm", scene.depths[i])
    if scene.tracks is not None:
        write_tracks(root / "tracks.txt", scene.tracks)
    if scene.spec is not None:
        (root / "spec.json").write_text(scene.spec.model_dump_json(indent=2))
    logger.info(f"wrote scene with {len(scene)} views to {root}")


def load_scene(directory: str | os.PathLike) -> Scene:
    root = Path(directory)
    if not (root / "cams").is_dir() or not (root / "images").is_dir():
        raise FormatError(f"{root}: not a scene directory (needs cams/ and images/)")

    # Images define the view set; cameras take their size from them
    image_paths = sorted((root / "images").glob("*.ppm"))
    if not image_paths:
        raise FormatError(f"{root / 'images'}: no .ppm files")
    images, cams, depths = [], [], []
    for path in image_paths:
        image = read_ppm(path)
        h, w, _ = image.shape
        cam_path = root / "cams" / f"{path.stem}_cam.txt"
        if not cam_path.exists():
            raise FormatError(f"{cam_path}: missing camera for image {path.name}")
        images.append(image)
        cams.append(read_camera(cam_path, width=w, height=h))
        depth_path = root / "depths" / f"{path.stem}.pfm"
        depths.append(read_pfm(depth_path) if depth_path.exists() else None)

    if any(d is None for d in depths):
        if any(d is not None for d in depths):
            logger.warning(f"{root}: depth maps missing for some views; ignoring all")
        depth_stack = None
    else:
        depth_stack = np.stack(depths)

    tracks = read_tracks(root / "tracks.txt") if (root / "tracks.txt").exists() else None
    spec = None
    if (root / "spec.json").exists():
        try:
            spec = SceneSpec.model_validate_json((root / "spec.json").read_text())
        except ValidationError as exc:
            raise FormatError(f"{root / 'spec.json'}: {exc.errors()[0]['msg']}") from None
    return Scene(cams, np.stack(images), depth_stack, tracks, spec)
