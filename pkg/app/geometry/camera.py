"""
Pinhole cameras, projection and ray generation.

Conventions used everywhere in the package:
- extrinsics E are world-to-camera, x_cam = R x_world + t;
- integer pixel coordinates are sample centers;
- "depth" is the camera-frame z value, "t" is distance along a unit ray.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from app.core.errors import CameraError

ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Camera:
    """Intrinsics, world-to-camera extrinsics, depth range and image size."""

    K: np.ndarray
    E: np.ndarray
    depth_min: float
    depth_max: float
    width: int
    height: int
    depth_num: int = 48
    _center: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        E = np.asarray(self.E, dtype=np.float64).reshape(4, 4)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "E", E)

        # Validate intrinsics
        if abs(K[1, 0]) > 1e-12 or abs(K[2, 0]) > 1e-12 or abs(K[2, 1]) > 1e-12:
            raise CameraError("intrinsic matrix must be upper-triangular")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise CameraError(f"focal lengths must be positive, got fx={K[0, 0]}, fy={K[1, 1]}")

        # Validate rotation
        R = E[:3, :3]
        if np.abs(R @ R.T - np.eye(3)).max() > ORTHONORMAL_TOL or np.linalg.det(R) <= 0:
            raise CameraError("extrinsic rotation must be orthonormal with det=+1")

        # Validate depth range and image size
        if not 0 < self.depth_min < self.depth_max:
            raise CameraError(f"need 0 < depth_min < depth_max, got {self.depth_min}, {self.depth_max}")
        if self.width < 1 or self.height < 1:
            raise CameraError(f"image extents must be >= 1, got {self.width}x{self.height}")

        object.__setattr__(self, "_center", -R.T @ E[:3, 3])

    @property
    def R(self) -> np.ndarray:
        return self.E[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.E[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self._center

    @property
    def optical_axis(self) -> np.ndarray:
        """World-frame direction of the camera's +z axis."""
        return self.R[2]

    @property
    def depth_interval(self) -> float:
        return (self.depth_max - self.depth_min) / max(self.depth_num - 1, 1)

    def scaled(self, factor: float) -> "Camera":
        """
        Same camera for a feature map subsampled by `factor`.

        Pixel i of a stride-s map sits on pixel s*i of the full image, so the
        first two rows of K scale directly.
        """
        K = self.K.copy()
        K[:2] *= factor
        return Camera(K, self.E, self.depth_min, self.depth_max,
                      max(1, round(self.width * factor)), max(1, round(self.height * factor)), self.depth_num)


def look_at(eye, target, up, K, width: int, height: int, depth_min: float, depth_max: float,
            depth_num: int = 48) -> Camera:
    """Camera at `eye` whose optical axis points at `target`; image v runs along -up."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise CameraError("look_at: up vector is parallel to the viewing direction")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    E = np.eye(4)
    E[:3, :3] = R
    E[:3, 3] = -R @ eye
    return Camera(K, E, depth_min, depth_max, width, height, depth_num)


def to_camera(cam: Camera, points: np.ndarray) -> np.ndarray:
    return points @ cam.R.T + cam.t


def project(cam: Camera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Project world points (M, 3).

    Returns pixels (M, 2), depths (M,) and a mask that is False for points at
    or behind the camera plane or outside [0, W-1] x [0, H-1].
    """
    points = np.asarray(points, dtype=np.float64)
    xc = to_camera(cam, points)
    depth = xc[..., 2]
    safe = np.where(np.abs(depth) > 1e-12, depth, 1.0)
    uvw = xc @ cam.K.T
    pixels = uvw[..., :2] / safe[..., None]
    valid = (
        (depth > 0)
        & (pixels[..., 0] >= 0) & (pixels[..., 0] <= cam.width - 1)
        & (pixels[..., 1] >= 0) & (pixels[..., 1] <= cam.height - 1)
    )
    return pixels, depth, valid


def back_project(cam: Camera, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
    """World points seen at `pixels` (…, 2) with camera-frame z `depths` (…)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    homo = np.concatenate([pixels, np.ones(pixels.shape[:-1] + (1,))], axis=-1)
    rays = homo @ np.linalg.inv(cam.K).T
    xc = rays * depths[..., None]
    return (xc - cam.t) @ cam.R


@dataclass
class RayBatch:
    origins: np.ndarray
    directions: np.ndarray
    pixels: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def __len__(self) -> int:
        return len(self.origins)

    def subset(self, index) -> "RayBatch":
        return RayBatch(self.origins[index], self.directions[index], self.pixels[index],
                        self.near[index], self.far[index])

    def t_to_depth(self, cam: Camera, t: np.ndarray) -> np.ndarray:
        """Convert ray length (B, …) into the camera's z depth."""
        cos = self.directions @ cam.optical_axis
        return t * cos.reshape(cos.shape + (1,) * (t.ndim - 1))


def generate_rays(cam: Camera, pixels: np.ndarray) -> RayBatch:
    """
    Unit rays through pixel centers. near/far are the ray lengths at which
    the camera-frame z equals depth_min/depth_max.
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    homo = np.concatenate([pixels, np.ones((len(pixels), 1))], axis=1)
    cam_dirs = homo @ np.linalg.inv(cam.K).T
    cam_dirs /= np.linalg.norm(cam_dirs, axis=1, keepdims=True)
    directions = cam_dirs @ cam.R
    cos = cam_dirs[:, 2]
    origins = np.broadcast_to(cam.center, directions.shape).copy()
    return RayBatch(origins, directions, pixels, cam.depth_min / cos, cam.depth_max / cos)


def pixel_grid(width: int, height: int) -> np.ndarray:
    """All pixel centers in row-major order as (H*W, 2) (u, v)."""
    v, u = np.mgrid[0:height, 0:width]
    return np.stack([u.ravel(), v.ravel()], axis=1).astype(np.float64)
