"""
Plane-sweep warping of source feature maps into a reference view.
"""

from __future__ import annotations

import numpy as np

from app.core.errors import ShapeError
from app.geometry.camera import Camera, back_project, pixel_grid, project, to_camera
from app.tensor import ops
from app.tensor.array import DenseArray

OUTSIDE = -1.0e6  # sampling coordinate for points behind the source camera


def warp_coordinates(src_cam: Camera, ref_cam: Camera, depth_hyps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Source-image pixel coordinates (D, h, w, 2) of every reference pixel at
    every hypothesis depth, plus a mask of points in front of the source camera.
    """
    D, h, w = depth_hyps.shape
    pixels = pixel_grid(w, h)
    world = back_project(ref_cam, np.broadcast_to(pixels, (D, h * w, 2)), depth_hyps.reshape(D, h * w))
    coords, _, _ = project(src_cam, world.reshape(-1, 3))
    in_front = to_camera(src_cam, world.reshape(-1, 3))[:, 2] > 1e-9
    coords = np.where(in_front[:, None], coords, OUTSIDE)
    return coords.reshape(D, h, w, 2), in_front.reshape(D, h, w)


def homography_warp(src_feat: DenseArray, src_cam: Camera, ref_cam: Camera,
                    depth_hyps: np.ndarray) -> tuple[DenseArray, np.ndarray]:
    """
    Warp src_feat (C, h, w) onto the reference view at each per-pixel depth
    hypothesis (D, h, w). Returns warped features (D, C, h, w) and a validity
    mask (D, h, w). Gradients reach src_feat; hypotheses are constants.
    """
    C, h, w = src_feat.shape
    if depth_hyps.ndim != 3 or depth_hyps.shape[1:] != (h, w):
        raise ShapeError(f"homography_warp: features {src_feat.shape} vs hypotheses {depth_hyps.shape}")
    if (ref_cam.width, ref_cam.height) != (w, h) or (src_cam.width, src_cam.height) != (w, h):
        raise ShapeError(
            f"homography_warp: cameras sized {ref_cam.width}x{ref_cam.height} and "
            f"{src_cam.width}x{src_cam.height} do not match features {w}x{h}"
        )
    coords, in_front = warp_coordinates(src_cam, ref_cam, np.asarray(depth_hyps, dtype=np.float64))
    sampled, inside = ops.bilinear_sample(src_feat, coords)
    warped = ops.transpose(sampled, (1, 0, 2, 3))
    return warped, inside & in_front
