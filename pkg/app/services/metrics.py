"""
Depth-map and point-cloud evaluation against analytic ground truth.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from loguru import logger
from scipy.spatial.distance import cdist

from app.core.errors import EvaluationError, ShapeError
from app.geometry.camera import Camera, back_project, pixel_grid
from app.schemas.report import EvalReport, ViewMetrics

INLIER_THRESHOLDS = {"1%": 0.01, "2%": 0.02, "5%": 0.05}
CHAMFER_CHUNK = 2048


def _nearest(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from every point of a to its nearest neighbor in b, in row chunks."""
    return np.concatenate([cdist(a[i:i + CHAMFER_CHUNK], b).min(axis=1)
                           for i in range(0, len(a), CHAMFER_CHUNK)])


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean of the two directed mean nearest-neighbor distances."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EvaluationError(f"Chamfer distance needs two non-empty clouds, got {len(a)} and {len(b)} points")
    return float(0.5 * (_nearest(a, b).mean() + _nearest(b, a).mean()))


def depth_to_points(cam: Camera, depth: np.ndarray, mask: np.ndarray) -> np.ndarray:
    pixels = pixel_grid(cam.width, cam.height)
    flat = mask.reshape(-1)
    return back_project(cam, pixels[flat], depth.reshape(-1)[flat])


def evaluate(pred_depth: np.ndarray, gt_depth: np.ndarray, cam: Camera, pred_mask: np.ndarray | None = None,
             target: int = 0, sources: Sequence[int] = (), pred_color: np.ndarray | None = None,
             gt_color: np.ndarray | None = None) -> ViewMetrics:
    """
    Metrics for one view.

    - MAE and inlier rates over pixels with valid ground truth (depth > 0).
    - Chamfer between clouds back-projected from the predicted depth
      (pixels in `pred_mask`) and from the ground truth.
    """
    pred_depth = np.asarray(pred_depth, dtype=np.float64)
    gt_depth = np.asarray(gt_depth, dtype=np.float64)

    # Validate shapes
    if pred_depth.shape != gt_depth.shape or gt_depth.shape != (cam.height, cam.width):
        raise ShapeError(f"depth maps {pred_depth.shape} / {gt_depth.shape} do not match "
                         f"camera {cam.height}x{cam.width}")
    valid = np.isfinite(gt_depth) & (gt_depth > 0)
    if not valid.any():
        raise EvaluationError("no pixel has valid ground-truth depth")
    if pred_mask is None:
        pred_mask = np.ones_like(valid)

    # Depth errors
    err = np.abs(pred_depth - gt_depth)[valid]
    depth_range = cam.depth_max - cam.depth_min
    inliers = {label: float((err < frac * depth_range).mean()) for label, frac in INLIER_THRESHOLDS.items()}

    # Point clouds
    pred_valid = pred_mask & np.isfinite(pred_depth) & (pred_depth > 0)
    if not pred_valid.any():
        logger.warning(f"view {target}: empty prediction mask, scoring the unmasked depth map")
        pred_valid = np.isfinite(pred_depth) & (pred_depth > 0)
    chamfer = chamfer_distance(depth_to_points(cam, pred_depth, pred_valid), depth_to_points(cam, gt_depth, valid))

    color_mse = None
    if pred_color is not None and gt_color is not None:
        color_mse = float(np.mean((np.asarray(pred_color) - np.asarray(gt_color)) ** 2))
    return ViewMetrics(target=target, sources=list(sources), mae=float(err.mean()), inlier_rates=inliers,
                       chamfer=chamfer, valid_pixels=int(valid.sum()), color_mse=color_mse)


def summarize(set_label: str, sources: Sequence[int], per_view: list[ViewMetrics],
              vc_score: float | None = None) -> EvalReport:
    """Average per-view metrics into one report."""
    if not per_view:
        raise EvaluationError("no views were evaluated")
    return EvalReport(
        set_label=set_label,
        sources=list(sources),
        vc_score=vc_score,
        mae=float(np.mean([m.mae for m in per_view])),
        inlier_rates={label: float(np.mean([m.inlier_rates[label] for m in per_view])) for label in INLIER_THRESHOLDS},
        chamfer=float(np.mean([m.chamfer for m in per_view])),
        per_view=per_view,
    )
