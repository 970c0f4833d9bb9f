"""
Group-wise cosine similarity of coarse matching features across view pairs.
"""

from __future__ import annotations

import itertools

import numpy as np

from app.core.errors import ShapeError
from app.geometry.camera import Camera, project
from app.geometry.warp import OUTSIDE
from app.tensor import ops
from app.tensor.array import DenseArray


def sample_at_projections(points: np.ndarray, feats: list[DenseArray], cams: list[Camera]) -> list[tuple[DenseArray, np.ndarray]]:
    """Bilinear samples (C, M) of each view's features at the points' projections, with validity."""
    out = []
    for feat, cam in zip(feats, cams):
        pixels, z, _ = project(cam, points)
        coords = np.where((z > 0)[:, None], pixels, OUTSIDE)
        sampled, inside = ops.bilinear_sample(feat, coords)
        out.append((sampled, inside & (z > 0)))
    return out


def encode_similarity(points: np.ndarray, feats: list[DenseArray], cams: list[Camera],
                      groups: int = 4) -> tuple[DenseArray, np.ndarray]:
    """
    f_s (M, G): per channel group, the cosine similarity of the two views'
    sampled features averaged over all view pairs where both projections are
    valid. Points with no valid pair get zeros and mask False.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    C = feats[0].shape[0]
    if C % groups:
        raise ShapeError(f"similarity: {C} channels cannot be split into {groups} groups")
    M = len(points)
    samples = sample_at_projections(points, feats, cams)
    grouped = [(f.reshape(groups, C // groups, M), valid) for f, valid in samples]

    total = None
    count = np.zeros(M)
    for (f_i, v_i), (f_j, v_j) in itertools.combinations(grouped, 2):
        both = v_i & v_j
        cos = ops.where(both[None], ops.cosine_similarity(f_i, f_j, axis=1), 0.0)   # (G, M)
        total = cos if total is None else total + cos
        count += both
    mask = count > 0
    f_s = total * (1.0 / np.maximum(count, 1.0))
    return f_s.transpose(1, 0), mask
