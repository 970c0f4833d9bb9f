"""
Cascaded per-view correlation frustums.

Every view serves once as reference. Source features are warped onto the
reference view's plane-sweep hypotheses, correlated with the reference
features, weighted by each pair's best correlation along depth, summed over
source views, and regularized by a small 3D U-Net shared across views.
Finer levels re-center narrower hypothesis ranges on the previous depth.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger

from app.core.errors import UsageError
from app.geometry.camera import Camera, project
from app.geometry.warp import OUTSIDE, homography_warp
from app.io.images import write_pfm, write_pgm
from app.models.backbone import PYRAMID_LEVELS
from app.schemas.train import ModelConfig
from app.tensor import nn, ops
from app.tensor.array import DenseArray, get_dtype

MIN_SPAN = 1e-6
NO_MATCH = -1.0e30


@dataclass
class CorrelationFrustum:
    ref_view: int
    level: int
    corr: DenseArray               # (1, D, h, w)
    depth_values: np.ndarray       # (D, h, w)
    coverage: np.ndarray           # (h, w) True where some source view warped validly


@dataclass
class RegularizedVolume:
    ref_view: int
    level: int
    cam: Camera                    # reference camera at this level's resolution
    feat: DenseArray               # (c, D, h, w)
    prob: DenseArray               # (D, h, w)
    depth: DenseArray              # (h, w)
    depth_values: np.ndarray       # (D, h, w)
    coverage: np.ndarray           # (h, w)


@dataclass
class FrustumSet:
    """volumes[level][view], coarse level first."""
    volumes: list[list[RegularizedVolume]]

    @property
    def final(self) -> list[RegularizedVolume]:
        return self.volumes[-1]

    def __len__(self) -> int:
        return sum(len(level) for level in self.volumes)


def level_scale(level: int) -> float:
    """Resolution of pyramid level `level` relative to the image."""
    return 2.0 ** (level - (PYRAMID_LEVELS - 1))


def build_correlation(ref: int, feats: list[DenseArray], cams: list[Camera], depth_hyps: np.ndarray,
                      level: int = 0) -> CorrelationFrustum:
    """
    C_i(d, p) = sum over j != i of max_d'{c_ij(d', p)} * c_ij(d, p), where
    c_ij is the channel dot product of F_i with F_j warped at hypothesis d.
    Invalid warps contribute 0 and take no part in the max.
    """
    n = len(feats)
    if n < 2:
        raise UsageError(f"correlation needs at least 2 views, got {n}")
    f_ref = feats[ref]
    total = None
    coverage = np.zeros(depth_hyps.shape[1:], dtype=bool)
    for j in range(n):
        if j == ref:
            continue
        warped, valid = homography_warp(feats[j], cams[j], cams[ref], depth_hyps)
        corr = ops.sum(warped * f_ref, axis=1)                       # (D, h, w)
        corr = ops.where(valid, corr, 0.0)
        best, _ = ops.max(ops.where(valid, corr, NO_MATCH), axis=0)  # (h, w)
        any_valid = valid.any(axis=0)
        weight = ops.where(any_valid, best, 0.0)
        term = corr * weight
        total = term if total is None else total + term
        coverage |= any_valid
    D, h, w = depth_hyps.shape
    return CorrelationFrustum(ref, level, total.reshape(1, D, h, w), depth_hyps, coverage)


class Regularizer3D(nn.Module):
    """
    Encoder 1->8->16->32 (two stride-2 stages), transpose-conv decoder with
    skip additions, a probability head and a second stack producing V'.
    """

    def __init__(self, out_channels: int, rng: np.random.Generator):
        self.conv0 = nn.Conv3d(1, 8, 3, rng)
        self.conv1 = nn.Conv3d(8, 16, 3, rng, stride=2)
        self.conv2 = nn.Conv3d(16, 16, 3, rng)
        self.conv3 = nn.Conv3d(16, 32, 3, rng, stride=2)
        self.conv4 = nn.Conv3d(32, 32, 3, rng)
        self.up1 = nn.ConvTranspose3d(32, 16, rng)
        self.up2 = nn.ConvTranspose3d(16, 8, rng)
        self.prob_head = nn.Conv3d(8, 1, 3, rng)
        self.feat1 = nn.Conv3d(8, out_channels, 3, rng)
        self.feat2 = nn.Conv3d(out_channels, out_channels, 3, rng)

    @staticmethod
    def _crop_add(up: DenseArray, skip: DenseArray) -> DenseArray:
        _, _, d, h, w = skip.shape
        return ops.relu(up[:, :, :d, :h, :w] + skip)

    def forward(self, corr: DenseArray) -> tuple[DenseArray, DenseArray]:
        """corr (1, D, h, w) -> (V (8, D, h, w) pre-head volume, V' (c, D, h, w))."""
        x0 = ops.relu(self.conv0(corr.reshape(1, *corr.shape)))
        x2 = ops.relu(self.conv2(ops.relu(self.conv1(x0))))
        x4 = ops.relu(self.conv4(ops.relu(self.conv3(x2))))
        y2 = self._crop_add(self.up1(x4), x2)
        v = self._crop_add(self.up2(y2), x0)
        v_prime = self.feat2(ops.relu(self.feat1(v)))
        return v, v_prime

    def regularize(self, frustum: CorrelationFrustum, cam: Camera) -> RegularizedVolume:
        v, v_prime = self(frustum.corr)
        logits = self.prob_head(v)[0, 0]                             # (D, h, w)
        prob = ops.softmax(logits, axis=0)
        depth = ops.sum(prob * frustum.depth_values, axis=0)
        return RegularizedVolume(frustum.ref_view, frustum.level, cam, v_prime[0], prob, depth,
                                 frustum.depth_values, frustum.coverage)


def initial_hypotheses(cam: Camera, count: int, h: int, w: int) -> np.ndarray:
    values = np.linspace(cam.depth_min, cam.depth_max, count)
    return np.broadcast_to(values[:, None, None], (count, h, w)).astype(np.float64)


def refine_hypotheses(prev: RegularizedVolume, count: int, shrink: float, h: int, w: int) -> np.ndarray:
    """
    Re-center `count` hypotheses per pixel on the previous level's depth with
    the span shrunk by `shrink`, kept inside the previous per-pixel range.
    """
    factor = h // prev.depth_values.shape[1]
    depth = np.repeat(np.repeat(prev.depth.data.astype(np.float64), factor, 0), factor, 1)
    lo_prev = np.repeat(np.repeat(prev.depth_values[0], factor, 0), factor, 1)
    hi_prev = np.repeat(np.repeat(prev.depth_values[-1], factor, 0), factor, 1)
    span = (hi_prev - lo_prev) * shrink
    if np.any(span < MIN_SPAN):
        logger.warning(f"level {prev.level + 1}: hypothesis span collapsed below {MIN_SPAN}; clamping")
        span = np.maximum(span, MIN_SPAN)
    lo = np.clip(depth - span / 2, lo_prev, np.maximum(hi_prev - span, lo_prev))
    steps = np.linspace(0.0, 1.0, count)
    return lo[None] + span[None] * steps[:, None, None]


class CascadeFrustum(nn.Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.hypotheses = list(config.hypotheses)
        self.shrink = config.range_shrink
        self.regularizers = [Regularizer3D(config.volume_channels, rng) for _ in self.hypotheses]

    def forward(self, match_feats: list[list[DenseArray]], cams: list[Camera]) -> FrustumSet:
        """match_feats[view][level] for pyramid levels coarse to fine; uses the first L levels."""
        n = len(cams)
        volumes: list[list[RegularizedVolume]] = []
        for level, (count, reg) in enumerate(zip(self.hypotheses, self.regularizers)):
            feats = [match_feats[i][level] for i in range(n)]
            _, h, w = feats[0].shape
            level_cams = [cam.scaled(level_scale(level)) for cam in cams]
            current = []
            for ref in range(n):
                if level == 0:
                    hyps = initial_hypotheses(cams[ref], count, h, w)
                else:
                    hyps = refine_hypotheses(volumes[-1][ref], count, self.shrink, h, w)
                logger.debug(f"level {level} view {ref}: mean span {float(np.mean(hyps[-1] - hyps[0])):.4g}")
                frustum = build_correlation(ref, feats, level_cams, hyps, level)
                current.append(reg.regularize(frustum, level_cams[ref]))
            volumes.append(current)
        return FrustumSet(volumes)


def sample_global_feature(points: np.ndarray, frustums: FrustumSet) -> tuple[DenseArray, np.ndarray]:
    """
    f_v for world points (M, 3): per level, trilinear samples of each view's
    V' at the point's (u, v, depth index), summed over views, concatenated
    over levels. Returns (M, sum of c_l) and a mask of points inside any frustum.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    hit = np.zeros(len(points), dtype=bool)
    per_level = []
    for level in frustums.volumes:
        total = None
        for vol in level:
            pixels, z, _ = project(vol.cam, points)
            bounds = np.stack([vol.depth_values[0], vol.depth_values[-1] - vol.depth_values[0]])
            dmax = vol.depth_values.shape[0] - 1
            edges, _ = ops.bilinear_sample(DenseArray(bounds, dtype=np.float64), np.where(z[:, None] > 0, pixels, OUTSIDE))
            start, span = edges.data[0], edges.data[1]
            step = np.where(span > 0, span / max(dmax, 1), 1.0)
            d_idx = (z - start) / step
            coords = np.stack([pixels[:, 0], pixels[:, 1], d_idx], axis=1)
            coords = np.where((z > 0)[:, None], coords, OUTSIDE)
            sampled, valid = ops.trilinear_sample(vol.feat, coords.astype(get_dtype()))
            sampled = ops.where(valid[None], sampled, 0.0)
            hit |= valid
            total = sampled if total is None else total + sampled
        per_level.append(total)
    return ops.concat(per_level, axis=0).transpose(1, 0), hit


def dump_debug(frustums: FrustumSet, directory: str | os.PathLike) -> None:
    """Write per-level depth maps (PFM) and coverage masks (PGM) for every view."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for level in frustums.volumes:
        for vol in level:
            stem = f"level{vol.level}_view{vol.ref_view:04d}"
            write_pfm(out / f"{stem}_depth.pfm", vol.depth.data)
            write_pgm(out / f"{stem}_coverage.pgm", vol.coverage.astype(np.float64))
