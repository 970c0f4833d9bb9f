"""
The full reconstruction network and the frame renderer built on it.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from loguru import logger

from app.core.config import settings
from app.core.errors import ShapeError, UsageError
from app.geometry.camera import Camera, RayBatch, generate_rays, pixel_grid
from app.models.backbone import Backbone
from app.models.frustum import CascadeFrustum, FrustumSet, level_scale, sample_global_feature
from app.models.renderer import (
    AnalyticSDF,
    RayTransformer,
    RenderOutput,
    SampleBatch,
    ViewAggregator,
    blend_colors,
    composite,
    estimate_surface_depth,
    sample_ray,
    sdf_to_alpha,
)
from app.models.similarity import encode_similarity, sample_at_projections
from app.schemas.train import ModelConfig
from app.tensor import nn, ops
from app.tensor.array import DenseArray, Graph, precision


@dataclass
class SceneContext:
    """Per-source-set encodings shared by every ray rendered from those views."""
    cams: list[Camera]
    images: list[DenseArray]                 # (3, H, W) per view
    match_feats: list[list[DenseArray]]      # [view][pyramid level], coarse first
    frustums: FrustumSet

    def __len__(self) -> int:
        return len(self.cams)


class ReconNetwork(nn.Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        self.backbone = Backbone(config, rng)
        self.cascade = CascadeFrustum(config, rng)
        self.aggregator = ViewAggregator(config.channels[-1], config.volume_channels * config.levels,
                                         config.groups, config.token_dim, config.token_heads,
                                         config.aggregator_blocks, rng)
        self.ray_transformer = RayTransformer(config.token_dim, config.pe_octaves, config.token_heads,
                                              config.ray_blocks, config.sdf_hidden, rng)
        self.log_s = nn.Parameter(np.array([math.log(config.init_sharpness)]))

    @property
    def sharpness(self) -> DenseArray:
        return ops.exp(self.log_s)

    @property
    def precision(self) -> str:
        """Precision the parameters were created in."""
        return "double" if self.log_s.dtype == np.float64 else "single"

    def encode(self, images: np.ndarray | DenseArray, cams: list[Camera]) -> SceneContext:
        """images (N, H, W, 3) in [0, 1] with one camera each; a DenseArray keeps its gradient path."""
        if not isinstance(images, DenseArray):
            images = DenseArray(np.asarray(images))
        if images.ndim != 4 or images.shape[-1] != 3:
            raise ShapeError(f"expected images of shape (N, H, W, 3), got {images.shape}")
        if len(images) != len(cams):
            raise UsageError(f"{len(images)} images but {len(cams)} cameras")
        if len(cams) < 2:
            raise UsageError(f"need at least 2 source views, got {len(cams)}")
        x = images.transpose(0, 3, 1, 2)
        match_feats = self.backbone(x)
        frustums = self.cascade(match_feats, cams)
        return SceneContext(list(cams), [x[i] for i in range(len(cams))], match_feats, frustums)

    def gather(self, ctx: SceneContext, rays: RayBatch, t: np.ndarray, target_cam: Camera,
               z_d: np.ndarray | None = None) -> SampleBatch:
        R, M = t.shape
        points = rays.origins[:, None] + t[..., None] * rays.directions[:, None]
        flat = points.reshape(-1, 3)

        # Project into every source view
        feats = sample_at_projections(flat, [m[-1] for m in ctx.match_feats], ctx.cams)
        colors = sample_at_projections(flat, ctx.images, ctx.cams)
        valid = np.stack([v for _, v in feats], axis=1)                        # (B, N)
        view_feats = ops.stack([f for f, _ in feats], axis=0).transpose(2, 0, 1)
        view_colors = ops.stack([c for c, _ in colors], axis=0).transpose(2, 0, 1)
        view_feats = ops.where(valid[..., None], view_feats, 0.0)
        view_colors = ops.where(valid[..., None], view_colors, 0.0)

        # Volume and similarity features
        f_v, _ = sample_global_feature(flat, ctx.frustums)
        coarse_cams = [cam.scaled(level_scale(0)) for cam in ctx.cams]
        f_s, _ = encode_similarity(flat, [m[0] for m in ctx.match_feats], coarse_cams, self.config.groups)

        z = rays.t_to_depth(target_cam, t)
        if z_d is None:
            z_d = estimate_surface_depth(rays, t, target_cam, ctx.frustums.final)
        return SampleBatch(t, points, z, z_d, view_feats, view_colors, valid, f_v, f_s,
                           target_cam.depth_max - target_cam.depth_min)

    def forward_samples(self, ctx: SceneContext, rays: RayBatch, t: np.ndarray, target_cam: Camera,
                        analytic: AnalyticSDF | None = None, z_d: np.ndarray | None = None) -> RenderOutput:
        batch = self.gather(ctx, rays, t, target_cam, z_d)
        R, M = t.shape
        f_p, logits = self.aggregator(batch)
        sample_colors = blend_colors(logits, batch.colors, batch.valid).reshape(R, M, 3)
        if analytic is None:
            sdf = self.ray_transformer(f_p, batch.z, batch.z_d, batch.depth_range)
            alpha = sdf_to_alpha(sdf, self.sharpness)
        else:
            sdf = DenseArray(analytic(batch.points))
            alpha = sdf_to_alpha(sdf, analytic.sharpness)
        weights, color, depth, opacity = composite(alpha, sample_colors, t, rays.far)
        z_depth = depth * (rays.directions @ target_cam.optical_axis)
        return RenderOutput(color, depth, z_depth, weights, sdf, opacity, t, batch.ray_valid)

    def render_rays(self, ctx: SceneContext, rays: RayBatch, target_cam: Camera,
                    rng: np.random.Generator | None = None, analytic: AnalyticSDF | None = None,
                    z_d: np.ndarray | None = None) -> RenderOutput:
        """
        Full pipeline for a ray batch. With an rng the coarse samples are
        jittered (training); without one sampling is deterministic. `z_d`
        overrides the per-ray surface depth estimated from the frustums.
        """

        def coarse_weights(t_coarse: np.ndarray) -> np.ndarray:
            with Graph.suspend():
                return self.forward_samples(ctx, rays, t_coarse, target_cam, analytic, z_d).weights.data

        t = sample_ray(rays, self.config.coarse_samples, self.config.fine_samples, coarse_weights, rng)
        out = self.forward_samples(ctx, rays, t, target_cam, analytic, z_d)
        dropped = int((~out.ray_valid).sum())
        if dropped:
            logger.warning(f"{dropped} of {len(rays)} rays see no valid source view")
        return out


def render_view(model: ReconNetwork, images: np.ndarray | None, cams: list[Camera] | None, target_cam: Camera,
                context: SceneContext | None = None, analytic: AnalyticSDF | None = None
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Render the full target frame. Returns image (H, W, 3), z depth (H, W)
    and a mask (H, W) of valid, non-miss rays. Rays are processed in chunks
    of settings.RAY_CHUNK across settings.THREADS workers.
    """
    if context is None:
        with precision(model.precision), Graph.suspend():
            context = model.encode(images, cams)
    W, H = target_cam.width, target_cam.height
    rays = generate_rays(target_cam, pixel_grid(W, H))
    chunk = max(1, settings.RAY_CHUNK)
    slices = [slice(i, min(i + chunk, len(rays))) for i in range(0, len(rays), chunk)]

    # precision overrides are thread-local
    dtype_name = model.precision

    def work(index: slice) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        start = time.perf_counter()
        with precision(dtype_name), Graph.suspend():
            out = model.render_rays(context, rays.subset(index), target_cam, analytic=analytic)
        logger.debug(f"rays {index.start}:{index.stop} rendered in {time.perf_counter() - start:.2f}s")
        return out.color.data, out.z_depth.data, out.hit

    with ThreadPoolExecutor(max_workers=max(1, settings.THREADS)) as pool:
        results = list(pool.map(work, slices))

    color = np.concatenate([r[0] for r in results]).reshape(H, W, 3)
    depth = np.concatenate([r[1] for r in results]).reshape(H, W)
    mask = np.concatenate([r[2] for r in results]).reshape(H, W)
    return np.clip(color, 0.0, 1.0).astype(np.float64), depth.astype(np.float64), mask
