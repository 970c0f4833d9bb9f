"""
The finite-difference suite behind `grad-check`: one case per op kind plus
an end-to-end loss-to-input-pixel check through a tiny full pipeline.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from loguru import logger

from app.geometry.camera import generate_rays
from app.models.network import ReconNetwork
from app.schemas.scene import RigSpec
from app.schemas.train import ModelConfig
from app.services.synthlab import ring_cameras
from app.services.trainer import compute_loss, frustum_depth_pairs
from app.tensor.array import DenseArray, get_dtype
from app.tensor.gradcheck import GradCheckResult, KINDS, check_gradients, run_suite

PIPELINE_KIND = "micro-pipeline"
PIPELINE_ENTRIES = 24
MICRO_SIZE = 16
MICRO_CONFIG = ModelConfig(
    channels=(8, 8, 8), hypotheses=[4, 4], range_shrink=1.0, attention_blocks=2, heads=2, volume_channels=2,
    groups=2, token_dim=8, token_heads=2, aggregator_blocks=1, ray_blocks=1, coarse_samples=8, fine_samples=0,
    pe_octaves=2, sdf_hidden=8,
)


def micro_pipeline_case(seed: int = 0) -> tuple[Callable[[DenseArray], DenseArray], list[np.ndarray]]:
    """
    Loss as a function of three 16x16 source images: a target between the
    sources, 4 rays of 8 samples, color and depth terms. The surface depth
    fed to the ray transformer is pinned and the second cascade level keeps
    the full depth span, so its hypotheses do not move with the coarse depth
    and the loss stays smooth in the pixels.
    """
    rng = np.random.default_rng(seed)
    rig = RigSpec(count=4, radius=4.0, elevation=20.0, azimuths=[0.0, 15.0, 30.0, 45.0], fov=40.0)
    cams = ring_cameras(rig, (0.0, 0.0, 0.0), MICRO_SIZE, MICRO_SIZE, 1.0)
    sources, target = [cams[0], cams[1], cams[3]], cams[2]
    rays = generate_rays(target, np.array([[7.0, 7.0], [8.0, 8.0], [6.0, 9.0], [9.0, 6.0]]))
    z_d = rays.t_to_depth(target, 0.5 * (rays.near + rays.far))
    gt_color = rng.uniform(size=(len(rays), 3))
    gt_depth = rng.uniform(target.depth_min, target.depth_max, size=len(rays))
    gt_maps = rng.uniform(target.depth_min, target.depth_max, size=(3, MICRO_SIZE, MICRO_SIZE))
    images = rng.uniform(size=(3, MICRO_SIZE, MICRO_SIZE, 3))
    models: dict[type, ReconNetwork] = {}

    def loss(pixels: DenseArray) -> DenseArray:
        dtype = get_dtype()
        if dtype not in models:
            models[dtype] = ReconNetwork(MICRO_CONFIG, seed=seed)
        model = models[dtype]
        ctx = model.encode(pixels, sources)
        out = model.render_rays(ctx, rays, target, z_d=z_d)
        return compute_loss(out, gt_color, gt_depth, 1.0, frustum_depth_pairs(ctx.frustums, gt_maps)).total

    return loss, [images]


def full_suite(double: bool = True, seed: int = 0, kinds: list[str] | None = None) -> list[GradCheckResult]:
    """Per-kind cases followed by the micro-pipeline check."""
    unknown = sorted(set(kinds or ()) - set(KINDS) - {PIPELINE_KIND})
    if unknown:
        logger.warning(f"unknown op kinds ignored: {', '.join(unknown)}")
    results = run_suite(double=double, seed=seed, kinds=kinds)
    if kinds is None or PIPELINE_KIND in kinds:
        fn, inputs = micro_pipeline_case(seed)
        result = check_gradients(fn, inputs, kind=PIPELINE_KIND, double=double, sampled_entries=PIPELINE_ENTRIES, seed=seed)
        log = logger.info if result.passed else logger.error
        log(f"{PIPELINE_KIND:<22} max_abs={result.max_abs_err:.2e} max_rel={result.max_rel_err:.2e} "
            f"{'ok' if result.passed else 'FAILED'}")
        results.append(result)
    return results
