"""
Ray sampling, the view-aggregation and ray transformers, NeuS opacity and
alpha compositing.

Rays are batches of R rays with M samples each. Per-sample quantities are
flattened to B = R * M rows when they pass through the aggregation
transformer and reshaped back to (R, M, ...) along the ray.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from app.core.errors import ShapeError, UsageError
from app.geometry.camera import Camera, RayBatch, project
from app.geometry.warp import OUTSIDE
from app.models.attention import AttentionLayer
from app.models.frustum import RegularizedVolume
from app.tensor import nn, ops
from app.tensor.array import DenseArray

PDF_PADDING = 1e-5
PHI_FLOOR = 1e-12
MISS_OPACITY = 0.1
MASKED_LOGIT = -1.0e30
ORDER_RAMP = 1e-9


@dataclass
class SampleBatch:
    """Everything gathered for R rays x M samples before aggregation."""
    t: np.ndarray                    # (R, M) ray lengths, strictly increasing per ray
    points: np.ndarray               # (R, M, 3) world positions
    z: np.ndarray                    # (R, M) target-camera depth of each sample
    z_d: np.ndarray                  # (R,) intermediate surface depth
    view_feats: DenseArray           # (B, N, C) per-view image features
    colors: DenseArray               # (B, N, 3) source pixel colors
    valid: np.ndarray                # (B, N) projection validity
    f_v: DenseArray                  # (B, sum of volume channels)
    f_s: DenseArray                  # (B, G)
    depth_range: float

    @property
    def rays(self) -> int:
        return self.t.shape[0]

    @property
    def samples(self) -> int:
        return self.t.shape[1]

    @property
    def ray_valid(self) -> np.ndarray:
        """False for rays where no sample projects validly into any source view."""
        return self.valid.reshape(self.rays, self.samples, -1).any(axis=(1, 2))


@dataclass
class RenderOutput:
    color: DenseArray                # (R, 3)
    depth: DenseArray                # (R,) expected ray length
    z_depth: DenseArray              # (R,) expected target-camera depth
    weights: DenseArray              # (R, M)
    sdf: DenseArray                  # (R, M)
    opacity: DenseArray              # (R,)
    t: np.ndarray                    # (R, M)
    ray_valid: np.ndarray            # (R,)

    @property
    def hit(self) -> np.ndarray:
        """Rays that are valid and not a miss (accumulated opacity >= 0.1)."""
        return self.ray_valid & (self.opacity.data >= MISS_OPACITY)


# ==================== sampling ====================

def stratified_samples(near: np.ndarray, far: np.ndarray, count: int,
                       rng: np.random.Generator | None = None) -> np.ndarray:
    """
    `count` samples per ray, one in each of `count` equal bins of
    [near, far]: bin midpoints without an rng, uniform jitter with one.
    """
    if count < 2:
        raise UsageError(f"need at least 2 coarse samples, got {count}")
    near = np.asarray(near, dtype=np.float64).reshape(-1, 1)
    far = np.asarray(far, dtype=np.float64).reshape(-1, 1)
    offsets = np.full((len(near), count), 0.5) if rng is None else rng.uniform(size=(len(near), count))
    return near + (far - near) * (np.arange(count) + offsets) / count


def sample_pdf(edges: np.ndarray, weights: np.ndarray, count: int,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """
    Inverse-CDF samples from the piecewise-constant density `weights`
    (R, K) over bins with `edges` (R, K + 1). Deterministic quantiles
    without an rng.
    """
    weights = np.asarray(weights, dtype=np.float64) + PDF_PADDING
    pdf = weights / weights.sum(axis=-1, keepdims=True)
    cdf = np.concatenate([np.zeros_like(pdf[:, :1]), np.cumsum(pdf, axis=-1)], axis=-1)
    R = len(cdf)
    if rng is None:
        u = np.broadcast_to(np.linspace(0.5 / count, 1.0 - 0.5 / count, count), (R, count))
    else:
        u = rng.uniform(size=(R, count))

    # searchsorted(cdf, u, side="right") row by row
    inds = (u[:, :, None] >= cdf[:, None, :]).sum(axis=-1)
    below = np.clip(inds - 1, 0, cdf.shape[-1] - 1)
    above = np.clip(inds, 0, cdf.shape[-1] - 1)
    cdf_lo = np.take_along_axis(cdf, below, axis=1)
    cdf_hi = np.take_along_axis(cdf, above, axis=1)
    bin_lo = np.take_along_axis(edges, below, axis=1)
    bin_hi = np.take_along_axis(edges, above, axis=1)
    denom = cdf_hi - cdf_lo
    denom = np.where(denom < PDF_PADDING, 1.0, denom)
    frac = (u - cdf_lo) / denom
    return bin_lo + frac * (bin_hi - bin_lo)


def sample_ray(rays: RayBatch, coarse: int, fine: int = 0,
               weights_fn: Callable[[np.ndarray], np.ndarray] | None = None,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """
    Ray lengths (R, coarse + fine), strictly increasing per ray.

    Coarse samples are stratified in training (rng given) and bin midpoints
    at evaluation. When `fine` > 0, `weights_fn` maps the coarse ray lengths
    to compositing weights (R, coarse) and fine samples are drawn from them
    by inverse CDF; both sets are merged and sorted.
    """
    t = stratified_samples(rays.near, rays.far, coarse, rng)
    if fine > 0:
        if weights_fn is None:
            raise UsageError("fine sampling needs a coarse weights function")
        edges = np.linspace(0.0, 1.0, coarse + 1)[None] * (rays.far - rays.near)[:, None] + rays.near[:, None]
        t_fine = sample_pdf(edges, weights_fn(t), fine, rng)
        t = np.sort(np.concatenate([t, t_fine], axis=1), axis=1)
    span = (rays.far - rays.near)[:, None]
    return t + ORDER_RAMP * span * np.arange(t.shape[1])


def estimate_surface_depth(rays: RayBatch, t: np.ndarray, target_cam: Camera,
                           volumes: list[RegularizedVolume]) -> np.ndarray:
    """
    z_d per ray in the target camera's depth coordinate.

    For every source view the samples are compared with that view's final
    frustum depth; the first sample pair stepping from in front of to behind
    the predicted surface gives a crossing, linearly interpolated in t.
    Crossings are averaged over views. Rays without one fall back to the
    middle of [near, far].
    """
    R, M = t.shape
    points = rays.origins[:, None] + t[..., None] * rays.directions[:, None]
    total = np.zeros(R)
    count = np.zeros(R)
    rows = np.arange(R)
    for vol in volumes:
        pixels, z, _ = project(vol.cam, points.reshape(-1, 3))
        coords = np.where((z > 0)[:, None], pixels, OUTSIDE)
        depth_map = DenseArray(vol.depth.data[None], dtype=np.float64)
        sampled, valid = ops.bilinear_sample(depth_map, coords)
        diff = (z - sampled.data[0]).reshape(R, M)
        valid = valid.reshape(R, M)
        cross = valid[:, :-1] & valid[:, 1:] & (diff[:, :-1] < 0) & (diff[:, 1:] >= 0)
        has = cross.any(axis=1)
        first = np.argmax(cross, axis=1)
        d0, d1 = diff[rows, first], diff[rows, first + 1]
        frac = np.where(has, d0 / np.where(has, d0 - d1, -1.0), 0.0)
        t_cross = t[rows, first] + frac * (t[rows, first + 1] - t[rows, first])
        total += np.where(has, t_cross, 0.0)
        count += has
    t_hat = np.where(count > 0, total / np.maximum(count, 1.0), 0.5 * (rays.near + rays.far))
    return rays.t_to_depth(target_cam, t_hat)


# ==================== transformers ====================

def positional_encoding(offsets: np.ndarray, octaves: int, depth_range: float) -> np.ndarray:
    """gamma(x) = [sin(2^k x / range), cos(2^k x / range)] for k < octaves, on the last axis."""
    if depth_range <= 0:
        raise ShapeError(f"depth range must be positive, got {depth_range}")
    freqs = 2.0 ** np.arange(octaves) / depth_range
    angles = np.asarray(offsets, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def masked_softmax(logits: DenseArray, mask: np.ndarray) -> DenseArray:
    """Softmax over the last axis restricted to `mask`; fully masked rows give zeros."""
    weights = ops.softmax(ops.where(mask, logits, MASKED_LOGIT), axis=-1)
    return ops.where(mask, weights, 0.0)


class ViewAggregator(nn.Module):
    """
    Set transformer over [f0, one token per source view, a volume token,
    a similarity token] for every sample. The f0 slot becomes f_p and the
    view slots yield the color blending logits.
    """

    def __init__(self, image_channels: int, volume_channels: int, groups: int, d_model: int,
                 heads: int, blocks: int, rng: np.random.Generator):
        self.f0 = nn.Parameter(rng.normal(scale=0.1, size=d_model))
        self.view_embed = nn.Linear(image_channels + 4, d_model, rng)
        self.volume_embed = nn.Linear(volume_channels, d_model, rng)
        self.similarity_embed = nn.Linear(groups, d_model, rng)
        self.layers = [AttentionLayer(d_model, heads, rng) for _ in range(blocks)]
        self.blend = nn.Linear(d_model, 1, rng)

    def forward(self, batch: SampleBatch) -> tuple[DenseArray, DenseArray]:
        """Returns f_p (B, d) and blending logits (B, N)."""
        B, N, _ = batch.view_feats.shape
        d = self.f0.shape[0]
        valid = DenseArray(batch.valid[..., None], dtype=batch.view_feats.dtype)
        views = self.view_embed(ops.concat([batch.view_feats, batch.colors, valid], axis=-1))
        tokens = ops.concat([
            ops.broadcast_to(self.f0.reshape(1, 1, d), (B, 1, d)),
            views,
            self.volume_embed(batch.f_v).reshape(B, 1, d),
            self.similarity_embed(batch.f_s).reshape(B, 1, d),
        ], axis=1)
        mask = np.concatenate([np.ones((B, 1), bool), batch.valid, np.ones((B, 2), bool)], axis=1)
        for layer in self.layers:
            tokens = layer(tokens, tokens, mask)
        f_p = tokens[:, 0]
        logits = self.blend(tokens[:, 1:N + 1]).reshape(B, N)
        return f_p, logits


class RayTransformer(nn.Module):
    """Attention along each ray over [f_p, gamma(z - z_d)], then the SDF head."""

    def __init__(self, d_model: int, octaves: int, heads: int, blocks: int, hidden: int,
                 rng: np.random.Generator):
        self.octaves = octaves
        self.embed = nn.Linear(d_model + 2 * octaves, d_model, rng)
        self.layers = [AttentionLayer(d_model, heads, rng) for _ in range(blocks)]
        self.sdf_head = nn.MLP([d_model, hidden, hidden, 1], rng)

    def forward(self, f_p: DenseArray, z: np.ndarray, z_d: np.ndarray, depth_range: float) -> DenseArray:
        """f_p (R*M, d) -> sdf (R, M)."""
        R, M = z.shape
        encoding = positional_encoding(z - z_d[:, None], self.octaves, depth_range)
        x = ops.concat([f_p.reshape(R, M, -1), DenseArray(encoding, dtype=f_p.dtype)], axis=-1)
        x = self.embed(x)
        for layer in self.layers:
            x = layer(x, x)
        return self.sdf_head(x).reshape(R, M)


# ==================== opacity and compositing ====================

def sdf_to_alpha(sdf: DenseArray, sharpness) -> DenseArray:
    """
    Discrete NeuS opacity along the last axis:
    alpha_m = max((Phi(sdf_m) - Phi(sdf_m+1)) / Phi(sdf_m), 0) with Phi the
    sigmoid of sharpness * sdf, 0 where Phi(sdf_m) < 1e-12, and 0 for the
    last sample.
    """
    R, M = sdf.shape
    zeros = DenseArray(np.zeros((R, 1)), dtype=sdf.dtype)
    if M == 1:
        return zeros
    phi = ops.sigmoid(sdf * sharpness)
    prev, nxt = phi[:, :-1], phi[:, 1:]
    ok = prev.data >= PHI_FLOOR
    alpha = ops.relu((prev - nxt) / ops.where(ok, prev, 1.0))
    return ops.concat([ops.where(ok, alpha, 0.0), zeros], axis=1)


def composite(alpha: DenseArray, colors: DenseArray, t: np.ndarray, far: np.ndarray
              ) -> tuple[DenseArray, DenseArray, DenseArray, DenseArray]:
    """
    weights = T * alpha with T the exclusive transmittance product.
    Returns (weights (R, M), color (R, 3), depth (R,), opacity (R,)); the
    residual transmittance renders black and places depth at `far`.
    """
    R, M = alpha.shape
    weights = ops.cumprod_exclusive(1.0 - alpha) * alpha
    opacity = ops.sum(weights, axis=1)
    color = ops.sum(weights.reshape(R, M, 1) * colors, axis=1)
    depth = ops.sum(weights * t, axis=1) + (1.0 - opacity) * far
    return weights, color, depth, opacity


def blend_colors(logits: DenseArray, colors: DenseArray, valid: np.ndarray) -> DenseArray:
    """c (B, 3) = masked-softmax(logits) weighted sum of the source colors (B, N, 3)."""
    B, N = logits.shape
    weights = masked_softmax(logits, valid)
    return ops.sum(weights.reshape(B, N, 1) * colors, axis=1)


# ==================== analytic bypass ====================

@dataclass(frozen=True)
class AnalyticSDF:
    """Closed-form signed distance of a sphere, box or plane; negative inside."""
    kind: Literal["sphere", "box", "plane"]
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    size: float = 1.0
    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    sharpness: float = 1000.0

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64) - np.asarray(self.center)
        if self.kind == "sphere":
            return np.linalg.norm(p, axis=-1) - self.size
        if self.kind == "box":
            q = np.abs(p) - self.size
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            return outside + np.minimum(q.max(axis=-1), 0.0)
        n = np.asarray(self.normal, dtype=np.float64)
        return p @ (n / np.linalg.norm(n))


def render_analytic(rays: RayBatch, sdf: AnalyticSDF, coarse: int, fine: int = 0,
                    rng: np.random.Generator | None = None, target_cam: Camera | None = None) -> RenderOutput:
    """
    Render geometry only with a closed-form SDF in place of the network head.
    Colors are black; every ray counts as valid.
    """

    def sdf_at(t: np.ndarray) -> DenseArray:
        points = rays.origins[:, None] + t[..., None] * rays.directions[:, None]
        return DenseArray(sdf(points))

    def coarse_weights(t_coarse: np.ndarray) -> np.ndarray:
        alpha = sdf_to_alpha(sdf_at(t_coarse), sdf.sharpness)
        return ops.cumprod_exclusive(1.0 - alpha).data * alpha.data

    t = sample_ray(rays, coarse, fine, coarse_weights, rng)
    R, M = t.shape
    values = sdf_at(t)
    alpha = sdf_to_alpha(values, sdf.sharpness)
    colors = DenseArray(np.zeros((R, M, 3)), dtype=alpha.dtype)
    weights, color, depth, opacity = composite(alpha, colors, t, rays.far)
    z_depth = depth if target_cam is None else depth * (rays.directions @ target_cam.optical_axis)
    return RenderOutput(color, depth, z_depth, weights, values, opacity, t, np.ones(R, dtype=bool))
