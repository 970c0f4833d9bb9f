"""
Feature pyramid and cross-view matching transformer.
"""

from __future__ import annotations

import itertools

import numpy as np

from app.core.errors import ShapeError, UsageError
from app.models.attention import AttentionLayer, sinusoidal_2d
from app.schemas.train import ModelConfig
from app.tensor import nn, ops
from app.tensor.array import DenseArray

PYRAMID_LEVELS = 3


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv1 = nn.Conv2d(channels, channels, 3, rng)
        self.conv2 = nn.Conv2d(channels, channels, 3, rng)

    def forward(self, x: DenseArray) -> DenseArray:
        return ops.relu(x + self.conv2(ops.relu(self.conv1(x))))


class FeaturePyramid(nn.Module):
    """
    Stem 3->8 at full resolution, two stride-2 stages 8->16->32 with one
    residual block each, 1x1 laterals into a 32-channel top-down path with
    nearest upsampling, and 3x3 heads to the configured channels.
    Levels are returned coarse to fine.
    """

    def __init__(self, channels: tuple[int, int, int], rng: np.random.Generator):
        self.stem = nn.Conv2d(3, 8, 3, rng)
        self.down2 = nn.Conv2d(8, 16, 3, rng, stride=2)
        self.res2 = ResidualBlock(16, rng)
        self.down3 = nn.Conv2d(16, 32, 3, rng, stride=2)
        self.res3 = ResidualBlock(32, rng)
        self.lat1 = nn.Conv2d(8, 32, 1, rng)
        self.lat2 = nn.Conv2d(16, 32, 1, rng)
        self.lat3 = nn.Conv2d(32, 32, 1, rng)
        self.heads = [nn.Conv2d(32, c, 3, rng) for c in channels]

    def forward(self, images: DenseArray) -> list[DenseArray]:
        """images: (N, 3, H, W) -> levels [(N, c0, H/4, W/4), (N, c1, H/2, W/2), (N, c2, H, W)]."""
        _, _, H, W = images.shape
        factor = 2 ** (PYRAMID_LEVELS - 1)
        if H % factor or W % factor:
            pad_h, pad_w = (-H) % factor, (-W) % factor
            raise ShapeError(
                f"image {H}x{W} is not divisible by {factor}; pad height by {pad_h} and width by {pad_w} pixels"
            )
        c1 = ops.relu(self.stem(images))
        c2 = self.res2(ops.relu(self.down2(c1)))
        c3 = self.res3(ops.relu(self.down3(c2)))
        p3 = self.lat3(c3)
        p2 = self.lat2(c2) + ops.upsample_nearest(p3)
        p1 = self.lat1(c1) + ops.upsample_nearest(p2)
        return [head(p) for head, p in zip(self.heads, (p3, p2, p1))]


class MatchingTransformer(nn.Module):
    """Alternating self/cross linear-attention blocks applied symmetrically to a view pair."""

    def __init__(self, d_model: int, blocks: int, heads: int, rng: np.random.Generator):
        self.kinds = ["self" if b % 2 == 0 else "cross" for b in range(blocks)]
        self.layers = [AttentionLayer(d_model, heads, rng) for _ in range(blocks)]

    def forward(self, x: DenseArray, s: DenseArray) -> tuple[DenseArray, DenseArray]:
        """x, s: (B, T, C) tokens of the two views; returns both transformed token sets."""
        for kind, layer in zip(self.kinds, self.layers):
            if kind == "self":
                x, s = layer(x, x), layer(s, s)
            else:
                x, s = layer(x, s), layer(s, x)
        return x, s


class Backbone(nn.Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.channels = config.channels
        self.fpn = FeaturePyramid(config.channels, rng)
        self.matchers = [MatchingTransformer(c, config.attention_blocks, config.heads, rng) for c in config.channels]

    def extract_pyramids(self, images: DenseArray) -> list[list[DenseArray]]:
        """images (N, 3, H, W) -> per view, per level (C_l, h_l, w_l)."""
        levels = self.fpn(images)
        return [[level[i] for level in levels] for i in range(images.shape[0])]

    def cross_view_match(self, pyramids: list[list[DenseArray]]) -> list[list[DenseArray]]:
        """
        F_i^l = sum over j != i of T_M(phi_i^l, phi_j^l).

        All unordered pairs run as one batch; the symmetric update yields
        T_M(phi_i, phi_j) and T_M(phi_j, phi_i) from a single pass.
        """
        n = len(pyramids)
        if n < 2:
            raise UsageError(f"cross-view matching needs at least 2 views, got {n}")
        pairs = list(itertools.combinations(range(n), 2))
        out: list[list[DenseArray]] = [[] for _ in range(n)]
        for level, matcher in enumerate(self.matchers):
            C, h, w = pyramids[0][level].shape
            pe = sinusoidal_2d(C, h, w)
            tokens = [(pyramids[i][level] + pe).reshape(C, h * w).transpose(1, 0) for i in range(n)]
            x = ops.stack([tokens[i] for i, _ in pairs], axis=0)
            s = ops.stack([tokens[j] for _, j in pairs], axis=0)
            x, s = matcher(x, s)
            messages: list[list[tuple[int, DenseArray]]] = [[] for _ in range(n)]
            for p, (i, j) in enumerate(pairs):
                messages[i].append((j, x[p]))
                messages[j].append((i, s[p]))
            for i in range(n):
                total = None
                for _, m in sorted(messages[i], key=lambda item: item[0]):
                    total = m if total is None else total + m
                out[i].append(total.transpose(1, 0).reshape(C, h, w))
        return out

    def forward(self, images: DenseArray) -> list[list[DenseArray]]:
        return self.cross_view_match(self.extract_pyramids(images))
