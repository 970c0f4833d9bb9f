"""
Linear attention and the encoder layer shared by all transformers.

Attention uses the elu(x) + 1 feature map, so cost is linear in the number
of tokens and outputs depend on the key set only through sums over keys.
"""

from __future__ import annotations

import math

import numpy as np

from app.tensor import nn, ops
from app.tensor.array import DenseArray, get_dtype

EPS = 1e-6


def linear_attention(q: DenseArray, k: DenseArray, v: DenseArray, heads: int,
                     key_mask: np.ndarray | None = None) -> DenseArray:
    """
    q: (B, L, C); k, v: (B, S, C); key_mask: (B, S) bool, False keys are ignored.
    Returns (B, L, C).
    """
    B, L, C = q.shape
    S = k.shape[1]
    d = C // heads
    Q = ops.elu(q.reshape(B, L, heads, d).transpose(0, 2, 1, 3)) + 1.0     # (B, H, L, d)
    K = ops.elu(k.reshape(B, S, heads, d).transpose(0, 2, 1, 3)) + 1.0     # (B, H, S, d)
    V = v.reshape(B, S, heads, d).transpose(0, 2, 1, 3)
    if key_mask is not None:
        m = np.asarray(key_mask, dtype=K.dtype).reshape(B, 1, S, 1)
        K = K * m
        V = V * m
    KV = ops.matmul(K.transpose(0, 1, 3, 2), V)                          # (B, H, d, d)
    k_sum = ops.sum(K, axis=2, keepdims=True)                            # (B, H, 1, d)
    denom = ops.matmul(Q, k_sum.transpose(0, 1, 3, 2)) + EPS             # (B, H, L, 1)
    out = ops.matmul(Q, KV) / denom
    return out.transpose(0, 2, 1, 3).reshape(B, L, C)


class AttentionLayer(nn.Module):
    """Multi-head linear attention, merge, then an MLP over [x, message]; residual output."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        self.q_proj = nn.Linear(d_model, d_model, rng, bias=False)
        self.k_proj = nn.Linear(d_model, d_model, rng, bias=False)
        self.v_proj = nn.Linear(d_model, d_model, rng, bias=False)
        self.merge = nn.Linear(d_model, d_model, rng, bias=False)
        self.mlp1 = nn.Linear(2 * d_model, 2 * d_model, rng, bias=False)
        self.mlp2 = nn.Linear(2 * d_model, d_model, rng, bias=False)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)

    def forward(self, x: DenseArray, source: DenseArray, source_mask: np.ndarray | None = None) -> DenseArray:
        message = linear_attention(self.q_proj(x), self.k_proj(source), self.v_proj(source),
                                   self.heads, source_mask)
        message = self.norm1(self.merge(message))
        message = self.mlp2(ops.relu(self.mlp1(ops.concat([x, message], axis=-1))))
        message = self.norm2(message)
        return x + message


def sinusoidal_2d(channels: int, height: int, width: int) -> np.ndarray:
    """Fixed 2D sinusoidal encoding of shape (channels, height, width); channels % 4 == 0."""
    pe = np.zeros((channels, height, width))
    y = np.arange(height, dtype=np.float64)[:, None].repeat(width, axis=1)
    x = np.arange(width, dtype=np.float64)[None, :].repeat(height, axis=0)
    div = np.exp(np.arange(0, channels // 2, 2) * (-math.log(10000.0) / (channels // 2)))
    for n, f in enumerate(div):
        pe[4 * n + 0] = np.sin(x * f)
        pe[4 * n + 1] = np.cos(x * f)
        pe[4 * n + 2] = np.sin(y * f)
        pe[4 * n + 3] = np.cos(y * f)
    return pe.astype(get_dtype())
