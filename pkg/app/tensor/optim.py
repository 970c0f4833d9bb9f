"""
Adam optimizer.
"""

from __future__ import annotations

import numpy as np
from loguru import logger

from app.core.errors import GraphError
from app.tensor.nn import Parameter


class Adam:
    """
    Standard Adam with bias correction.

    `step()` applies one update to every parameter whose gradient is finite,
    zeroes all gradients, and returns how many parameters were skipped.
    Moment buffers are keyed by parameter name so they survive a checkpoint
    round trip.
    """

    def __init__(self, params: list[tuple[str, Parameter]], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        names = [name for name, _ in params]
        if len(set(names)) != len(names):
            duplicates = sorted({name for name in names if names.count(name) > 1})
            raise GraphError(f"parameter names must be unique, repeated: {', '.join(duplicates)}")
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> int:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        skipped = 0
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                skipped += 1
                continue
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.value = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if skipped:
            logger.warning(f"adam: skipped {skipped} parameter(s) with non-finite gradients")
        self.zero_grad()
        return skipped

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        """Moment buffers as named arrays, ready for a checkpoint."""
        out = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for name in self.params:
            self.m[name] = np.asarray(arrays[f"adam.m.{name}"], dtype=self.m[name].dtype)
            self.v[name] = np.asarray(arrays[f"adam.v.{name}"], dtype=self.v[name].dtype)
        self.t = t
