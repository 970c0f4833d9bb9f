"""
Parameters, modules and the handful of layers the networks are built from.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from app.core.errors import ShapeError
from app.tensor import ops
from app.tensor.array import DenseArray, get_dtype


class Parameter(DenseArray):
    """A trainable leaf. Its gradient buffer starts zeroed."""

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    @value.setter
    def value(self, new: np.ndarray) -> None:
        new = np.asarray(new, dtype=self.data.dtype)
        if new.shape != self.data.shape:
            raise ShapeError(f"parameter {self.name!r}: shape {new.shape} != {self.data.shape}")
        self.data = np.ascontiguousarray(new)


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(get_dtype())


class Module:
    """Base class: subclasses assign Parameters, Modules or lists of Modules as attributes."""

    training: bool = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            children = value if isinstance(value, (list, tuple)) else [value]
            for child in children:
                if isinstance(child, Module):
                    yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    """y = x W^T + b over the last axis."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(_uniform(rng, (out_features, in_features), in_features))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: DenseArray) -> DenseArray:
        y = ops.matmul(x, ops.transpose(self.weight))
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, stride: int = 1, padding: int | None = None):
        self.weight = Parameter(_uniform(rng, (cout, cin, kernel, kernel), cin * kernel * kernel))
        self.bias = Parameter(np.zeros(cout))
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def forward(self, x: DenseArray) -> DenseArray:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Conv3d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, stride: int = 1, padding: int | None = None):
        self.weight = Parameter(_uniform(rng, (cout, cin, kernel, kernel, kernel), cin * kernel ** 3))
        self.bias = Parameter(np.zeros(cout))
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def forward(self, x: DenseArray) -> DenseArray:
        return ops.conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose3d(Module):
    """Stride-2 upsampling conv; weight layout (cin, cout, k, k, k)."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, kernel: int = 3, stride: int = 2):
        self.weight = Parameter(_uniform(rng, (cin, cout, kernel, kernel, kernel), cin * kernel ** 3))
        self.bias = Parameter(np.zeros(cout))
        self.stride = stride
        self.padding = kernel // 2

    def forward(self, x: DenseArray) -> DenseArray:
        return ops.conv_transpose3d(x, self.weight, self.bias, stride=self.stride,
                                    padding=self.padding, output_padding=self.stride - 1)


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(features))
        self.beta = Parameter(np.zeros(features))
        self.eps = eps

    def forward(self, x: DenseArray) -> DenseArray:
        return ops.layer_norm(x, self.eps) * self.gamma + self.beta


class MLP(Module):
    """Linear layers with ReLU between them (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def forward(self, x: DenseArray) -> DenseArray:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.relu(x)
        return x
