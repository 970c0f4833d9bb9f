"""
Forward ops with their vector-Jacobian products.

Each public function takes DenseArray operands (numbers and numpy arrays are
wrapped as constants), computes the result with numpy and, when a Graph is
recording and some operand is tracked, appends a node holding what the
backward pass needs.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np
from scipy.special import expit

from app.core.config import settings
from app.core.errors import NonFiniteError, ShapeError
from app.tensor.array import DenseArray, active_graph


# ==================== plumbing ====================

def as_array(x, like: DenseArray | None = None) -> DenseArray:
    """Wrap numbers and numpy arrays as untracked constants."""
    if isinstance(x, DenseArray):
        return x
    arr = np.asarray(x)
    if like is not None:
        return DenseArray(arr, dtype=like.dtype)
    return DenseArray(arr, dtype=arr.dtype if np.issubdtype(arr.dtype, np.floating) else None)


def _operands(a, b) -> tuple[DenseArray, DenseArray]:
    """Coerce a binary op's operands; constants take the dtype of the array side."""
    a_like = b if isinstance(b, DenseArray) else None
    b_like = a if isinstance(a, DenseArray) else None
    return as_array(a, like=a_like), as_array(b, like=b_like)


def _make(kind: str, inputs: tuple[DenseArray, ...], data: np.ndarray, backward_fn) -> DenseArray:
    if settings.DEBUG:
        for x in inputs:
            if not np.all(np.isfinite(x.data)):
                raise NonFiniteError(f"{kind}: non-finite input of shape {x.shape}")
    graph = active_graph()
    tracked = graph is not None and any(x.requires_grad for x in inputs)
    out = DenseArray(data, requires_grad=tracked, dtype=data.dtype)
    if tracked:
        graph.record(kind, inputs, out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return np.asarray(g).reshape(shape)


def _broadcast_check(kind: str, a: DenseArray, b: DenseArray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


def _kept_shape(shape: tuple[int, ...], axes: tuple[int, ...]) -> tuple[int, ...]:
    """`shape` with the reduced axes set to 1, as keepdims=True leaves it."""
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def _axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# ==================== elementwise binary ====================

def add(a, b) -> DenseArray:
    a, b = _operands(a, b)
    _broadcast_check("add", a, b)
    return _make("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> DenseArray:
    a, b = _operands(a, b)
    _broadcast_check("sub", a, b)
    return _make("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> DenseArray:
    a, b = _operands(a, b)
    _broadcast_check("mul", a, b)
    return _make("mul", (a, b), a.data * b.data,
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> DenseArray:
    a, b = _operands(a, b)
    _broadcast_check("div", a, b)
    out = a.data / b.data
    return _make("div", (a, b), out,
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def scale(a: DenseArray, s: float) -> DenseArray:
    """Multiply by a Python scalar (the scalar-mul kind)."""
    s = float(s)
    return _make("scalar-mul", (a,), a.data * a.dtype.type(s), lambda g: (g * s,))


def where(condition: np.ndarray, a, b) -> DenseArray:
    """Select from a where condition holds, else from b. The condition is a constant."""
    a, b = _operands(a, b)
    cond = np.asarray(condition, dtype=bool)
    try:
        np.broadcast_shapes(cond.shape, a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"where: shapes {cond.shape}, {a.shape} and {b.shape} are not broadcast-compatible") from None
    return _make("where", (a, b), np.where(cond, a.data, b.data),
                 lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                            _unbroadcast(np.where(cond, 0.0, g), b.shape)))


# ==================== elementwise unary ====================

def neg(a: DenseArray) -> DenseArray:
    return _make("neg", (a,), -a.data, lambda g: (-g,))


def power(a: DenseArray, p: float) -> DenseArray:
    return _make("pow", (a,), a.data ** p, lambda g: (g * p * a.data ** (p - 1),))


def sqrt(a: DenseArray) -> DenseArray:
    out = np.sqrt(a.data)
    return _make("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


def exp(a: DenseArray) -> DenseArray:
    out = np.exp(a.data)
    return _make("exp", (a,), out, lambda g: (g * out,))


def log(a: DenseArray) -> DenseArray:
    return _make("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def abs(a: DenseArray) -> DenseArray:  # noqa: A001 - mirrors numpy naming
    return _make("abs", (a,), np.abs(a.data), lambda g: (g * np.sign(a.data),))


def relu(a: DenseArray) -> DenseArray:
    mask = a.data > 0
    return _make("relu", (a,), np.where(mask, a.data, 0).astype(a.dtype), lambda g: (g * mask,))


def elu(a: DenseArray, alpha: float = 1.0) -> DenseArray:
    pos = a.data > 0
    neg_exp = np.exp(np.minimum(a.data, 0))
    out = np.where(pos, a.data, alpha * (neg_exp - 1)).astype(a.dtype)
    return _make("elu", (a,), out, lambda g: (g * np.where(pos, 1.0, alpha * neg_exp),))


def sigmoid(a: DenseArray) -> DenseArray:
    out = expit(a.data)
    return _make("sigmoid", (a,), out, lambda g: (g * out * (1 - out),))


def tanh(a: DenseArray) -> DenseArray:
    out = np.tanh(a.data)
    return _make("tanh", (a,), out, lambda g: (g * (1 - out * out),))


def clamp(a: DenseArray, lo: float | None = None, hi: float | None = None) -> DenseArray:
    out = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    return _make("clamp", (a,), out, lambda g: (g * inside,))


# ==================== linear algebra ====================

def matmul(a, b) -> DenseArray:
    a, b = as_array(a), as_array(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make("matmul", (a, b), a.data @ b.data, backward)


# ==================== reductions ====================

def sum(a: DenseArray, axis=None, keepdims: bool = False) -> DenseArray:  # noqa: A001
    axes = _axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        g = np.reshape(g, _kept_shape(a.shape, axes))
        return (np.broadcast_to(g, a.shape),)

    return _make("sum", (a,), np.asarray(out), backward)


def mean(a: DenseArray, axis=None, keepdims: bool = False) -> DenseArray:
    axes = _axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        g = np.reshape(g, _kept_shape(a.shape, axes))
        return (np.broadcast_to(g / count, a.shape),)

    return _make("mean", (a,), np.asarray(out), backward)


def max(a: DenseArray, axis: int = -1) -> tuple[DenseArray, np.ndarray]:  # noqa: A001
    """Maximum along one axis; returns (values, indices)."""
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    values = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis)

    def backward(g):
        z = np.zeros_like(a.data)
        np.put_along_axis(z, np.expand_dims(idx, axis), np.expand_dims(np.reshape(g, idx.shape), axis), axis)
        return (z,)

    return _make("max", (a,), values, backward), idx


def softmax(a: DenseArray, axis: int = -1) -> DenseArray:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make("softmax", (a,), out,
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def layer_norm(a: DenseArray, eps: float = 1e-5) -> DenseArray:
    """Normalize over the last axis to zero mean and unit variance."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def backward(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True)),)

    return _make("layer-norm", (a,), xhat.astype(a.dtype), backward)


def cumprod_exclusive(a: DenseArray) -> DenseArray:
    """y[..., m] = prod(a[..., :m]) along the last axis, with y[..., 0] = 1."""

    def excl(x):
        return np.concatenate([np.ones_like(x[..., :1]), np.cumprod(x[..., :-1], axis=-1)], axis=-1)

    out = excl(a.data)

    def backward(g):
        grad = np.zeros_like(a.data)
        for k in range(a.shape[-1] - 1):
            held = a.data.copy()
            held[..., k] = 1
            partial = excl(held)
            grad[..., k] = (g[..., k + 1:] * partial[..., k + 1:]).sum(axis=-1)
        return (grad,)

    return _make("cumprod", (a,), out, backward)


def cosine_similarity(a: DenseArray, b: DenseArray, axis: int = -1, eps: float = 1e-12) -> DenseArray:
    """Cosine of the angle between a and b along `axis`; 0 where either vector has zero norm."""
    if a.shape != b.shape:
        raise ShapeError(f"cosine-similarity: shapes {a.shape} and {b.shape} differ")
    axis = axis % a.ndim
    dot = (a.data * b.data).sum(axis=axis, keepdims=True)
    na = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    nb = np.sqrt((b.data * b.data).sum(axis=axis, keepdims=True))
    ok = (na > eps) & (nb > eps)
    na_s = np.where(ok, na, 1.0)
    nb_s = np.where(ok, nb, 1.0)
    cos = np.where(ok, dot / (na_s * nb_s), 0.0)

    def backward(g):
        g = np.reshape(g, dot.shape)
        ga = np.where(ok, g * (b.data / (na_s * nb_s) - cos * a.data / (na_s * na_s)), 0.0)
        gb = np.where(ok, g * (a.data / (na_s * nb_s) - cos * b.data / (nb_s * nb_s)), 0.0)
        return ga, gb

    return _make("cosine-similarity", (a, b), cos.squeeze(axis).astype(a.dtype), backward)


# ==================== shape ====================

def reshape(a: DenseArray, shape: Sequence[int]) -> DenseArray:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from None
    return _make("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a: DenseArray, axes: Sequence[int] | None = None) -> DenseArray:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(a_ % a.ndim for a_ in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} do not permute shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _make("transpose", (a,), a.data.transpose(axes), lambda g: (g.transpose(inverse),))


def broadcast_to(a: DenseArray, shape: Sequence[int]) -> DenseArray:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    return _make("broadcast", (a,), out, lambda g: (_unbroadcast(g, a.shape),))


def _is_advanced(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def index(a: DenseArray, idx) -> DenseArray:
    """Slicing and constant integer-array indexing (the slice kind)."""
    advanced = _is_advanced(idx)
    try:
        out = np.array(a.data[idx])
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} for shape {a.shape}") from None

    def backward(g):
        z = np.zeros_like(a.data)
        if advanced:
            np.add.at(z, idx, g)
        else:
            z[idx] += g
        return (z,)

    return _make("slice", (a,), out, backward)


def concat(arrays: Sequence[DenseArray], axis: int = 0) -> DenseArray:
    arrays = [as_array(x) for x in arrays]
    axis = axis % arrays[0].ndim
    for x in arrays[1:]:
        if x.ndim != arrays[0].ndim or any(
            x.shape[i] != arrays[0].shape[i] for i in range(x.ndim) if i != axis
        ):
            raise ShapeError(f"concatenate: shapes {arrays[0].shape} and {x.shape} differ off axis {axis}")
    sizes = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    out = np.concatenate([x.data for x in arrays], axis=axis)
    return _make("concatenate", tuple(arrays), out, lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(arrays: Sequence[DenseArray], axis: int = 0) -> DenseArray:
    arrays = [as_array(x) for x in arrays]
    for x in arrays[1:]:
        if x.shape != arrays[0].shape:
            raise ShapeError(f"stack: shapes {arrays[0].shape} and {x.shape} differ")
    out = np.stack([x.data for x in arrays], axis=axis)
    axis = axis % out.ndim
    return _make("stack", tuple(arrays), out,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(arrays))))


def upsample_nearest(a: DenseArray, factor: int = 2) -> DenseArray:
    """Nearest-neighbour upsampling of the last two axes."""
    out = np.repeat(np.repeat(a.data, factor, axis=-2), factor, axis=-1)
    h, w = a.shape[-2:]

    def backward(g):
        return (g.reshape(*a.shape[:-2], h, factor, w, factor).sum(axis=(-3, -1)),)

    return _make("upsample-nearest-2d", (a,), out, backward)


# ==================== convolutions ====================

def _window(offset: tuple[int, ...], sizes: Sequence[int], stride: int) -> tuple[slice, ...]:
    return (slice(None), slice(None)) + tuple(
        slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(offset, sizes)
    )


def _conv(kind: str, x: DenseArray, w: DenseArray, b: DenseArray | None, stride: int, padding: int) -> DenseArray:
    nd = w.ndim - 2
    if x.ndim != nd + 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"{kind}: input {x.shape} does not match weight {w.shape}")
    xp = np.pad(x.data, [(0, 0), (0, 0)] + [(padding, padding)] * nd)
    sizes = [(xp.shape[2 + i] - w.shape[2 + i]) // stride + 1 for i in range(nd)]
    if any(s < 1 for s in sizes):
        raise ShapeError(f"{kind}: input {x.shape} smaller than kernel {w.shape[2:]}")
    dtype = np.result_type(x.data, w.data)
    out = np.zeros((x.shape[0], w.shape[0], *sizes), dtype=dtype)
    offsets = list(np.ndindex(*w.shape[2:]))
    for off in offsets:
        patch = xp[_window(off, sizes, stride)]
        out += np.moveaxis(np.tensordot(patch, w.data[(slice(None), slice(None)) + off], axes=([1], [1])), -1, 1)
    if b is not None:
        out += b.data.reshape(1, -1, *[1] * nd)

    spatial = list(range(2, 2 + nd))

    def backward(g):
        gxp = np.zeros_like(xp, dtype=dtype)
        gw = np.zeros_like(w.data)
        for off in offsets:
            win = _window(off, sizes, stride)
            wk = w.data[(slice(None), slice(None)) + off]
            gxp[win] += np.moveaxis(np.tensordot(g, wk, axes=([1], [0])), -1, 1)
            gw[(slice(None), slice(None)) + off] = np.tensordot(g, xp[win], axes=([0] + spatial, [0] + spatial))
        crop = (slice(None), slice(None)) + tuple(slice(padding, padding + x.shape[2 + i]) for i in range(nd))
        grads = [gxp[crop], gw]
        if b is not None:
            grads.append(g.sum(axis=tuple([0] + spatial)))
        return tuple(grads)

    inputs = (x, w) if b is None else (x, w, b)
    return _make(kind, inputs, out, backward)


def conv2d(x: DenseArray, w: DenseArray, b: DenseArray | None = None, stride: int = 1, padding: int = 0) -> DenseArray:
    """x: (N, C, H, W), w: (O, C, kh, kw)."""
    return _conv("conv2d", x, w, b, stride, padding)


def conv3d(x: DenseArray, w: DenseArray, b: DenseArray | None = None, stride: int = 1, padding: int = 0) -> DenseArray:
    """x: (N, C, D, H, W), w: (O, C, kd, kh, kw)."""
    return _conv("conv3d", x, w, b, stride, padding)


def conv_transpose3d(x: DenseArray, w: DenseArray, b: DenseArray | None = None, stride: int = 2,
                     padding: int = 1, output_padding: int = 1) -> DenseArray:
    """x: (N, Cin, D, H, W), w: (Cin, Cout, kd, kh, kw); the adjoint of a strided conv3d."""
    nd = 3
    if x.ndim != nd + 2 or w.ndim != nd + 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"transpose-conv3d: input {x.shape} does not match weight {w.shape}")
    in_sizes = x.shape[2:]
    full_sizes = [(n - 1) * stride + k + output_padding for n, k in zip(in_sizes, w.shape[2:])]
    out_sizes = [f - 2 * padding for f in full_sizes]
    if any(s < 1 for s in out_sizes):
        raise ShapeError(f"transpose-conv3d: padding {padding} too large for input {x.shape}")
    dtype = np.result_type(x.data, w.data)
    full = np.zeros((x.shape[0], w.shape[1], *full_sizes), dtype=dtype)
    offsets = list(np.ndindex(*w.shape[2:]))
    for off in offsets:
        full[_window(off, in_sizes, stride)] += np.moveaxis(
            np.tensordot(x.data, w.data[(slice(None), slice(None)) + off], axes=([1], [0])), -1, 1)
    crop = (slice(None), slice(None)) + tuple(slice(padding, padding + s) for s in out_sizes)
    out = full[crop].copy()
    if b is not None:
        out += b.data.reshape(1, -1, 1, 1, 1)

    spatial = [2, 3, 4]

    def backward(g):
        gfull = np.zeros_like(full)
        gfull[crop] = g
        gx = np.zeros_like(x.data, dtype=dtype)
        gw = np.zeros_like(w.data)
        for off in offsets:
            gpatch = gfull[_window(off, in_sizes, stride)]
            gx += np.moveaxis(np.tensordot(gpatch, w.data[(slice(None), slice(None)) + off], axes=([1], [1])), -1, 1)
            gw[(slice(None), slice(None)) + off] = np.tensordot(x.data, gpatch, axes=([0] + spatial, [0] + spatial))
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return tuple(grads)

    inputs = (x, w) if b is None else (x, w, b)
    return _make("transpose-conv3d", inputs, out, backward)


# ==================== grid sampling ====================

SAMPLE_TOLERANCE = 1e-4  # pixels; absorbs round-off at the grid border


def _scatter_add(target: np.ndarray, flat: np.ndarray, values: np.ndarray) -> None:
    """target: (S, C); flat: (...) indices into S; values: (..., C)."""
    flat = flat.reshape(-1)
    values = values.reshape(flat.size, -1)
    for c in range(target.shape[1]):
        target[:, c] += np.bincount(flat, weights=values[:, c], minlength=target.shape[0])


def _grid_sample(kind: str, grid: DenseArray, coords: DenseArray) -> tuple[DenseArray, np.ndarray]:
    """
    Multilinear sampling with zero padding.

    grid: (C, *spatial); coords: (..., k) with coords[..., 0] along the last
    spatial axis, coords[..., 1] the one before it, and so on. Integer
    coordinates are sample centers. Returns values (C, ...) and a mask that is
    False wherever a corner with non-zero weight falls outside the grid.
    """
    k = coords.shape[-1]
    spatial = grid.shape[1:]
    if len(spatial) != k:
        raise ShapeError(f"{kind}: coords {coords.shape} do not address grid {grid.shape}")
    sizes = [spatial[k - 1 - i] for i in range(k)]
    c = coords.data
    finite = np.all(np.isfinite(c), axis=-1)
    c = np.where(finite[..., None], c, -1.0e6)
    valid = finite.copy()
    for i in range(k):
        valid &= (c[..., i] >= -SAMPLE_TOLERANCE) & (c[..., i] <= sizes[i] - 1 + SAMPLE_TOLERANCE)
    base = np.floor(c).astype(np.int64)
    frac = (c - base).astype(grid.dtype)

    flat_grid = np.moveaxis(grid.data, 0, -1).reshape(-1, grid.shape[0])
    out = np.zeros(c.shape[:-1] + (grid.shape[0],), dtype=grid.dtype)
    corners = []
    for bits in itertools.product((0, 1), repeat=k):
        inside = np.ones(c.shape[:-1], dtype=bool)
        weight = np.ones(c.shape[:-1], dtype=grid.dtype)
        clipped = []
        for i in range(k):
            idx = base[..., i] + bits[i]
            inside &= (idx >= 0) & (idx < sizes[i])
            weight = weight * (frac[..., i] if bits[i] else 1 - frac[..., i])
            clipped.append(np.clip(idx, 0, sizes[i] - 1))
        weight = weight * inside
        # spatial axis a is addressed by coordinate k-1-a
        flat = np.ravel_multi_index(tuple(clipped[k - 1 - a] for a in range(k)), spatial)
        values = flat_grid[flat]
        out += weight[..., None] * values
        corners.append((bits, inside, flat, weight, values))

    def backward(g):
        g_last = np.moveaxis(g, 0, -1)
        ggrid = np.zeros_like(flat_grid)
        gcoords = np.zeros_like(coords.data) if coords.requires_grad else None
        for bits, inside, flat, weight, values in corners:
            if grid.requires_grad:
                _scatter_add(ggrid, flat, weight[..., None] * g_last)
            if gcoords is not None:
                dot = (g_last * values).sum(axis=-1) * inside
                for i in range(k):
                    dw = np.ones_like(dot)
                    for j in range(k):
                        if j != i:
                            dw = dw * (frac[..., j] if bits[j] else 1 - frac[..., j])
                    gcoords[..., i] += dot * dw * (1.0 if bits[i] else -1.0)
        grad_grid = np.moveaxis(ggrid.reshape(*spatial, grid.shape[0]), -1, 0) if grid.requires_grad else None
        if gcoords is not None:
            gcoords = np.where(finite[..., None], gcoords, 0.0)
        return grad_grid, gcoords

    data = np.moveaxis(out, -1, 0)
    return _make(kind, (grid, coords), np.ascontiguousarray(data), backward), valid


def bilinear_sample(feat: DenseArray, coords) -> tuple[DenseArray, np.ndarray]:
    """feat: (C, H, W); coords: (..., 2) pixel (u, v). Returns (C, ...) values and mask."""
    return _grid_sample("bilinear-sample-2d", feat, as_array(coords, like=feat))


def trilinear_sample(vol: DenseArray, coords) -> tuple[DenseArray, np.ndarray]:
    """vol: (C, D, H, W); coords: (..., 3) as (u, v, depth index). Returns (C, ...) values and mask."""
    return _grid_sample("trilinear-sample-3d", vol, as_array(coords, like=vol))
