"""
Central finite-difference checks for every op kind.

`check_gradients` compares the reverse-mode gradient of a scalar function
with central differences; `run_suite` runs one randomized case per op kind
and is what the `grad-check` command executes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from loguru import logger

from app.tensor import ops
from app.tensor.array import DenseArray, Graph, precision


@dataclass
class GradCheckResult:
    kind: str
    max_abs_err: float
    max_rel_err: float
    passed: bool


@dataclass(frozen=True)
class Tolerance:
    eps: float
    rtol: float
    atol: float


DOUBLE = Tolerance(eps=1e-5, rtol=1e-4, atol=1e-7)
SINGLE = Tolerance(eps=1e-2, rtol=5e-2, atol=1e-3)


def check_gradients(fn: Callable[..., DenseArray], inputs: list[np.ndarray], kind: str = "custom",
                    double: bool = True, sampled_entries: int | None = None, seed: int = 0) -> GradCheckResult:
    """
    fn maps DenseArrays to a scalar DenseArray; every input is differentiated.
    With `sampled_entries`, only that many randomly chosen entries per input are
    perturbed, for functions too expensive to difference exhaustively.
    """
    tol = DOUBLE if double else SINGLE
    rng = np.random.default_rng(seed)
    with precision("double" if double else "single"):
        leaves = [DenseArray(x, requires_grad=True) for x in inputs]
        with Graph() as graph:
            loss = fn(*leaves)
        graph.backward(loss)
        analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

        def value(arrays: list[np.ndarray]) -> float:
            return fn(*[DenseArray(a) for a in arrays]).item()

        worst_abs = worst_rel = 0.0
        passed = True
        work = [np.array(leaf.data) for leaf in leaves]
        for i, x in enumerate(work):
            entries = list(np.ndindex(x.shape))
            if sampled_entries is not None and sampled_entries < len(entries):
                entries = [entries[p] for p in np.sort(rng.choice(len(entries), size=sampled_entries, replace=False))]
            numeric = np.zeros(len(entries))
            for n, j in enumerate(entries):
                orig = x[j]
                x[j] = orig + tol.eps
                f_plus = value(work)
                x[j] = orig - tol.eps
                f_minus = value(work)
                x[j] = orig
                numeric[n] = (f_plus - f_minus) / (2 * tol.eps)
            expected = np.array([analytic[i][j] for j in entries])
            diff = np.abs(expected - numeric)
            scale = np.maximum(np.abs(expected), np.abs(numeric))
            worst_abs = max(worst_abs, float(diff.max()))
            worst_rel = max(worst_rel, float((diff / np.maximum(scale, tol.atol)).max()))
            passed &= bool(np.all(diff <= tol.rtol * scale + tol.atol))
    return GradCheckResult(kind, worst_abs, worst_rel, passed)


# ==================== randomized cases ====================

def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.2) -> np.ndarray:
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    r = rng.normal
    weights: dict[tuple[int, ...], np.ndarray] = {}

    def dot(out: DenseArray) -> DenseArray:
        # fixed random projection per output shape makes every gradient entry matter
        if out.shape not in weights:
            weights[out.shape] = rng.normal(size=out.shape)
        return ops.sum(ops.mul(out, weights[out.shape]))

    frac_coords = np.array([[1.3, 0.6], [2.7, 3.2], [0.25, 1.75], [-0.5, 2.4], [3.8, 0.3]])
    tri_coords = np.array([[1.3, 0.6, 1.4], [2.7, 2.2, 0.3], [0.25, 1.75, 2.6], [0.4, 2.6, -0.5]])

    cases = {
        "add": (lambda a, b: dot(a + b), [r(size=(3, 4)), r(size=(1, 4))]),
        "sub": (lambda a, b: dot(a - b), [r(size=(3, 4)), r(size=(3, 1))]),
        "mul": (lambda a, b: dot(a * b), [r(size=(3, 4)), r(size=(4,))]),
        "div": (lambda a, b: dot(a / b), [r(size=(3, 4)), _away_from_zero(rng, (3, 4), 0.5)]),
        "scalar-mul": (lambda a: dot(ops.scale(a, -2.5)), [r(size=(3, 4))]),
        "pow": (lambda a: dot(ops.power(a, 3.0)), [r(size=(3, 4))]),
        "sqrt": (lambda a: dot(ops.sqrt(a)), [rng.uniform(0.5, 2.0, size=(3, 4))]),
        "exp": (lambda a: dot(ops.exp(a)), [r(size=(3, 4))]),
        "log": (lambda a: dot(ops.log(a)), [rng.uniform(0.5, 2.0, size=(3, 4))]),
        "abs": (lambda a: dot(ops.abs(a)), [_away_from_zero(rng, (3, 4))]),
        "clamp": (lambda a: dot(ops.clamp(a, -0.5, 0.5)), [np.array([[-0.9, -0.3, 0.1, 0.8]] * 3)]),
        "where": (lambda a, b: dot(ops.where(np.array([True, False, True, False]), a, b)),
                  [r(size=(3, 4)), r(size=(3, 4))]),
        "matmul": (lambda a, b: dot(a @ b), [r(size=(2, 3, 4)), r(size=(4, 5))]),
        "relu": (lambda a: dot(ops.relu(a)), [_away_from_zero(rng, (3, 4))]),
        "elu": (lambda a: dot(ops.elu(a)), [_away_from_zero(rng, (3, 4))]),
        "sigmoid": (lambda a: dot(ops.sigmoid(a)), [r(size=(3, 4))]),
        "tanh": (lambda a: dot(ops.tanh(a)), [r(size=(3, 4))]),
        "softmax": (lambda a: dot(ops.softmax(a, axis=0)), [r(size=(3, 4))]),
        "layer-norm": (lambda a: dot(ops.layer_norm(a)), [r(size=(3, 4))]),
        "sum": (lambda a: dot(ops.sum(a, axis=1, keepdims=True)), [r(size=(3, 4))]),
        "mean": (lambda a: dot(ops.mean(a, axis=0)), [r(size=(3, 4))]),
        "max": (lambda a: dot(ops.max(a, axis=1)[0]),
                [rng.permutation(12).reshape(3, 4) * 0.1]),
        "concatenate": (lambda a, b: dot(ops.concat([a, b], axis=1)),
                        [r(size=(3, 4)), r(size=(3, 2))]),
        "stack": (lambda a, b: dot(ops.stack([a, b], axis=1)),
                  [r(size=(3, 4)), r(size=(3, 4))]),
        "slice": (lambda a: dot(a[np.array([0, 2, 0]), 1:3]), [r(size=(3, 4))]),
        "reshape": (lambda a: dot(a.reshape(4, 3)), [r(size=(3, 4))]),
        "transpose": (lambda a: dot(ops.transpose(a, (2, 0, 1))), [r(size=(2, 3, 4))]),
        "broadcast": (lambda a: dot(ops.broadcast_to(a, (2, 3, 4))), [r(size=(3, 1))]),
        "upsample-nearest-2d": (lambda a: dot(ops.upsample_nearest(a)),
                                [r(size=(2, 2, 3))]),
        "cumprod": (lambda a: dot(ops.cumprod_exclusive(a)), [rng.uniform(0.2, 1.0, size=(3, 4))]),
        "cosine-similarity": (lambda a, b: dot(ops.cosine_similarity(a, b, axis=1)),
                              [r(size=(3, 4)), r(size=(3, 4))]),
        "conv2d": (lambda x, w, b: dot(ops.conv2d(x, w, b, stride=2, padding=1)),
                   [r(size=(1, 2, 5, 5)), r(size=(3, 2, 3, 3)), r(size=(3,))]),
        "conv3d": (lambda x, w, b: dot(ops.conv3d(x, w, b, stride=1, padding=1)),
                   [r(size=(1, 2, 3, 3, 3)), r(size=(2, 2, 3, 3, 3)), r(size=(2,))]),
        "transpose-conv3d": (lambda x, w, b: dot(ops.conv_transpose3d(x, w, b)),
                             [r(size=(1, 2, 2, 2, 2)), r(size=(2, 2, 3, 3, 3)), r(size=(2,))]),
        "bilinear-sample-2d": (lambda f, c: dot(ops.bilinear_sample(f, c)[0]),
                               [r(size=(2, 4, 5)), frac_coords]),
        "trilinear-sample-3d": (lambda v, c: dot(ops.trilinear_sample(v, c)[0]),
                                [r(size=(2, 3, 3, 4)), tri_coords]),
    }

    def conv_net(x, w1, b1, w2, b2):
        h = ops.tanh(ops.conv2d(x, w1, b1, stride=1, padding=1))
        return ops.sum(ops.tanh(ops.conv2d(h, w2, b2, stride=2, padding=1)))

    cases["conv2d-net"] = (conv_net, [r(size=(1, 2, 6, 6)), r(size=(3, 2, 3, 3)) * 0.5, r(size=(3,)) * 0.1,
                                      r(size=(2, 3, 3, 3)) * 0.5, r(size=(2,)) * 0.1])
    return cases


KINDS = tuple(_cases(np.random.default_rng(0)).keys())


def run_suite(double: bool = True, seed: int = 0, kinds: list[str] | None = None) -> list[GradCheckResult]:
    cases = _cases(np.random.default_rng(seed))
    results = []
    for kind, (fn, inputs) in cases.items():
        if kinds is not None and kind not in kinds:
            continue
        result = check_gradients(fn, inputs, kind=kind, double=double)
        log = logger.info if result.passed else logger.error
        log(f"{kind:<22} max_abs={result.max_abs_err:.2e} max_rel={result.max_rel_err:.2e} "
            f"{'ok' if result.passed else 'FAILED'}")
        results.append(result)
    return results
