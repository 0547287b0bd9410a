"""Shared helpers for the test modules."""

from __future__ import annotations

import numpy as np

from fxcast.models import ModelConfig, build, toy_hparams
from fxcast.numerics import Tensor
from fxcast.numerics.gradcheck import relative_error, tape_gradients


def toy_model(arch: str, L: int = 8, H: int = 4, F: int = 3, seed: int = 0, width: int = 8, **hp):
    return build(ModelConfig(arch, L, H, F, seed=seed, hparams=toy_hparams(arch, width) | hp))


def model_gradient_error(arch: str, seed: int, n_coords: int = 6, h: float = 1e-7) -> float:
    """Worst relative error of parameter gradients against central differences.

    Two probes per case: the derivative along one random direction spanning
    every parameter, and ``n_coords`` single entries drawn uniformly from
    all parameters.
    """
    model = toy_model(arch, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    x = Tensor(rng.standard_normal((2, 8, 3)))
    weights = Tensor(rng.standard_normal((2, 4)))

    def objective():
        return (model.forward(x) * weights).mean()

    params = model.parameters()
    analytic = tape_gradients(objective, params)

    base = [p.data.copy() for p in params]
    dirs = [rng.standard_normal(p.shape) for p in params]
    for p, b, v in zip(params, base, dirs):
        p.data = b + h * v
    fp = float(objective().data)
    for p, b, v in zip(params, base, dirs):
        p.data = b - h * v
    fm = float(objective().data)
    for p, b in zip(params, base):
        p.data = b
    fd = (fp - fm) / (2 * h)
    ad = sum(float(np.sum(g * v)) for g, v in zip(analytic, dirs))
    worst = relative_error(np.array(ad), np.array(fd))

    sizes = np.array([p.size for p in params])
    flat_ids = rng.choice(sizes.sum(), size=min(n_coords, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    num, ana = [], []
    for fid in flat_ids:
        k = int(np.searchsorted(offsets, fid, side="right") - 1)
        i = int(fid - offsets[k])
        flat = params[k].data.reshape(-1)
        old = flat[i]
        flat[i] = old + h
        fp = float(objective().data)
        flat[i] = old - h
        fm = float(objective().data)
        flat[i] = old
        num.append((fp - fm) / (2 * h))
        ana.append(analytic[k].reshape(-1)[i])
    return max(worst, relative_error(np.array(ana), np.array(num)))


def gd_ridge(X, y, lam, tol=1e-14, max_iter=200_000):
    """Full-batch gradient descent on ||y - Xw - b||^2 + lam ||w||^2 (intercept last)."""
    n, f = X.shape
    A = np.column_stack([X, np.ones(n)])
    D = np.append(np.full(f, lam), 0.0)
    step = 1.0 / (2 * (np.linalg.norm(A, 2) ** 2 + lam))
    w = np.zeros(f + 1)
    for _ in range(max_iter):
        g = 2 * (A.T @ (A @ w - y)) + 2 * D * w
        w -= step * g
        if np.max(np.abs(g)) < tol:
            break
    return w


# ---------------------------------------------------------------- op gradient cases


def _leaf(rng, *shape, positive=False):
    data = rng.uniform(0.5, 2.0, shape) if positive else rng.standard_normal(shape)
    return Tensor(data, requires_grad=True)


def _weighted(rng, out):
    # random linear functional so every output entry matters
    return (out * Tensor(rng.standard_normal(out.shape))).sum()


def op_cases():
    """name -> builder(rng) returning (scalar objective, tensors to differentiate)."""
    from fxcast.numerics import ops

    def unary(f, positive=False):
        def build(rng):
            x = _leaf(rng, 3, 4, positive=positive)
            w = Tensor(rng.standard_normal((3, 4)))
            return (lambda: (f(x) * w).sum()), [x]
        return build

    def binary(f, positive_b=False):
        def build(rng):
            a, b = _leaf(rng, 3, 4), _leaf(rng, 4, positive=positive_b)  # broadcast b
            w = Tensor(rng.standard_normal((3, 4)))
            return (lambda: (f(a, b) * w).sum()), [a, b]
        return build

    def matmul(rng):
        a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
        w = Tensor(rng.standard_normal((2, 3, 5)))
        return (lambda: (ops.matmul(a, b) * w).sum()), [a, b]

    def linear(rng):
        x, W, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5), _leaf(rng, 5)
        w = Tensor(rng.standard_normal((2, 3, 5)))
        return (lambda: (ops.linear(x, W, b) * w).sum()), [x, W, b]

    def softmax(rng):
        x = _leaf(rng, 3, 5)
        w = Tensor(rng.standard_normal((3, 5)))
        return (lambda: (ops.softmax(x, axis=-1) * w).sum()), [x]

    def layer_norm(rng):
        x, g, b = _leaf(rng, 3, 6), _leaf(rng, 6), _leaf(rng, 6)
        w = Tensor(rng.standard_normal((3, 6)))
        return (lambda: (ops.layer_norm(x, g, b) * w).sum()), [x, g, b]

    def reduce_sum(rng):
        x = _leaf(rng, 3, 4, 2)
        w = Tensor(rng.standard_normal((3, 2)))
        return (lambda: (ops.reduce(x, "sum", axis=1) * w).sum()), [x]

    def reduce_mean(rng):
        x = _leaf(rng, 3, 4, 2)
        w = Tensor(rng.standard_normal((4,)))
        return (lambda: (ops.reduce(x, "mean", axis=(0, 2)) * w).sum()), [x]

    def shape_ops(rng):
        x = _leaf(rng, 2, 3, 4)
        w = Tensor(rng.standard_normal((4, 6)))

        def f():
            y = ops.swapaxes(ops.transpose(x, (1, 0, 2)), 0, 2)  # [4, 2, 3]
            return (ops.reshape(y, (4, 6)) * w).sum()
        return f, [x]

    def index(rng):
        x = _leaf(rng, 4, 5)
        w = Tensor(rng.standard_normal((2, 3)))
        return (lambda: (ops.index(x, (slice(1, 3), [0, 2, 4])) * w).sum()), [x]

    def concat_stack(rng):
        a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 3)
        w1, w2 = Tensor(rng.standard_normal((4, 3))), Tensor(rng.standard_normal((2, 2, 3)))
        return (lambda: (ops.concat([a, b], 0) * w1).sum() + (ops.stack([a, b], 1) * w2).sum()), [a, b]

    def conv(rng):
        x, k = _leaf(rng, 2, 9, 3), _leaf(rng, 3, 3, 2)
        w = Tensor(rng.standard_normal((2, 9, 2)))
        return (lambda: (ops.conv1d_causal(x, k, 2) * w).sum()), [x, k]

    def lstm(rng):
        x = _leaf(rng, 2, 5, 3)
        wx, wh, b = _leaf(rng, 3, 8), _leaf(rng, 2, 8), _leaf(rng, 8)
        w = Tensor(rng.standard_normal((2, 5, 2)))
        return (lambda: (ops.lstm_layer(x, wx, wh, b) * w).sum()), [x, wx, wh, b]

    def linear_map(rng):
        x = _leaf(rng, 2, 6, 3)
        M = rng.standard_normal((4, 6))
        w = Tensor(rng.standard_normal((2, 4, 3)))
        return (lambda: (ops.linear_map(x, M, axis=1) * w).sum()), [x]

    def attention(rng):
        q, k, v = _leaf(rng, 2, 3, 4, 2), _leaf(rng, 2, 3, 5, 2), _leaf(rng, 2, 3, 5, 2)
        w = Tensor(rng.standard_normal((2, 3, 4, 2)))
        return (lambda: (ops.attention(q, k, v, 0.7)[0] * w).sum()), [q, k, v]

    return {
        "add": binary(ops.add), "sub": binary(ops.sub), "mul": binary(ops.mul),
        "div": binary(ops.div, positive_b=True), "neg": unary(ops.neg),
        "matmul": matmul, "linear": linear,
        "relu": unary(ops.relu), "tanh": unary(ops.tanh), "sigmoid": unary(ops.sigmoid),
        "gelu": unary(ops.gelu), "exp": unary(ops.exp), "absolute": unary(ops.absolute),
        "square": unary(ops.square), "softmax": softmax, "layer_norm": layer_norm,
        "reduce_sum": reduce_sum, "reduce_mean": reduce_mean, "reshape_transpose": shape_ops,
        "index": index, "concat_stack": concat_stack, "conv1d_causal": conv, "lstm_layer": lstm,
        "linear_map": linear_map, "attention": attention,
    }


def op_gradient_error(builder, seed: int) -> float:
    from fxcast.numerics.gradcheck import check_gradients

    rng = np.random.default_rng(seed)
    fn, wrt = builder(rng)
    return max(check_gradients(fn, wrt, h=1e-6).values())


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def record(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, title, detail)
    print(f"criterion {number} ({title}): {'PASS' if passed else 'FAIL'} - {detail}")
