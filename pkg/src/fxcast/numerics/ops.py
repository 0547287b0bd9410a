"""Differentiable operations on :class:`~fxcast.numerics.tensor.Tensor`.

Every function takes Tensors (or array-likes, promoted to constants) and
returns a new Tensor.  Backward closures capture only what they need.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from fxcast.errors import DimensionError, ParameterError
from fxcast.numerics.tensor import Tensor, as_tensor, make_result

_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- binary ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_result(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_result(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_result(ad * bd, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return make_result(out, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules on leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    try:
        out = ad @ bd
    except ValueError:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}") from None
    return make_result(out, (a, b), back)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` over the last axis, recorded as one node."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd
    parents: tuple[Tensor, ...]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (wd.shape[1],):
            raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out += bias.data
        parents = (x, weight, bias)
    else:
        parents = (x, weight)
    out = out.reshape(xd.shape[:-1] + (wd.shape[1],))

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(out, parents, back)


# ------------------------------------------------------------- unary ops


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return make_result(y, (x,), back)


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,))


def absolute(x) -> Tensor:
    """|x|; the subgradient at 0 is taken as 0."""
    x = as_tensor(x)
    s = np.sign(x.data)
    return make_result(np.abs(x.data), (x,), lambda g: (g * s,))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return make_result(xd * xd, (x,), lambda g: (2.0 * g * xd,))


_UNARY = {"relu": relu, "gelu": gelu, "tanh": tanh, "sigmoid": sigmoid}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, *inputs) -> Tensor:
    """Dispatch by name: add, sub, mul (binary) or relu, gelu, tanh, sigmoid."""
    if kind in _BINARY:
        if len(inputs) != 2:
            raise ParameterError(f"{kind} takes two inputs, got {len(inputs)}")
        return _BINARY[kind](*inputs)
    if kind in _UNARY:
        if len(inputs) != 1:
            raise ParameterError(f"{kind} takes one input, got {len(inputs)}")
        return _UNARY[kind](inputs[0])
    raise ParameterError(f"unknown elementwise op {kind!r}")


# ------------------------------------------------------- normalizations


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < max(x.ndim, 1):
        raise DimensionError(f"softmax: axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), back)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 1 or gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: input {x.shape}, gain {gain.shape}, bias {bias.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        gxhat = g * gd
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_result(out, (x, gain, bias), back)


# ------------------------------------------------------------ reductions


def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for {ndim}-d tensor")
    return tuple(ax % ndim for ax in axes)


def reduce(x, kind: str = "sum", axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape
    if kind == "sum":
        y = x.data.sum(axis=axes, keepdims=keepdims)
        scale = 1.0
    elif kind == "mean":
        y = x.data.mean(axis=axes, keepdims=keepdims)
        count = x.size if axes is None else int(np.prod([shape[a] for a in axes]))
        scale = 1.0 / count
    else:
        raise ParameterError(f"unknown reduction {kind!r}")

    def back(g):
        if not keepdims and axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * scale, shape),)

    return make_result(np.asarray(y), (x,), back)


# ------------------------------------------------------------ shape ops


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {old} to {tuple(shape)}") from None
    return make_result(y, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    return make_result(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def index(x, idx) -> Tensor:
    """Basic or advanced indexing; gradients scatter back with accumulation."""
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return make_result(np.array(x.data[idx]), (x,), back)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make_result(y, ts, back)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        y = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: {exc}") from None
    n = len(ts)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return make_result(y, ts, back)


# ----------------------------------------------------- sequence kernels


def conv1d_causal(x, kernel, dilation: int = 1) -> Tensor:
    """Causal dilated convolution over the time axis.

    ``x`` is ``[..., T, Cin]`` and ``kernel`` is ``[K, Cin, Cout]``.  The
    input is left-padded with ``(K - 1) * dilation`` zeros, so
    ``out[t] = sum_k x[t - (K - 1 - k) * dilation] @ kernel[k]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if dilation < 1:
        raise ParameterError(f"dilation must be >= 1, got {dilation}")
    if kernel.ndim != 3 or kernel.shape[0] < 1:
        raise DimensionError(f"conv1d_causal: kernel must be [K, Cin, Cout], got {kernel.shape}")
    if x.ndim < 2 or x.shape[-1] != kernel.shape[1]:
        raise DimensionError(f"conv1d_causal: input {x.shape} does not match kernel {kernel.shape}")
    k_size = kernel.shape[0]
    T = x.shape[-2]
    pad = (k_size - 1) * dilation
    xd, wd = x.data, kernel.data
    widths = [(0, 0)] * (xd.ndim - 2) + [(pad, 0), (0, 0)]
    xp = np.pad(xd, widths)
    out = None
    for k in range(k_size):
        term = xp[..., k * dilation : k * dilation + T, :] @ wd[k]
        out = term if out is None else out + term

    def back(g):
        gx = gw = None
        if kernel.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gw = np.stack(
                [
                    xp[..., k * dilation : k * dilation + T, :].reshape(-1, xd.shape[-1]).T @ g2
                    for k in range(k_size)
                ]
            )
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(k_size):
                gxp[..., k * dilation : k * dilation + T, :] += g @ wd[k].T
            gx = gxp[..., pad:, :]
        return gx, gw

    return make_result(out, (x, kernel), back)


def lstm_layer(x, w_input, w_hidden, bias) -> Tensor:
    """Run one LSTM layer over ``x [B, T, I]`` and return hidden states ``[B, T, Hd]``.

    Gate order in the ``4 * Hd`` axis is input, forget, cell candidate, output.
    Initial hidden and cell states are zero.  Recorded as a single node with a
    hand-written backpropagation-through-time.
    """
    x, w_input, w_hidden, bias = (as_tensor(t) for t in (x, w_input, w_hidden, bias))
    if x.ndim != 3:
        raise DimensionError(f"lstm_layer: expected [B, T, I] input, got {x.shape}")
    B, T, I = x.shape
    hd = w_hidden.shape[0]
    if w_input.shape != (I, 4 * hd) or w_hidden.shape != (hd, 4 * hd) or bias.shape != (4 * hd,):
        raise DimensionError(
            f"lstm_layer: weights {w_input.shape}, {w_hidden.shape}, {bias.shape} "
            f"do not match input size {I}"
        )
    wx, wh = w_input.data, w_hidden.data
    pre_x = x.data @ wx + bias.data
    hs = np.zeros((B, T, hd))
    cs = np.zeros((B, T, hd))
    gates = np.zeros((B, T, 4 * hd))
    h = np.zeros((B, hd))
    c = np.zeros((B, hd))
    for t in range(T):
        z = pre_x[:, t] + h @ wh
        ig = _sigmoid(z[:, :hd])
        fg = _sigmoid(z[:, hd : 2 * hd])
        cg = np.tanh(z[:, 2 * hd : 3 * hd])
        og = _sigmoid(z[:, 3 * hd :])
        c = fg * c + ig * cg
        h = og * np.tanh(c)
        gates[:, t, :hd] = ig
        gates[:, t, hd : 2 * hd] = fg
        gates[:, t, 2 * hd : 3 * hd] = cg
        gates[:, t, 3 * hd :] = og
        hs[:, t] = h
        cs[:, t] = c

    def back(g):
        dz_all = np.zeros((B, T, 4 * hd))
        dh_next = np.zeros((B, hd))
        dc_next = np.zeros((B, hd))
        for t in range(T - 1, -1, -1):
            ig = gates[:, t, :hd]
            fg = gates[:, t, hd : 2 * hd]
            cg = gates[:, t, 2 * hd : 3 * hd]
            og = gates[:, t, 3 * hd :]
            tc = np.tanh(cs[:, t])
            dh = g[:, t] + dh_next
            dc = dc_next + dh * og * (1.0 - tc * tc)
            c_prev = cs[:, t - 1] if t > 0 else 0.0
            dz = dz_all[:, t]
            dz[:, :hd] = dc * cg * ig * (1.0 - ig)
            dz[:, hd : 2 * hd] = dc * c_prev * fg * (1.0 - fg)
            dz[:, 2 * hd : 3 * hd] = dc * ig * (1.0 - cg * cg)
            dz[:, 3 * hd :] = dh * tc * og * (1.0 - og)
            dh_next = dz @ wh.T
            dc_next = dc * fg
        dz2 = dz_all.reshape(-1, 4 * hd)
        gx = (dz_all @ wx.T) if x.requires_grad else None
        gwx = x.data.reshape(-1, I).T @ dz2
        h_prev = np.concatenate([np.zeros((B, 1, hd)), hs[:, :-1]], axis=1)
        gwh = h_prev.reshape(-1, hd).T @ dz2
        return gx, gwx, gwh, dz2.sum(axis=0)

    return make_result(hs, (x, w_input, w_hidden, bias), back)


def linear_map(x, matrix: np.ndarray, axis: int) -> Tensor:
    """Apply a fixed (non-learned) matrix along ``axis``: ``y = M @ x`` on that axis."""
    x = as_tensor(x)
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or x.shape[axis] != m.shape[1]:
        raise DimensionError(f"linear_map: matrix {m.shape} vs axis {axis} of {x.shape}")
    moved = np.moveaxis(x.data, axis, -1)
    y = np.moveaxis(moved @ m.T, -1, axis)

    def back(g):
        gm = np.moveaxis(g, axis, -1) @ m
        return (np.moveaxis(gm, -1, axis),)

    return make_result(y, (x,), back)


def attention(q, k, v, scale: float) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention ``softmax(q k^T * scale) v`` as one node.

    ``q`` is ``[..., Tq, d]``, ``k`` and ``v`` are ``[..., Tk, d]``.  Returns the
    output tensor and the attention weights (a plain array, rows sum to 1).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1] or q.shape[:-2] != k.shape[:-2]:
        raise DimensionError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} are incompatible")
    qs = q.data * scale
    kd, vd = k.data, v.data
    p = qs @ np.swapaxes(kd, -1, -2)
    p -= p.max(axis=-1, keepdims=True)
    np.exp(p, out=p)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ vd

    def back(g):
        dp = g @ np.swapaxes(vd, -1, -2)
        dp -= (dp * p).sum(axis=-1, keepdims=True)
        dp *= p
        gq = (dp @ kd) * scale if q.requires_grad else None
        gk = np.swapaxes(dp, -1, -2) @ qs if k.requires_grad else None
        gv = np.swapaxes(p, -1, -2) @ g if v.requires_grad else None
        return gq, gk, gv

    return make_result(out, (q, k, v), back), p
