"""Central finite-difference checks for tape gradients.

The finite-difference side only runs forward passes with no tape active, so
it shares nothing with the reverse-mode path except the forward kernels.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from fxcast.numerics.tensor import Tape, Tensor


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max|a - b| scaled by the larger of the two max-magnitudes."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)


def tape_gradients(fn: Callable[[], Tensor], wrt: Sequence[Tensor]) -> list[np.ndarray]:
    for t in wrt:
        t.grad = None
    with Tape() as tape:
        out = fn()
    tape.backward(out)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in wrt]


def numeric_gradient(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5,
                     coords: Sequence[int] | None = None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. entries of ``t``.

    Entries not listed in ``coords`` (flat indices) are left as NaN.
    """
    flat = t.data.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = float(fn().data)
        flat[i] = old - h
        fm = float(fn().data)
        flat[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(t.shape)


def directional_error(fn: Callable[[], Tensor], t: Tensor, analytic: np.ndarray,
                      rng: np.random.Generator, h: float = 1e-5) -> float:
    """Relative error of <grad, v> against a central difference along random ``v``."""
    v = rng.standard_normal(t.shape)
    base = t.data.copy()
    t.data = base + h * v
    fp = float(fn().data)
    t.data = base - h * v
    fm = float(fn().data)
    t.data = base
    fd = (fp - fm) / (2 * h)
    ad = float(np.sum(analytic * v))
    return relative_error(np.array(ad), np.array(fd))


def check_gradients(fn: Callable[[], Tensor], wrt: Sequence[Tensor], h: float = 1e-5,
                    max_coords: int | None = None,
                    rng: np.random.Generator | None = None) -> dict[str, float]:
    """Compare tape gradients with central differences, one score per tensor.

    With ``max_coords`` set, only that many randomly chosen entries per tensor
    are differenced; otherwise every entry is.
    """
    rng = rng or np.random.default_rng(0)
    analytic = tape_gradients(fn, wrt)
    report = {}
    for k, (t, g) in enumerate(zip(wrt, analytic)):
        coords = None
        if max_coords is not None and t.size > max_coords:
            coords = rng.choice(t.size, size=max_coords, replace=False)
        num = numeric_gradient(fn, t, h, coords)
        mask = ~np.isnan(num)
        report[t.name or f"arg{k}"] = relative_error(g[mask], num[mask])
    return report
