"""Seeded parameter initialization."""

from __future__ import annotations

import numpy as np

from fxcast.numerics.tensor import Tensor


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                   name: str | None = None) -> Tensor:
    """Parameter drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros(shape: tuple[int, ...], name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def ones(shape: tuple[int, ...], name: str | None = None) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)
