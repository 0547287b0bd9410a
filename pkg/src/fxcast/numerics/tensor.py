"""Tensor type and tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active, and with at least one
input that ``requires_grad``, are appended to the tape together with a
closure computing the vector-Jacobian product.  ``Tape.backward`` walks the
nodes in reverse order; since nodes are appended as they are created the
list is already topologically sorted.

Typical use::

    w = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = (w * w).sum()
    tape.backward(loss)
    w.grad  # -> array([2., 2., 2.])
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from fxcast.errors import ContractError

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_ACTIVE: list["Tape"] = []


class Tensor:
    """An n-d float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; implementations live in fxcast.numerics.ops
    def __add__(self, other):
        from fxcast.numerics import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from fxcast.numerics import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from fxcast.numerics import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from fxcast.numerics import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from fxcast.numerics import ops

        return ops.div(self, other)

    def __neg__(self):
        from fxcast.numerics import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from fxcast.numerics import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from fxcast.numerics import ops

        return ops.index(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from fxcast.numerics import ops

        return ops.reduce(self, "sum", axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        from fxcast.numerics import ops

        return ops.reduce(self, "mean", axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        from fxcast.numerics import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        from fxcast.numerics import ops

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], backward: BackwardFn):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Append-only record of differentiable operations.

    A tape is single-owner: do not share it across threads while recording
    or during ``backward``.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward: BackwardFn) -> None:
        out.requires_grad = True
        out.node_id = len(self.nodes)
        self.nodes.append(_Node(out, parents, backward))

    def owns(self, t: Tensor) -> bool:
        i = t.node_id
        return i is not None and i < len(self.nodes) and self.nodes[i].out is t

    def backward(self, root: Tensor) -> dict[Tensor, np.ndarray]:
        """Populate ``.grad`` on every tensor that ``root`` depends on.

        Returns a map from tensor to its gradient (same shape as the tensor).
        Gradients overwrite, they do not accumulate across calls.
        """
        if root.data.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
        if not self.owns(root):
            raise ContractError("backward root was not produced on this tape")

        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        seen: dict[int, Tensor] = {id(root): root}
        for node in reversed(self.nodes[: root.node_id + 1]):
            g = grads.get(id(node.out))
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = grads.get(key)
                if prev is None:
                    grads[key] = pg if pg.shape == parent.shape else np.broadcast_to(pg, parent.shape).copy()
                    seen[key] = parent
                else:
                    grads[key] = prev + pg
        out: dict[Tensor, np.ndarray] = {}
        for key, t in seen.items():
            t.grad = grads[key]
            out[t] = t.grad
        return out


def backward(tape: Tape, root: Tensor) -> dict[Tensor, np.ndarray]:
    return tape.backward(root)


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def make_result(data: np.ndarray, parents: Iterable[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` and record it on the active tape if any parent needs grad."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.node_id = None
    out.name = None
    if _ACTIVE:
        parents = tuple(parents)
        for p in parents:
            if p.requires_grad:
                _ACTIVE[-1].record(out, parents, backward_fn)
                break
    return out

