from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from app.common.errors import ContractViolation

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording for the enclosed block (evaluation, decoding)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    """
    Dense float32 array with an optional gradient buffer.

    `data` is always a C-contiguous float32 ndarray, so `data.size` equals the
    product of `shape`. Nodes produced by ops keep references to their parents
    and a backward closure; `backward()` walks them in reverse topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ContractViolation(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _topological_order(self) -> list[Tensor]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if not self.requires_grad:
            raise ContractViolation("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.size != 1:
                raise ContractViolation("backward() on a non-scalar tensor needs an explicit gradient")
            grad = np.ones_like(self.data)
        self.grad = np.array(grad, dtype=np.float32, copy=True).reshape(self.shape)

        order = self._topological_order()
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # first-order only: release the graph once gradients are in place
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # operator sugar over app.services.tensor_core.ops

    def __add__(self, other) -> Tensor:
        from app.services.tensor_core import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        from app.services.tensor_core import ops
        return ops.sub(self, other)

    def __rsub__(self, other) -> Tensor:
        from app.services.tensor_core import ops
        return ops.sub(other, self)

    def __mul__(self, other) -> Tensor:
        from app.services.tensor_core import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> Tensor:
        from app.services.tensor_core import ops
        return ops.scale(self, 1.0 / float(other))

    def __neg__(self) -> Tensor:
        from app.services.tensor_core import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        from app.services.tensor_core import ops
        return ops.matmul(self, other)

    def reshape(self, *shape) -> Tensor:
        from app.services.tensor_core import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, axes: Sequence[int]) -> Tensor:
        from app.services.tensor_core import ops
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        from app.services.tensor_core import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        from app.services.tensor_core import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)
