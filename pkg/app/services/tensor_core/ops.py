"""
Differentiable operations over Tensor.

Every op computes its value eagerly with numpy (float32) and, when gradients
are enabled and an input requires them, attaches a backward closure that
accumulates into the inputs' `grad` buffers.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from app.common.errors import ContractViolation, InputError, ShapeError
from app.services.tensor_core.tensor import Tensor, is_grad_enabled

LOG_EPS = 1e-8
_F32 = np.float32


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float32))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    needs_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    grad = _unbroadcast(np.asarray(grad, dtype=np.float32), tensor.shape)
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float32, copy=True)
    else:
        tensor.grad += grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from e


# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, -g)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g * b.data)
        if b.requires_grad:
            _accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    factor32 = _F32(factor)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * factor32)

    return _result(a.data * factor32, (a,), backward)


def shift(a: Tensor, offset: float) -> Tensor:
    def backward(g: np.ndarray) -> None:
        _accumulate(a, g)

    return _result(a.data + _F32(offset), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(np.float32)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * out * (1.0 - out))

    return _result(out, (a,), backward)


def log(a: Tensor, eps: float = LOG_EPS) -> Tensor:
    """log(x + eps); eps keeps the value and its gradient finite at x = 0."""
    if np.any(a.data < 0):
        raise ContractViolation("log expects non-negative inputs")
    shifted = a.data + _F32(eps)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g / shifted)

    return _result(np.log(shifted), (a,), backward)


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))
    s = s.astype(np.float32)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * (s + x * s * (1.0 - s)))

    return _result(x * s, (a,), backward)


# reductions

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float32)

    def backward(g: np.ndarray) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _result(np.asarray(out, dtype=np.float32), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# linear algebra and layout

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as e:
        raise ShapeError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}") from e

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _result(np.matmul(a.data, b.data), (a, b), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(f"cannot reshape {a.shape} into {tuple(shape)}") from e

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g.reshape(a.shape))

    return _result(out, (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, np.transpose(g, inverse))

    return _result(np.transpose(a.data, axes), (a,), backward)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise InputError(f"token id out of range [0, {weight.shape[0]})")

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(weight.data)
        np.add.at(full, ids, g)
        _accumulate(weight, full)

    return _result(weight.data[ids], (weight,), backward)


# attention and normalisation kernels

def softmax_lastdim(x: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Softmax over the last axis of x + bias.

    Entries whose bias is -inf get exactly zero probability and receive zero
    gradient. A row without any finite bias entry violates the contract.
    """
    if bias is None:
        bias = Tensor(np.zeros_like(x.data))
    if bias.shape != x.shape:
        raise ShapeError(f"softmax bias shape {bias.shape} differs from logits shape {x.shape}")
    if not np.all(np.any(bias.data > -np.inf, axis=-1)):
        raise ContractViolation("softmax row is fully masked")

    z = x.data + bias.data
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        dz = p * (g - (g * p).sum(axis=-1, keepdims=True))
        _accumulate(x, dz)
        _accumulate(bias, dz)

    return _result(p, (x, bias), backward)


def rms_norm(x: Tensor, eps: float = 1e-6) -> Tensor:
    r = 1.0 / np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + _F32(eps))
    r = r.astype(np.float32)
    y = x.data * r

    def backward(g: np.ndarray) -> None:
        _accumulate(x, r * (g - y * (g * y).mean(axis=-1, keepdims=True)))

    return _result(y, (x,), backward)


def _rotate_half(x: np.ndarray) -> np.ndarray:
    half = x.shape[-1] // 2
    return np.concatenate((-x[..., half:], x[..., :half]), axis=-1)


def rope(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotary embedding (rotate-half convention); cos/sin broadcast as [T, D]."""
    out = x.data * cos + _rotate_half(x.data) * sin

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * cos - _rotate_half(g * sin))

    return _result(out.astype(np.float32), (x,), backward)


def masked_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean token cross-entropy over positions where mask is set."""
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=np.float32)
    if targets.shape != logits.shape[:-1] or mask.shape != targets.shape:
        raise ShapeError(f"targets {targets.shape} / mask {mask.shape} do not match logits {logits.shape}")
    count = float(mask.sum())
    if count <= 0:
        raise ContractViolation("loss mask selects no positions")
    vocab = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise InputError(f"target id out of range [0, {vocab})")

    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    log_probs = z - log_z
    picked = np.take_along_axis(log_probs, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / count

    def backward(g: np.ndarray) -> None:
        d = np.exp(log_probs)
        np.put_along_axis(d, targets[..., None], np.take_along_axis(d, targets[..., None], axis=-1) - 1.0, axis=-1)
        _accumulate(logits, d * (mask[..., None] * (float(g) / count)))

    return _result(np.asarray(loss, dtype=np.float32), (logits,), backward)


# gradient routing helpers

def mask_fill(x: Tensor, keep: np.ndarray, fill: float) -> Tensor:
    """Entries where `keep` is False are replaced by `fill` and cut from the graph."""
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), x.shape)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, np.where(keep, g, 0.0))

    return _result(np.where(keep, x.data, _F32(fill)), (x,), backward)


def straight_through(forward_value: np.ndarray, surrogate: Tensor) -> Tensor:
    """Forward takes `forward_value`; backward passes the gradient to `surrogate` unchanged."""
    forward_value = np.asarray(forward_value, dtype=np.float32)
    if forward_value.shape != surrogate.shape:
        raise ShapeError(f"straight-through shapes differ: {forward_value.shape} vs {surrogate.shape}")

    def backward(g: np.ndarray) -> None:
        _accumulate(surrogate, g)

    return _result(forward_value, (surrogate,), backward)
