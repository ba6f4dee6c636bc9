from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.services.tensor_core import Tensor


@dataclass
class ParamGroup:
    params: list[tuple[str, Tensor]]
    lr_mult: float = 1.0
    weight_decay: float = 0.0


class AdamW:
    """
    Decoupled weight-decay Adam over named parameter groups with global-norm clipping.

    Parameters whose `requires_grad` is off are left untouched, moments included.
    Weight decay applies to matrices only (norm gains and biases are exempt).
    """

    def __init__(
        self,
        groups: list[ParamGroup],
        betas: tuple[float, float] = (0.9, 0.95),
        eps: float = 1e-8,
        grad_clip: Optional[float] = 1.0,
    ):
        self.groups = groups
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        for group in groups:
            for name, tensor in group.params:
                self.m[name] = np.zeros_like(tensor.data)
                self.v[name] = np.zeros_like(tensor.data)

    def _trainable(self):
        for group in self.groups:
            for name, tensor in group.params:
                if tensor.requires_grad and tensor.grad is not None:
                    yield group, name, tensor

    def grad_norm(self) -> float:
        total = 0.0
        for _, _, tensor in self._trainable():
            total += float(np.sum(tensor.grad.astype(np.float64) ** 2))
        return float(np.sqrt(total))

    def step(self, lr: float) -> float:
        """Apply one update and return the pre-clip gradient norm."""
        norm = self.grad_norm()
        coef = 1.0
        if self.grad_clip is not None and norm > self.grad_clip:
            coef = self.grad_clip / (norm + 1e-6)

        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for group, name, tensor in self._trainable():
            g = tensor.grad * np.float32(coef)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if group.weight_decay and tensor.ndim >= 2:
                update = update + group.weight_decay * tensor.data
            tensor.data = (tensor.data - lr * group.lr_mult * update).astype(np.float32)
        return norm

    def moments(self) -> dict[str, dict[str, np.ndarray]]:
        return {"m": {k: a.copy() for k, a in self.m.items()}, "v": {k: a.copy() for k, a in self.v.items()}}

    def load_moments(self, moments: dict[str, dict[str, np.ndarray]], t: int) -> None:
        for name in self.m:
            if name in moments["m"]:
                self.m[name] = np.asarray(moments["m"][name], dtype=np.float32).copy()
                self.v[name] = np.asarray(moments["v"][name], dtype=np.float32).copy()
        self.t = t
