from typing import Optional

import numpy as np

from app.common.errors import ShapeError
from app.services.gating.models import GateField, PredictorKind
from app.services.tensor_core import Rng, Tensor, ops


class UtilityPredictor:
    """
    Per-layer utility network h -> sigmoid(f(h)) with one output per kv head.

    The output layer starts at zero weight and `init_bias`, so every gate opens
    at exactly sigmoid(init_bias) whatever the input.
    """

    def __init__(
        self,
        d_model: int,
        n_kv_heads: int,
        rng: Rng,
        init_bias: float = 5.0,
        kind: PredictorKind = PredictorKind.MLP,
        d_hidden: Optional[int] = None,
    ):
        self.d_model = d_model
        self.n_kv_heads = n_kv_heads
        self.kind = PredictorKind(kind)
        self.d_hidden = d_hidden or d_model
        self.frozen = False
        self.params: dict[str, Tensor] = {}
        self.reset(rng, init_bias)

    def reset(self, rng: Rng, init_bias: float) -> None:
        if self.kind is PredictorKind.MLP:
            self.params = {
                "w1": Tensor(rng.normal((self.d_model, self.d_hidden), std=1.0 / np.sqrt(self.d_model)), requires_grad=True),
                "b1": Tensor(np.zeros(self.d_hidden), requires_grad=True),
                "w2": Tensor(np.zeros((self.d_hidden, self.n_kv_heads)), requires_grad=True),
                "b2": Tensor(np.full(self.n_kv_heads, init_bias), requires_grad=True),
            }
        else:
            self.params = {
                "w": Tensor(np.zeros((self.d_model, self.n_kv_heads)), requires_grad=True),
                "b": Tensor(np.full(self.n_kv_heads, init_bias), requires_grad=True),
            }
        self._apply_frozen()

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def freeze(self) -> None:
        self.frozen = True
        self._apply_frozen()

    def unfreeze(self) -> None:
        self.frozen = False
        self._apply_frozen()

    def _apply_frozen(self) -> None:
        for tensor in self.params.values():
            tensor.requires_grad = not self.frozen
            tensor.grad = None

    def logits(self, h: Tensor) -> Tensor:
        if h.shape[-1] != self.d_model:
            raise ShapeError(f"predictor expects d_model={self.d_model}, got hidden shape {h.shape}")
        if self.kind is PredictorKind.MLP:
            hidden = ops.silu(ops.add(ops.matmul(h, self.params["w1"]), self.params["b1"]))
            return ops.add(ops.matmul(hidden, self.params["w2"]), self.params["b2"])
        return ops.add(ops.matmul(h, self.params["w"]), self.params["b"])

    def __call__(self, h: Tensor) -> GateField:
        return predict_utilities(self, h)


def predict_utilities(predictor: UtilityPredictor, h: Tensor) -> GateField:
    """u = sigmoid(MLP(h)) laid out as [B, n_kv_heads, T]."""
    if h.ndim != 3:
        raise ShapeError(f"hidden states must be [B, T, d_model], got {h.shape}")
    u = ops.sigmoid(predictor.logits(h))
    return GateField(u=ops.transpose(u, (0, 2, 1)))
