from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.services.tensor_core import Tensor


class GateMode(str, Enum):
    SOFT = "soft"
    HARD = "hard"
    ANNEALED = "annealed"
    BERNOULLI_STE = "bernoulli_ste"


class PredictorKind(str, Enum):
    MLP = "mlp"
    LINEAR = "linear"


class GateConfig(BaseModel):
    """Gating hyperparameters shared by training, decoding and analysis."""

    model_config = ConfigDict(extra="forbid")

    window: int = Field(128, description="Sliding window size w; the self position is always in-window")
    tau: float = Field(0.5, ge=0.0, le=1.0, description="Inference / phase-2 threshold")
    mode: GateMode = GateMode.SOFT
    alpha: float = Field(0.0, ge=0.0, le=1.0, description="Annealing weight of the binary gate")
    p_min: float = Field(0.0, ge=0.0, lt=0.5, description="Bernoulli sampling clip")
    aux_weight: float = Field(0.0, ge=0.0, description="Weight of the density regulariser")
    init_bias: float = 5.0
    predictor_kind: PredictorKind = PredictorKind.MLP
    predictor_lr_mult: float = Field(5.0, gt=0.0)
    predictor_weight_decay: float = Field(0.1, ge=0.0)
    n_sinks: int = Field(0, ge=0, description="Leading positions whose gates are always open")

    @field_validator("window")
    @classmethod
    def _window_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("window must be >= 1 so the query position stays attendable")
        return value


@dataclass
class GateField:
    """
    Utilities u[B, K, T] of one layer plus optional binary decisions z.

    `active` marks the kv heads that are actually gated (Self-Pruned KV heads);
    global and sliding-window heads carry utilities that nothing consumes.
    """

    u: Tensor
    z: Optional[np.ndarray] = None
    active: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.active is None:
            self.active = np.ones(self.u.shape[1], dtype=bool)

    @property
    def n_kv_heads(self) -> int:
        return self.u.shape[1]

    @property
    def length(self) -> int:
        return self.u.shape[2]
