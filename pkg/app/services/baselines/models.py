from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class PolicyKind(str, Enum):
    NONE = "none"
    STREAMING_LLM = "streaming_llm"
    H2O = "h2o"
    RANDOM = "random"


class EvictionPolicy(BaseModel):
    """
    Post-hoc retention policy for chunked prefill.

    The last `window` positions and the first `n_sinks` positions are always
    kept; `budget_fraction` (H2O) and `keep_fraction` (random) apply to the
    positions outside both.
    """

    model_config = ConfigDict(extra="forbid")

    kind: PolicyKind = PolicyKind.NONE
    n_sinks: int = Field(4, ge=0)
    budget_fraction: float = Field(0.2, ge=0.0, le=1.0)
    keep_fraction: float = Field(0.2, ge=0.0, le=1.0)
    seed: int = 0
    window: int = Field(128, ge=1)
    chunk_size: int = Field(16, ge=1)

    @property
    def label(self) -> str:
        match self.kind:
            case PolicyKind.H2O:
                return f"h2o(budget={self.budget_fraction:g},sinks={self.n_sinks})"
            case PolicyKind.RANDOM:
                return f"random(keep={self.keep_fraction:g},sinks={self.n_sinks})"
            case PolicyKind.STREAMING_LLM:
                return f"streaming_llm(sinks={self.n_sinks})"
        return "none"


@dataclass
class EvictionEvent:
    chunk_end: int
    layer: int
    head: int
    evicted: list[int]


@dataclass
class PrefillResult:
    nll: np.ndarray
    density: float
    eviction_log: list[EvictionEvent] = field(default_factory=list)

    @property
    def mean_nll(self) -> float:
        return float(np.mean(self.nll, dtype=np.float64))


class BaselineResult(BaseModel):
    policy: str
    density: float
    nll: float
    delta_nll_vs_dense: float
