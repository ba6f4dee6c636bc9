import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class DensityReport(BaseModel):
    """
    Per (layer, kv head) retained density outside the final window.

    `retained[l][k]` counts z = 1 among the `tokens[l][k]` positions that left
    the window; `window_retained` counts z = 1 inside it. `rho` pools the
    gated heads only.
    """

    model_config = ConfigDict(extra="forbid")

    matrix: list[list[float]]
    retained: list[list[int]]
    window_retained: list[list[int]]
    tokens: list[list[int]]
    gated: list[list[bool]]
    rho: float
    window: int = 0
    metadata: dict[str, Any] = Field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.matrix)

    @property
    def n_heads(self) -> int:
        return len(self.matrix[0]) if self.matrix else 0

    def density_matrix(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=np.float64)

    def mass(self) -> np.ndarray:
        """Retained key count per head, the weight used by coverage."""
        return np.asarray(self.retained, dtype=np.float64)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(mode="json"), indent=2), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DensityReport":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


class NasStrategy(str, Enum):
    A_3TO1_EARLY = "a"
    B_3TO1_OFFSET = "b"
    C_RANDOM = "c"
    D_DENSEST = "d"


class HeadSelection(BaseModel):
    """(layer, kv head) pairs that stay global in a hybrid architecture."""

    heads: list[tuple[int, int]]
    strategy: NasStrategy
    budget: int

    @field_validator("heads")
    @classmethod
    def _sorted(cls, heads: list[tuple[int, int]]) -> list[tuple[int, int]]:
        return sorted(set(tuple(h) for h in heads))

    @model_validator(mode="after")
    def _size_matches_budget(self) -> "HeadSelection":
        if len(self.heads) != self.budget:
            raise ValueError(f"selection has {len(self.heads)} heads for a budget of {self.budget}")
        return self


class FlopsModel(BaseModel):
    n_params: float = Field(gt=0, description="Non-embedding parameters N")
    n_layers: int = Field(gt=0)
    n_ctx: float = Field(ge=0)
    d_attn: int = Field(gt=0, description="Total attention width")
    density: float = Field(1.0, ge=0.0, le=1.0)


@dataclass(frozen=True)
class BlockSkipStats:
    skippable: int
    candidates: int

    @property
    def fraction(self) -> float:
        return self.skippable / self.candidates if self.candidates else 0.0


@dataclass
class PowerLawFit:
    """L(C) = l_inf + a * C^(-alpha)."""

    l_inf: float
    a: float
    alpha: float
    rss: float
    r_squared: Optional[float]

    def predict(self, compute: np.ndarray | float) -> np.ndarray:
        return self.l_inf + self.a * np.power(np.asarray(compute, dtype=np.float64), -self.alpha)

    def as_dict(self) -> dict[str, Optional[float]]:
        return {"l_inf": self.l_inf, "a": self.a, "alpha": self.alpha, "rss": self.rss, "r2": self.r_squared}
