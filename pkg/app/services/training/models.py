import json
import math
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator


class TrainMode(str, Enum):
    DENSE = "dense"
    SOFT_CPT = "soft-cpt"
    TAHG = "tahg"
    BERNOULLI_STE = "bernoulli-ste"
    FROM_SCRATCH = "from-scratch"
    FROZEN_LLM = "frozen-llm"

    @property
    def needs_init_checkpoint(self) -> bool:
        return self in (TrainMode.SOFT_CPT, TrainMode.TAHG, TrainMode.BERNOULLI_STE, TrainMode.FROZEN_LLM)


class Phase(str, Enum):
    DENSE = "dense"
    SOFT = "soft"
    ANNEALED = "annealed"
    HARD = "hard"
    BERNOULLI = "bernoulli"


class TrainConfig(BaseModel):
    """
    Optimisation schedule and protocol mode.

    `decay_start_step` defaults to half of `total_steps`. The phase-2 boundary
    sits `phase2_start_fraction` of the way through the decay.
    """

    model_config = ConfigDict(extra="forbid")

    total_steps: int = Field(1000, ge=1)
    warmup_steps: int = Field(50, ge=0)
    decay_start_step: Optional[int] = Field(None, ge=0)
    peak_lr: float = Field(3e-3, gt=0.0)
    final_lr_fraction: float = Field(0.01, ge=0.0, le=1.0)
    batch_size: int = Field(16, ge=1)
    phase2_start_fraction: float = Field(0.75, gt=0.0, le=1.0)
    anneal_steps: int = Field(500, ge=0)
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    weight_decay: float = Field(0.1, ge=0.0)
    grad_clip: float = Field(1.0, gt=0.0)
    mode: TrainMode = TrainMode.SOFT_CPT
    log_every: int = Field(50, ge=1)

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        if self.decay_start_step is None:
            self.decay_start_step = max(self.warmup_steps, self.total_steps // 2)
        if not self.warmup_steps <= self.decay_start_step <= self.total_steps:
            raise ValueError("expected warmup_steps <= decay_start_step <= total_steps")
        return self

    @property
    def decay_span(self) -> int:
        return self.total_steps - self.decay_start_step

    @property
    def phase2_boundary(self) -> int:
        return self.decay_start_step + round(self.phase2_start_fraction * self.decay_span)

    @property
    def effective_anneal_steps(self) -> int:
        """anneal_steps, shrunk to 10% of the decay span when it does not fit."""
        if self.anneal_steps > self.decay_span:
            return max(1, round(0.1 * self.decay_span))
        return self.anneal_steps


def _sig9(value: Optional[float]) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return value
    return float(f"{value:.9g}")


class TrainRecord(BaseModel):
    step: int
    lr: float
    loss: float
    aux: float
    mean_u: Optional[float] = None
    rho: Optional[float] = None
    phase: Phase
    alpha: float

    def to_json_line(self) -> str:
        payload = {
            "step": self.step,
            "lr": _sig9(self.lr),
            "loss": _sig9(self.loss),
            "aux": _sig9(self.aux),
            "mean_u": _sig9(self.mean_u),
            "rho": _sig9(self.rho),
            "phase": self.phase.value,
            "alpha": _sig9(self.alpha),
        }
        return json.dumps(payload)


class TrainLog:
    """Append-only per-step training records, persisted as JSON lines."""

    def __init__(self, records: Optional[list[TrainRecord]] = None):
        self._records: list[TrainRecord] = list(records or [])

    def append(self, record: TrainRecord) -> None:
        if self._records and record.step <= self._records[-1].step:
            raise ValueError(f"train log is append-only; step {record.step} after {self._records[-1].step}")
        self._records.append(record)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[TrainRecord]:
        return iter(self._records)

    def __getitem__(self, index: int) -> TrainRecord:
        return self._records[index]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump(mode="json") for r in self._records])

    def to_jsonl(self) -> str:
        return "".join(r.to_json_line() + "\n" for r in self._records)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TrainLog":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([TrainRecord.model_validate_json(line) for line in lines if line.strip()])
