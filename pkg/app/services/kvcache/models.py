from dataclasses import dataclass
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class CacheConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    page_size: int = Field(16, ge=1, description="Tokens per page")
    initial_pages: int = Field(64, ge=1, description="Pages in the pool before any growth")
    allow_growth: bool = True
    index_capacity: int = Field(4, ge=1, description="Initial page-index slots per head stream")


class MemoryReport(BaseModel):
    """Byte accounting of a decode cache; density is restricted to positions that left the window."""

    bytes_window: int
    bytes_longterm: int
    density: float
    pages_used: int
    headroom_grows: int
    retained: int
    evicted: int
    n_streams: int
    tokens: int


@dataclass(frozen=True)
class GateTraceEntry:
    layer: int
    head: int
    position: int
    u: Optional[float]
    z: bool
