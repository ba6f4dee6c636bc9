from dataclasses import dataclass

import numpy as np

from app.common.errors import ConfigurationError
from app.services.gating.models import GateMode


@dataclass(frozen=True)
class MaskSpec:
    """Sequence length, window and head layout of one combined attention bias."""

    length: int
    window: int
    n_q_heads: int
    source: GateMode = GateMode.SOFT

    def __post_init__(self):
        if self.window < 1:
            raise ConfigurationError(f"window must be >= 1, got {self.window}")
        if self.length < 1:
            raise ConfigurationError(f"sequence length must be >= 1, got {self.length}")

    def regions(self, query_offset: int = 0, n_queries: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(in_window, out_of_window) boolean [Tq, T] grids; everything else is non-causal."""
        return window_regions(self.length, self.window, query_offset, n_queries)


def window_regions(
    length: int, window: int, query_offset: int = 0, n_queries: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    n_queries = length - query_offset if n_queries is None else n_queries
    t = np.arange(query_offset, query_offset + n_queries)[:, None]
    s = np.arange(length)[None, :]
    distance = t - s
    causal = distance >= 0
    in_window = causal & (distance < window)
    return in_window, causal & ~in_window
