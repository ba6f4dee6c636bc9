import numpy as np

from app.services.kvcache.head_cache import HeadCache
from app.services.kvcache.models import CacheConfig, MemoryReport
from app.services.kvcache.page_pool import PagePool


class PagedKVCache:
    """
    Per-layer, per-kv-head HeadCaches over one shared PagePool.

    Pool capacity is rechecked once every `page_size` steps: no stream can
    fill more than one page in that many appends, so reserving one free page
    per stream covers the whole interval.
    """

    def __init__(self, n_layers: int, n_kv_heads: int, d_head: int, window: int, config: CacheConfig | None = None):
        self.config = config or CacheConfig()
        self.n_layers = n_layers
        self.n_kv_heads = n_kv_heads
        self.window = window
        self.pool = PagePool(self.config.page_size, d_head, self.config.initial_pages, self.config.allow_growth)
        self.heads = [
            [HeadCache(self.pool, (layer, head), window, self.config.index_capacity) for head in range(n_kv_heads)]
            for layer in range(n_layers)
        ]
        self.position = 0
        self.budget_checks = 0
        self._safe_steps = 0

    @property
    def n_streams(self) -> int:
        return self.n_layers * self.n_kv_heads

    def streams(self):
        for row in self.heads:
            yield from row

    def begin_step(self) -> None:
        if self._safe_steps == 0:
            self.pool.reserve(self.n_streams)
            self._safe_steps = self.config.page_size
            self.budget_checks += 1
        self._safe_steps -= 1

    def append(self, layer: int, head: int, key: np.ndarray, value: np.ndarray, z: bool) -> None:
        self.heads[layer][head].append(self.position, key, value, bool(z))

    def end_step(self) -> None:
        self.position += 1

    def report(self, gated: np.ndarray | None = None) -> MemoryReport:
        """
        Memory accounting after `position` tokens.

        `gated` [n_layers, n_kv_heads] restricts the density to Self-Pruned KV
        streams; byte counts always cover every stream.
        """
        row_bytes = self.pool.d_head * 2 * 4
        streams = list(self.streams())
        mask = np.ones(len(streams), dtype=bool) if gated is None else np.asarray(gated, dtype=bool).reshape(-1)
        if not mask.any():
            mask = np.ones(len(streams), dtype=bool)
        retained = sum(s.retained_count for s, m in zip(streams, mask) if m)
        evicted = sum(max(s.evicted_count, 1) for s, m in zip(streams, mask) if m)
        pages_used = sum(s.used_pages for s in streams)
        return MemoryReport(
            bytes_window=sum(s.window_fill for s in streams) * row_bytes,
            bytes_longterm=pages_used * self.pool.page_bytes,
            density=retained / evicted,
            pages_used=pages_used,
            headroom_grows=sum(s.headroom_grows for s in streams),
            retained=sum(s.retained_count for s in streams),
            evicted=sum(s.evicted_count for s in streams),
            n_streams=len(streams),
            tokens=self.position,
        )
