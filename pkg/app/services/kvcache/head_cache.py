from typing import Optional

import numpy as np

from app.services.kvcache.page_pool import PagePool, StreamId


class HeadCache:
    """
    One (layer, kv head) stream: a circular window of the last `window` tokens
    plus a paged long-term region that only receives tokens whose stored gate
    decision is 1 when they fall out of the window.

    The page index array keeps headroom and doubles when it runs out, so an
    append that stays inside the current page touches one slot and one counter.
    """

    def __init__(self, pool: PagePool, owner: StreamId, window: int, index_capacity: int = 4):
        self.pool = pool
        self.owner = owner
        self.window = window
        self.page_indices = np.full(index_capacity, -1, dtype=np.int64)
        self.used_pages = 0
        self.used_slots_in_last_page = 0
        self.headroom_grows = 0

        d_head = pool.d_head
        self.ring_keys = np.zeros((window, d_head), dtype=np.float32)
        self.ring_values = np.zeros((window, d_head), dtype=np.float32)
        self.ring_z = np.zeros(window, dtype=bool)
        self.ring_positions = np.full(window, -1, dtype=np.int64)
        self.write_ptr = 0
        self.n_seen = 0

        self.retained_count = 0
        self.retained_positions: list[int] = []

    @property
    def window_fill(self) -> int:
        return min(self.n_seen, self.window)

    @property
    def evicted_count(self) -> int:
        return max(self.n_seen - self.window, 0)

    def append(self, position: int, key: np.ndarray, value: np.ndarray, z: bool) -> Optional[int]:
        """Write into the next window slot; returns the displaced position if the ring was full."""
        slot = self.write_ptr
        displaced: Optional[int] = None
        if self.n_seen >= self.window:
            displaced = int(self.ring_positions[slot])
            if self.ring_z[slot]:
                self._write_longterm(displaced, self.ring_keys[slot], self.ring_values[slot])

        self.ring_keys[slot] = key
        self.ring_values[slot] = value
        self.ring_z[slot] = z
        self.ring_positions[slot] = position
        self.write_ptr = (slot + 1) % self.window
        self.n_seen += 1
        return displaced

    def _write_longterm(self, position: int, key: np.ndarray, value: np.ndarray) -> None:
        if self.used_pages == 0 or self.used_slots_in_last_page == self.pool.page_size:
            if self.used_pages == len(self.page_indices):
                grown = np.full(2 * len(self.page_indices), -1, dtype=np.int64)
                grown[: self.used_pages] = self.page_indices
                self.page_indices = grown
                self.headroom_grows += 1
            self.page_indices[self.used_pages] = self.pool.allocate(self.owner)
            self.used_pages += 1
            self.used_slots_in_last_page = 0

        self.pool.write(self.page_indices[self.used_pages - 1], self.used_slots_in_last_page, key, value)
        self.used_slots_in_last_page += 1
        self.retained_count += 1
        self.retained_positions.append(position)

    def window_entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Window keys, values and positions, oldest first."""
        n = self.window_fill
        if self.n_seen < self.window:
            order = np.arange(n)
        else:
            order = (self.write_ptr + np.arange(self.window)) % self.window
        return self.ring_keys[order], self.ring_values[order], self.ring_positions[order]

    def longterm_entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        keys, values = self.pool.gather(self.page_indices[: self.used_pages], self.retained_count)
        return keys, values, np.asarray(self.retained_positions, dtype=np.int64)

    def visible(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Everything the next query may attend to, in position order."""
        lk, lv, lp = self.longterm_entries()
        wk, wv, wp = self.window_entries()
        return np.concatenate((lk, wk)), np.concatenate((lv, wv)), np.concatenate((lp, wp))
