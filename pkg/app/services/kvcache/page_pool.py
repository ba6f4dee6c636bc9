import numpy as np

from app.common.errors import CapacityError, ShapeError
from app.common.logging.logging_config import get_logger

logger = get_logger(__name__)

StreamId = tuple[int, int]


class PagePool:
    """
    Fixed-size pages of (key, value) rows shared by every (layer, kv head) stream.

    Pages come off a free list, lowest index first. Each allocated page records
    its owning stream; `allocated + free == capacity` at all times.
    """

    def __init__(self, page_size: int, d_head: int, n_pages: int, allow_growth: bool = True):
        if page_size < 1 or n_pages < 1:
            raise ShapeError("page_size and n_pages must be positive")
        self.page_size = page_size
        self.d_head = d_head
        self.allow_growth = allow_growth
        self.keys = np.zeros((n_pages, page_size, d_head), dtype=np.float32)
        self.values = np.zeros((n_pages, page_size, d_head), dtype=np.float32)
        self.owners: list[StreamId | None] = [None] * n_pages
        self.free: list[int] = list(range(n_pages - 1, -1, -1))
        self.grow_count = 0

    @property
    def capacity(self) -> int:
        return len(self.owners)

    @property
    def n_free(self) -> int:
        return len(self.free)

    @property
    def n_allocated(self) -> int:
        return self.capacity - self.n_free

    @property
    def page_bytes(self) -> int:
        # k and v rows, float32
        return self.page_size * self.d_head * 2 * 4

    def _grow(self) -> None:
        old = self.capacity
        self.keys = np.concatenate((self.keys, np.zeros_like(self.keys)))
        self.values = np.concatenate((self.values, np.zeros_like(self.values)))
        self.owners.extend([None] * old)
        self.free = list(range(2 * old - 1, old - 1, -1)) + self.free
        self.grow_count += 1
        logger.debug("page_pool_grown", capacity=self.capacity)

    def reserve(self, n_pages: int) -> None:
        """Make sure n_pages can be allocated without growing mid-step, growing now if allowed."""
        while self.n_free < n_pages and self.allow_growth:
            self._grow()

    def allocate(self, owner: StreamId) -> int:
        if not self.free:
            if not self.allow_growth:
                raise CapacityError(f"page pool exhausted ({self.capacity} pages) and growth is disabled")
            self._grow()
        page = self.free.pop()
        self.owners[page] = owner
        return page

    def release(self, page: int) -> None:
        if self.owners[page] is None:
            raise ValueError(f"page {page} is not allocated")
        self.owners[page] = None
        self.free.append(page)

    def write(self, page: int, slot: int, key: np.ndarray, value: np.ndarray) -> None:
        self.keys[page, slot] = key
        self.values[page, slot] = value

    def gather(self, pages: np.ndarray, n_rows: int) -> tuple[np.ndarray, np.ndarray]:
        """First n_rows rows laid out across `pages` in order."""
        if n_rows == 0:
            empty = np.zeros((0, self.d_head), dtype=np.float32)
            return empty, empty
        keys = self.keys[pages].reshape(-1, self.d_head)[:n_rows]
        values = self.values[pages].reshape(-1, self.d_head)[:n_rows]
        return keys, values
