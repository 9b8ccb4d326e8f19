import logging
import threading
from collections import OrderedDict
from typing import Any, Hashable, Optional

from app.core.config import settings

logger = logging.getLogger(__name__)


class FactorizationCache:
    """Bounded, thread-safe store for linear-solver factorizations.

    Keys are hashable tuples such as ``(grid, dt, lam)``. Cached values are
    shared read-only between concurrent trajectories.
    """

    def __init__(self, max_entries: int = 32):
        self.max_entries = max_entries
        self._entries: "OrderedDict[Hashable, Any]" = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key: Hashable) -> Optional[Any]:
        """Get a cached value, refreshing its recency."""
        with self._lock:
            value = self._entries.get(key)
            if value is not None:
                self._entries.move_to_end(key)
                logger.debug(f"Factorization cache hit for {key}")
            return value

    def set(self, key: Hashable, value: Any) -> None:
        """Store a value, evicting the least recently used entry when full."""
        with self._lock:
            self._entries[key] = value
            self._entries.move_to_end(key)
            while len(self._entries) > self.max_entries:
                evicted, _ = self._entries.popitem(last=False)
                logger.debug(f"Factorization cache evicted {evicted}")
            logger.debug(f"Factorization cache miss for {key}. Cached factorization.")

    def delete(self, key: Hashable) -> None:
        """Remove a key if present."""
        with self._lock:
            self._entries.pop(key, None)

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def __len__(self) -> int:
        return len(self._entries)


# Global singleton instance
factorization_cache = FactorizationCache(settings.FACTORIZATION_CACHE_SIZE)
