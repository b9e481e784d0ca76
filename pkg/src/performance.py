"""
Performance helpers for SpecRoute.

This module provides the worker pool used to fan out preset cells, seeds
and learners, a timing decorator, and a small in-memory memo cache for
expensive oracles such as the Monte-Carlo Bayes risk.
"""

import time
import logging
import hashlib
import json
import threading
import multiprocessing
from collections import OrderedDict
from functools import wraps
from typing import Any, Callable, List, Optional, Sequence

logger = logging.getLogger("specroute.performance")

# Constants
DEFAULT_CACHE_SIZE = 256
DEFAULT_MAX_WORKERS = multiprocessing.cpu_count()


class MemoryCache:
    """In-memory LRU cache."""

    def __init__(self, max_size: int = DEFAULT_CACHE_SIZE):
        """Initialize the cache.

        Args:
            max_size: Maximum number of items in the cache
        """
        self.max_size = max_size
        self.cache: "OrderedDict[str, Any]" = OrderedDict()
        self.lock = threading.RLock()

    def get(self, key: str) -> Optional[Any]:
        """Get an item from the cache, or None if absent."""
        with self.lock:
            if key not in self.cache:
                return None
            self.cache.move_to_end(key)
            return self.cache[key]

    def set(self, key: str, value: Any) -> None:
        """Set an item, evicting the least recently used one when full."""
        with self.lock:
            if key not in self.cache and len(self.cache) >= self.max_size:
                self.cache.popitem(last=False)
            self.cache[key] = value
            self.cache.move_to_end(key)

    def clear(self) -> None:
        """Clear the cache."""
        with self.lock:
            self.cache.clear()


# Global cache instance
memory_cache = MemoryCache()


def cache_key(data: Any) -> str:
    """Generate a cache key for the given data.

    Args:
        data: Data to generate a key for

    Returns:
        Cache key as a string
    """
    try:
        serialized = json.dumps(data, sort_keys=True, default=repr).encode("utf-8")
    except (TypeError, ValueError):
        serialized = repr(data).encode("utf-8")
    return hashlib.md5(serialized).hexdigest()


def cached(func: Callable) -> Callable:
    """Decorator memoizing a pure function on its arguments."""

    @wraps(func)
    def wrapper(*args, **kwargs) -> Any:
        key = cache_key({"func": func.__qualname__, "args": args, "kwargs": kwargs})
        cached_result = memory_cache.get(key)
        if cached_result is not None:
            logger.debug(f"Cache hit for {func.__name__}")
            return cached_result
        result = func(*args, **kwargs)
        memory_cache.set(key, result)
        return result

    return wrapper


def timed(func: Callable) -> Callable:
    """Decorator logging the wall time of each call at DEBUG level."""

    @wraps(func)
    def wrapper(*args, **kwargs) -> Any:
        start_time = time.perf_counter()
        result = func(*args, **kwargs)
        duration = time.perf_counter() - start_time
        logger.debug(f"Execution time for {func.__name__}: {duration:.3f} seconds")
        return result

    return wrapper


def parallel_map(func: Callable, items: Sequence[Any], max_workers: int = 1) -> List[Any]:
    """Apply a function to items, in a process pool when max_workers > 1.

    Results come back in input order regardless of completion order.

    Args:
        func: Picklable function to apply
        items: Items to process
        max_workers: Maximum number of worker processes

    Returns:
        List of results
    """
    items = list(items)
    workers = min(max_workers, DEFAULT_MAX_WORKERS, len(items))
    if workers <= 1:
        return [func(item) for item in items]
    with multiprocessing.Pool(processes=workers) as pool:
        results = pool.map(func, items)
    return results
