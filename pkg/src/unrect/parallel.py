from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from unrect.config import get_settings

T = TypeVar("T")
R = TypeVar("R")

_worker = threading.local()


def in_worker() -> bool:
    """True on a thread currently running a ``parallel_map`` item."""
    return getattr(_worker, "depth", 0) > 0


def _tracked(fn: Callable[[T], R]) -> Callable[[T], R]:
    def run(item: T) -> R:
        _worker.depth = getattr(_worker, "depth", 0) + 1
        try:
            return fn(item)
        finally:
            _worker.depth -= 1

    return run


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """Map ``fn`` over ``items`` on a bounded thread pool, keeping input order.

    Calls made from inside a worker run inline, so nested maps never multiply
    the thread count past ``UNRECT_THREADS``.
    """
    items = list(items)
    workers = threads if threads is not None else get_settings().threads
    if in_worker():
        workers = 1
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(_tracked(fn), items))
