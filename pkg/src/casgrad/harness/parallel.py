"""Order-independent parallel map over independent work items."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def default_threads() -> int:
    return os.cpu_count() or 1


def parallel_map(fn, items, threads: int | None = None) -> list:
    """``[fn(item) for item in items]``, in input order, using up to ``threads`` processes.

    ``fn`` and the items must be picklable when ``threads > 1``. Every item
    carries its own seed, so the result does not depend on scheduling.
    """
    items = list(items)
    threads = default_threads() if threads is None else int(threads)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
