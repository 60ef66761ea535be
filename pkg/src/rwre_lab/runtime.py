"""Deterministic parallel map.

Worker count is capped by the RWRE_THREADS environment variable (default 1).
Tasks carry their own derived seeds and results are reduced in task order,
so the outcome never depends on the number of workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence


def worker_count() -> int:
    raw = os.environ.get("RWRE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def deterministic_map(fn: Callable, items: Sequence) -> list:
    """Map fn over items, preserving order; thread count never changes results."""
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
