"""Ordered parallel map used by the engines.

Work is always split into chunks whose size does not depend on the
worker count, and results are reassembled by index, so output is
bitwise identical for any number of workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_VAR = "GEXP_THREADS"


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        raw = os.environ.get(ENV_VAR, "0").strip() or "0"
        try:
            workers = int(raw)
        except ValueError:
            workers = 0
    if workers <= 0:
        workers = os.cpu_count() or 1
    return max(1, workers)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    items = list(items)
    n = min(worker_count(workers), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
