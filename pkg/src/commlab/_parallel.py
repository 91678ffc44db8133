"""Worker-pool helper honouring ``COMMLAB_THREADS``."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    """Worker cap from ``COMMLAB_THREADS``; sequential (1) when unset or invalid."""
    raw = os.environ.get("COMMLAB_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def pmap(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Ordered map; results never depend on scheduling."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
