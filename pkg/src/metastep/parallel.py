"""Order-preserving fan-out over independent work items."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar, Union

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(threads: Union[int, str, None]) -> int:
    if threads is None or threads == "auto":
        return os.cpu_count() or 1
    n = int(threads)
    if n < 1:
        raise ValueError(f"threads must be >= 1 or 'auto', got {threads}")
    return n


def pmap(fn: Callable[[T], R], items: Iterable[T], threads: Union[int, str, None] = 1) -> List[R]:
    """``list(map(fn, items))`` on a thread pool; results keep input order."""
    items = list(items)
    n = min(resolve_threads(threads), max(len(items), 1))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
