"""Deterministic parallel map used by the channel loops."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional

ENV_WORKERS = "DRK_WORKERS"


def resolve_workers(flag: Optional[int] = None, config: Optional[int] = None) -> int:
    """Worker count with precedence flag > environment > config > 1."""
    if flag is not None:
        n = int(flag)
    elif os.environ.get(ENV_WORKERS):
        n = int(os.environ[ENV_WORKERS])
    elif config is not None:
        n = int(config)
    else:
        n = 1
    if n < 1:
        raise ValueError("worker count must be positive")
    return n


def ordered_map(fn: Callable, items: Iterable, workers: int = 1) -> list:
    """[fn(x) for x in items], evaluated on a thread pool when workers > 1.

    Results come back in input order, so any reduction over them is
    independent of the worker count.  LAPACK and the ODE integrators release
    the GIL for the heavy parts.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
