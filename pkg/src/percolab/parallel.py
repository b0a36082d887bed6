"""Sample-level parallelism that does not change results.

Work is split into fixed-size chunks of sample indices; chunk results are
concatenated in sample order, so the output is identical for any worker count.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from functools import partial

import numpy as np

CHUNK = 256
_workers = 1


def set_workers(n: int) -> None:
    global _workers
    if int(n) < 1:
        raise ValueError(f"workers: must be >= 1, got {n!r}")
    _workers = int(n)


def get_workers() -> int:
    return _workers


def map_chunks(func, n_items: int, *args, workers: int | None = None, chunk: int = CHUNK, **kwargs):
    """Evaluate ``func(start, stop, *args, **kwargs)`` over consecutive chunks.

    ``func`` must be a module-level function returning a numpy array (or a
    tuple of arrays) with one leading entry per item.
    """
    workers = _workers if workers is None else workers
    bounds = [(s, min(s + chunk, n_items)) for s in range(0, n_items, chunk)]
    call = partial(_call, func, args, kwargs)
    if workers <= 1 or len(bounds) <= 1:
        parts = [call(b) for b in bounds]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or 1, len(bounds))) as ex:
            parts = list(ex.map(call, bounds))
    if not parts:
        return np.empty(0)
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(col) for col in zip(*parts))
    return np.concatenate(parts)


def _call(func, args, kwargs, bounds):
    return func(bounds[0], bounds[1], *args, **kwargs)
