"""Deterministic band-parallel map.

Grid work is partitioned into contiguous index bands; workers may compute
bands in any order but results are reassembled in band order, so output is
identical to a serial run. numpy kernels release the GIL, which makes a
thread pool effective without pickling large arrays.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")

DEFAULT_WORKERS = 4


def band_bounds(n_items: int, n_bands: int) -> list[tuple[int, int]]:
    n_bands = max(1, min(n_bands, n_items)) if n_items else 0
    if n_bands == 0:
        return []
    step = (n_items + n_bands - 1) // n_bands
    return [(lo, min(lo + step, n_items)) for lo in range(0, n_items, step)]


def band_map(
    fn: Callable[[int, int], T],
    n_items: int,
    workers: int = DEFAULT_WORKERS,
    bands_per_worker: int = 4,
) -> list[T]:
    """Apply fn(lo, hi) over bands covering range(n_items); ordered results."""
    bounds = band_bounds(n_items, max(1, workers) * bands_per_worker)
    if not bounds:
        return []
    if workers <= 1 or len(bounds) == 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, lo, hi) for lo, hi in bounds]
        return [f.result() for f in futures]


def map_ordered(fn: Callable[[T], object], items: Sequence[T], workers: int) -> list:
    """Parallel map over discrete items, results in input order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
