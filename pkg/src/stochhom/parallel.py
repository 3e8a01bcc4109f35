"""Order-preserving map over independent tasks."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence


def pmap(fn: Callable, items: Sequence, workers: int = 1, chunksize: int | None = None) -> list:
    """``[fn(x) for x in items]``, optionally in a process pool. Output order follows input order."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    workers = min(int(workers), len(items))
    if workers == 1:
        return [fn(x) for x in items]
    if chunksize is None:
        chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunksize))


def catching(fn: Callable) -> Callable:
    return _Catching(fn)


class _Catching:
    """Wraps a task so an exception comes back as ``(None, message)`` instead of aborting the pool."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, x):
        try:
            return self.fn(x), None
        except Exception as exc:  # noqa: BLE001 - reported per task
            return None, f"{type(exc).__name__}: {exc}"
