"""Thread fan-out with a fixed work partition.

Work is always cut into the same chunks regardless of the thread count, and
BLAS is pinned to one thread inside workers, so the arithmetic (and thus
every output bit) does not depend on how many threads run it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

from threadpoolctl import threadpool_limits


def chunks(n, size):
    return [(i, min(i + size, n)) for i in range(0, n, size)]


@contextmanager
def single_threaded_blas():
    with threadpool_limits(limits=1):
        yield


def chunked_map(fn, n, size, threads=1):
    """``[fn(lo, hi) for each fixed chunk]`` evaluated on up to ``threads`` threads."""
    parts = chunks(n, size)
    with single_threaded_blas():
        if threads <= 1 or len(parts) <= 1:
            return [fn(lo, hi) for lo, hi in parts]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda p: fn(*p), parts))
