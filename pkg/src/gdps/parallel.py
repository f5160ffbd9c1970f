"""Deterministic data-parallel map honoring the GDPS_THREADS env variable.

Work items are independent; results are always collected in input order, so
the output (and any floating-point reduction done afterwards) is bit-identical
for every thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count() -> int:
    raw = os.environ.get("GDPS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def ordered_map(fn, items):
    """Apply fn to each item, preserving input order in the result list."""
    items = list(items)
    n = thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
