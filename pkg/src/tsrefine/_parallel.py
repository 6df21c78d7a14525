import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "TS_REFINE_THREADS"


def thread_count() -> int:
    """Worker cap from ``TS_REFINE_THREADS``; 0 or unset means one per CPU."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def ordered_map(fn, items):
    """``list(map(fn, items))`` on a thread pool; output order follows input."""
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
