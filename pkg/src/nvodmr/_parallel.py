import os
from concurrent.futures import ThreadPoolExecutor


def thread_count() -> int:
    """Worker cap from ``NVODMR_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("NVODMR_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"NVODMR_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("NVODMR_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def map_ordered(fn, items):
    """``list(map(fn, items))``, threaded when more than one worker is allowed."""
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
