"""Worker-count plumbing for the few operations that can fan out.

The command-line layer stays single-threaded; operations that map over node
or sample chunks consult the default worker count set here.  Partitions are
fixed up front and results are reduced in partition order, so the output is
bit-identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

_default_workers = 1


def set_default_workers(n: int) -> None:
    global _default_workers
    _default_workers = max(1, int(n))


def default_workers() -> int:
    return _default_workers


def map_ordered(fn, items, workers: int | None = None) -> list:
    """Map preserving order; sequential when one worker is enough."""
    items = list(items)
    n = default_workers() if workers is None else max(1, int(workers))
    if n == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
