"""Order-preserving chunked thread map.

Work is split into contiguous chunks, each chunk is computed by a pure
function of its inputs, and results are reassembled in chunk order. The
output is therefore independent of the number of worker threads.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> List[R]:
    """Apply fn to every item, preserving item order in the result list."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    items = list(items)
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
