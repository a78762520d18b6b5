"""
Worker pool helpers

Worker count resolution (WAVEPLANE_THREADS, then the requested count, then
available CPUs) and an order-preserving thread map.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

import psutil

logger = logging.getLogger(__name__)

THREADS_ENV = "WAVEPLANE_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def resolve_workers(requested: Optional[int] = None) -> int:
    """
    Effective worker count

    Args:
        requested: Count from a flag or config; None means available parallelism

    Returns:
        int: At least 1
    """
    override = os.environ.get(THREADS_ENV)
    if override:
        try:
            value = int(override)
            if value >= 1:
                return value
        except ValueError:
            pass
        logger.warning(f"Ignoring invalid {THREADS_ENV}={override!r}")
    if requested is not None:
        return max(1, int(requested))
    return max(1, psutil.cpu_count(logical=True) or 1)


def ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """Apply fn to every item, in parallel when workers > 1; results keep input order"""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
