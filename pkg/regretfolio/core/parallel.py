"""Bounded worker pool for independent solves."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

from regretfolio.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def map_solves(fn: Callable[[T], R], items: Sequence[T], max_workers: int | None = None) -> list[R]:
    """Apply fn to every item, preserving order.

    Concurrency is capped at settings.max_workers. The first exception raised by any item propagates.
    """
    workers = max_workers if max_workers is not None else settings.max_workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug("Running %d solves on %d workers", len(items), workers)
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
