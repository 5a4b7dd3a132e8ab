"""Benchmark cache: hindsight optimal values z*(p) keyed by scenario, variant and feasible set."""

from __future__ import annotations

import hashlib
import logging
import threading
from collections import OrderedDict
from collections.abc import Sequence

import numpy as np

from regretfolio.config import settings
from regretfolio.models.schemas import Adversary, FeasibleSet, MarketParams, MvoVariant

logger = logging.getLogger(__name__)

_cache: OrderedDict[str, float] = OrderedDict()
_cache_lock = threading.Lock()


def _encode(part: object) -> bytes:
    if isinstance(part, np.ndarray):
        return str(part.shape).encode() + np.ascontiguousarray(part, dtype=float).tobytes() + b"|"
    return repr(part).encode() + b"|"


def benchmark_key(
    params: MarketParams,
    variant: MvoVariant,
    X: FeasibleSet,
    adversary: Adversary = Adversary.OMNISCIENT,
    context: Sequence[MarketParams] = (),
) -> str:
    """Key of z*(params) for a variant over X. context lists the scenarios a fortuitous benchmark depends on."""
    digest = hashlib.sha256()
    for part in (params.mu, params.sigma, variant.kind.value, variant.parameter, adversary.value):
        digest.update(_encode(part))
    for part in (X.F, X.f, X.G, X.g):
        digest.update(_encode(part))
    for scenario in context:
        digest.update(_encode(scenario.mu))
        digest.update(_encode(scenario.sigma))
    return digest.hexdigest()


def get_cached_value(key: str) -> float | None:
    """Return a stored benchmark value, or None on cache miss or when caching is disabled."""
    if not settings.cache_enabled:
        return None
    with _cache_lock:
        value = _cache.get(key)
        if value is not None:
            _cache.move_to_end(key)
        return value


def set_cached_value(key: str, value: float) -> None:
    if not settings.cache_enabled:
        return
    with _cache_lock:
        _cache[key] = float(value)
        _cache.move_to_end(key)
        while len(_cache) > max(settings.cache_max_entries, 0):
            _cache.popitem(last=False)


def clear_cache() -> None:
    with _cache_lock:
        _cache.clear()
    logger.debug("Benchmark cache cleared")


def cache_size() -> int:
    with _cache_lock:
        return len(_cache)
