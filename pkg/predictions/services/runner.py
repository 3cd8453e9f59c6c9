"""
Deterministic execution of independent Monte-Carlo cells.

Each cell is a pure function of its key (its random stream is derived from
the key), so results do not depend on scheduling; they are merged by key and
returned in sorted key order.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, Hashable, Iterable, List, Optional, Tuple

from django.conf import settings

logger = logging.getLogger(__name__)


def thread_count(requested: Optional[int] = None) -> int:
    n = requested if requested is not None else getattr(settings, "RIS_PREDICT_THREADS", 1)
    return max(1, int(n))


def run_cells(fn: Callable[[Hashable], Any], keys: Iterable[Hashable],
              threads: Optional[int] = None) -> Dict[Hashable, Any]:
    """Evaluate ``fn(key)`` for every key; 1 thread runs strictly in order."""
    keys = list(keys)
    if len(set(keys)) != len(keys):
        raise ValueError("cell keys must be unique")
    n = thread_count(threads)
    logger.debug("running %d cells on %d thread(s)", len(keys), n)
    if n == 1:
        results = [(k, fn(k)) for k in keys]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(zip(keys, pool.map(fn, keys)))
    return merge(results)


def merge(results: Iterable[Tuple[Hashable, Any]]) -> Dict[Hashable, Any]:
    """Keyed merge; insertion order is the sorted key order."""
    merged: Dict[Hashable, Any] = {}
    for key, value in results:
        if key in merged:
            raise ValueError(f"duplicate result for cell {key!r}")
        merged[key] = value
    return {k: merged[k] for k in sorted(merged)}


def flatten(merged: Dict[Hashable, List[dict]]) -> List[dict]:
    rows: List[dict] = []
    for value in merged.values():
        rows.extend(value)
    return rows
