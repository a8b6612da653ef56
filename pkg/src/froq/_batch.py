import logging
import os
from concurrent.futures import ThreadPoolExecutor

from .exceptions import BatchError, FroqError, InvalidParameter

logger = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.10


def thread_count():
    """Worker threads from ``FROQ_THREADS``; defaults to the CPU count."""
    raw = os.environ.get("FROQ_THREADS", "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise InvalidParameter(f"FROQ_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise InvalidParameter("FROQ_THREADS must be >= 1")
    return n


def run_batch(fn, items, threads=None, label=str):
    """Apply ``fn`` to every item, preserving order.

    Failed items yield ``None`` and are logged. More than 10% failures raise
    :class:`BatchError` listing each failing item.
    """
    items = list(items)
    if not items:
        raise InvalidParameter("empty input list")
    threads = threads or thread_count()

    def guarded(item):
        try:
            return True, fn(item)
        except (FroqError, OSError) as exc:
            return False, exc

    if threads == 1 or len(items) == 1:
        outcomes = [guarded(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(guarded, items))

    failures = [(label(item), exc) for item, (ok, exc) in zip(items, outcomes) if not ok]
    if len(failures) > MAX_FAILURE_FRACTION * len(items):
        raise BatchError(failures, len(items))
    for name, exc in failures:
        logger.warning("skipping %s: %s", name, exc)
    return [res if ok else None for ok, res in outcomes]
