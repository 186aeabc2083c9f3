"""Order-preserving fan-out over independent tasks."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

ENV_THREADS = "MIRRORFDR_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``$MIRRORFDR_THREADS``, else 1."""
    if threads is None:
        raw = os.environ.get(ENV_THREADS, "").strip()
        if not raw:
            return 1
        try:
            threads = int(raw)
        except ValueError:
            raise ValueError(f"{ENV_THREADS} must be an integer, got {raw!r}") from None
    if threads < 1:
        raise ValueError("threads must be at least 1")
    return int(threads)


def fan_out(fn, tasks, threads: int | None = None) -> list:
    """``[fn(t) for t in tasks]``, possibly in worker processes.

    Results come back in task order so the output never depends on the
    schedule. ``fn`` and the tasks must be picklable when ``threads > 1``.
    """
    tasks = list(tasks)
    threads = min(resolve_threads(threads), max(len(tasks), 1))
    if threads == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, tasks))
