"""Order-preserving chunked execution over a thread pool.

Work is split into fixed chunks of the sample axis. Each chunk computes its
own per-sample outputs, and results are concatenated in chunk order, so the
final array does not depend on the number of workers.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import InputError

ENV_THREADS = "PAMFK_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else $PAMFK_THREADS, else 1."""
    if threads is None:
        raw = os.environ.get(ENV_THREADS, "").strip()
        if not raw:
            return 1
        try:
            threads = int(raw)
        except ValueError:
            raise InputError(f"{ENV_THREADS} must be an integer, got {raw!r}") from None
    if threads < 1:
        raise InputError(f"thread count must be >= 1, got {threads}")
    return int(threads)


def map_chunks(fn, n_items: int, threads: int | None = None, chunk: int = 64):
    """Run ``fn(start, stop)`` over consecutive chunks and concatenate along axis 0.

    ``fn`` must return an array (or tuple of arrays) whose leading axis has
    length ``stop - start``.
    """
    bounds = [(s, min(s + chunk, n_items)) for s in range(0, n_items, chunk)]
    if not bounds:
        return fn(0, 0)
    workers = min(resolve_threads(threads), len(bounds))
    if workers == 1:
        parts = [fn(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: fn(*ab), bounds))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(col) for col in zip(*parts))
    return np.concatenate(parts)
