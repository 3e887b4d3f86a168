"""Logical-worker helpers shared by the parallel execution paths.

All parallelism in this package is expressed as deterministic chunked work
assigned to logical workers; the worker count is capped by the MDKK_THREADS
environment variable so throughput experiments can pin concurrency.
"""

from __future__ import annotations

import os

DEFAULT_WORKERS = 4


def worker_count(requested: int | None = None) -> int:
    """Number of logical workers honoring the MDKK_THREADS cap."""
    n = requested if requested is not None else DEFAULT_WORKERS
    cap = os.environ.get("MDKK_THREADS")
    if cap is not None:
        try:
            cap_n = int(cap)
        except ValueError as exc:
            raise ValueError(f"MDKK_THREADS must be an integer, got {cap!r}") from exc
        if cap_n < 1:
            raise ValueError(f"MDKK_THREADS must be >= 1, got {cap_n}")
        n = min(n, cap_n)
    return max(1, int(n))


def chunk_ranges(total: int, n_chunks: int) -> list[tuple[int, int]]:
    """Split range(total) into at most n_chunks contiguous, near-equal spans."""
    n_chunks = max(1, min(n_chunks, max(total, 1)))
    base, rem = divmod(total, n_chunks)
    spans = []
    start = 0
    for c in range(n_chunks):
        stop = start + base + (1 if c < rem else 0)
        if stop > start:
            spans.append((start, stop))
        start = stop
    return spans or [(0, 0)]
