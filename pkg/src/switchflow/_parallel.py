"""Deterministic chunked execution.

Paths are split into fixed blocks of consecutive global ids.  The block
layout depends only on ``n_paths`` and ``chunk_size``, never on the number
of workers, so every per-path value is computed by identical array
operations whatever the parallelism.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

DEFAULT_CHUNK = 1024


def chunks(n_paths: int, chunk_size: int):
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    if chunk_size < 1:
        raise ValueError("chunk_size must be at least 1")
    return [np.arange(s, min(s + chunk_size, n_paths)) for s in range(0, n_paths, chunk_size)]


def auto_chunk(n: int, d: int, n_cells: int, budget: float = 8e6) -> int:
    """Chunk size keeping the largest per-chunk tensor near ``budget`` entries."""
    per_path = max(1, n_cells) * n**3 * max(d, 1)
    return int(min(2048, max(16, budget // per_path)))


def map_chunks(fn, blocks, workers: int = 1):
    """Apply ``fn`` to each block; results come back in block order."""
    if workers <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))
