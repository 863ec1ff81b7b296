"""Deterministic chunked parallel map.

Chunk boundaries depend only on the problem size, never on the worker count,
so results are bit-identical for any number of workers.
"""
from concurrent.futures import ThreadPoolExecutor

CHUNK = 512


def chunk_slices(n, chunk=CHUNK):
    return [slice(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def chunked_map(fn, n, workers=1, chunk=CHUNK):
    """Apply ``fn`` to consecutive slices of ``range(n)``; results keep slice order."""
    slices = chunk_slices(n, chunk)
    if workers <= 1 or len(slices) <= 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, slices))
