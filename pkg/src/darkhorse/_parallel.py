"""Order-preserving process fan-out used by generation, featurisation and trials."""
from concurrent.futures import ProcessPoolExecutor


def ordered_map(fn, jobs, workers=1):
    """``[fn(j) for j in jobs]``, spread over ``workers`` processes when > 1."""
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def chunk_ranges(n, n_chunks):
    """Split ``range(n)`` into at most ``n_chunks`` contiguous ``(start, stop)`` pieces."""
    n_chunks = max(1, min(n_chunks, n))
    edges = [n * i // n_chunks for i in range(n_chunks + 1)]
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]
