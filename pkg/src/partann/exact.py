"""Brute-force exact k-NN oracle, serial and partitioned.

The partitioned path splits the dataset into contiguous chunks, scans each
chunk against all queries and merges the per-chunk lists; because distance
computation reduces row-wise only, the merged output is bit-identical to the
serial scan for every chunking.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import DataError, Dataset, Distance, Neighbor, distances_to


def exact_topk_arrays(doc_ids: np.ndarray, vectors: np.ndarray, q, k: int,
                      fn: Distance = Distance.EUCLIDEAN):
    if vectors.shape[0] == 0:
        raise DataError("dataset is empty")
    if k < 1:
        raise DataError("k must be positive")
    d = distances_to(q, vectors, fn)
    order = np.lexsort((doc_ids, d))[: min(k, len(doc_ids))]
    return [Neighbor(int(doc_ids[i]), float(d[i])) for i in order]


def exact_topk(dataset: Dataset, q, k: int,
               fn: Distance = Distance.EUCLIDEAN):
    """True k nearest neighbors of q by exhaustive scan."""
    return exact_topk_arrays(dataset.doc_ids, dataset.vectors, q, k, fn)


def partitioned_exact(dataset: Dataset, queries: np.ndarray, k: int,
                      fn: Distance = Distance.EUCLIDEAN,
                      partitions: int = 1, workers: int = 1):
    """Exact k-NN for every query row via contiguous dataset chunks; output
    is exactly equal to the serial exact_topk per query."""
    from .query import merge

    if partitions < 1:
        raise DataError("partitions must be >= 1")
    if workers < 1:
        raise DataError("workers must be >= 1")
    queries = np.asarray(queries)
    if queries.ndim != 2 or queries.shape[1] != dataset.dim:
        raise DataError(
            f"queries must be 2-d with dim {dataset.dim}, "
            f"got shape {queries.shape}")
    n = len(dataset)
    if n == 0:
        raise DataError("dataset is empty")
    bounds = np.linspace(0, n, min(partitions, n) + 1).astype(np.int64)

    def scan_chunk(c):
        a, b = int(bounds[c]), int(bounds[c + 1])
        ids = dataset.doc_ids[a:b]
        vecs = dataset.vectors[a:b]
        return [exact_topk_arrays(ids, vecs, q, k, fn) for q in queries]

    chunk_ids = range(len(bounds) - 1)
    if workers == 1:
        partials = [scan_chunk(c) for c in chunk_ids]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(scan_chunk, chunk_ids))
    return [merge([p[qi] for p in partials], k)
            for qi in range(len(queries))]
