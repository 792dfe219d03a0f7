"""Query routing, per-shard top-k reduction and the two-level merge.

A query fans out to every shard; within a shard the segmenter picks the
segments to search (all of them for the random segmenter). Segment lists
are merged per shard first, then across shards. The per-shard result count
can be reduced below topK using a normal-approximation confidence interval.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import DataError, Dataset, Neighbor
from .partition import PartitionedIndex
from .segmenter import route_query

# Acklam's rational approximation to the inverse normal CDF
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def probit(x: float) -> float:
    """Inverse standard normal CDF (rational approximation plus one Newton
    refinement; absolute error well under 1e-8)."""
    if not 0.0 < x < 1.0:
        raise DataError("probit argument must lie in (0, 1)")
    if x < _P_LOW:
        q = math.sqrt(-2.0 * math.log(x))
        z = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4])
              * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif x <= 1.0 - _P_LOW:
        q = x - 0.5
        r = q * q
        z = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4])
              * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4])
                * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - x))
        z = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4])
               * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # one Newton step against the exact CDF
    cdf = 0.5 * math.erfc(-z / math.sqrt(2.0))
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return z - (cdf - x) / pdf


def per_shard_topk(top_k: int, num_shards: int, confidence: float,
                   literal_quantile: bool = False) -> int:
    """Per-shard result count from the normal-approximation interval.

    By default f is the two-sided quantile probit((1+p)/2); the literal
    one-sided probit(1 - p/2) reading is available behind the flag.
    """
    if num_shards < 1:
        raise DataError("need at least one shard")
    if top_k < 1:
        raise DataError("topK must be positive")
    if not 0.0 < confidence < 1.0:
        raise DataError("confidence must lie in (0, 1)")
    s = 1.0 / num_shards
    if literal_quantile:
        f = probit(1.0 - confidence / 2.0)
    else:
        f = probit((1.0 + confidence) / 2.0)
    ci = s + f * math.sqrt(s * (1.0 - s) / top_k)
    return max(1, min(top_k, math.ceil(ci * top_k)))


def merge(lists, k: int):
    """Merge sorted neighbor lists: collapse duplicate doc ids keeping the
    smaller distance, sort by (distance, doc id), truncate to k."""
    best: dict[int, float] = {}
    for lst in lists:
        for doc_id, dist in lst:
            cur = best.get(doc_id)
            if cur is None or dist < cur:
                best[doc_id] = dist
    out = sorted(best.items(), key=lambda e: (e[1], e[0]))[: max(k, 0)]
    return [Neighbor(doc_id, dist) for doc_id, dist in out]


@dataclass(frozen=True)
class QueryConfig:
    top_k: int = 10
    ef_search: int = 100
    confidence: float = 0.95
    use_per_shard_topk: bool = True
    literal_quantile: bool = False

    def __post_init__(self):
        if self.top_k < 1:
            raise DataError("topK must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise DataError("confidence must lie in (0, 1)")


def query(index: PartitionedIndex, q, cfg: QueryConfig):
    """Two-level search: per-shard segment merge, then global shard merge."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DataError(f"query shape {q.shape} does not match dim {index.dim}")
    if not np.all(np.isfinite(q)):
        raise DataError("non-finite query component")
    if not index.segments:
        return []
    if cfg.use_per_shard_topk:
        k_shard = per_shard_topk(cfg.top_k, index.num_shards, cfg.confidence,
                                 cfg.literal_quantile)
    else:
        k_shard = cfg.top_k
    ef = max(cfg.ef_search, k_shard)
    seg_ids = route_query(index.spec.segmenter, q)
    shard_lists = []
    for shard in range(index.num_shards):
        seg_lists = []
        for seg in seg_ids:
            hnsw = index.segment(shard, seg)
            if hnsw is not None and len(hnsw):
                seg_lists.append(hnsw.search(q, min(k_shard, len(hnsw)), ef))
        if seg_lists:
            shard_lists.append(merge(seg_lists, k_shard))
    return merge(shard_lists, cfg.top_k)


def batch_query(index: PartitionedIndex, queries: Dataset, cfg: QueryConfig,
                workers: int = 1):
    """Run queries in parallel; returns (results, errors, timing report).

    results[i] is the neighbor list for query i (empty on failure);
    errors[i] carries the failure message, or None. A single failing query
    never aborts the batch.
    """
    if workers < 1:
        raise DataError("workers must be >= 1")
    if len(queries) and queries.dim != index.dim:
        raise DataError(
            f"dimension mismatch: queries {queries.dim}, index {index.dim}")

    def run_one(q):
        t0 = time.perf_counter()
        try:
            res = query(index, q, cfg)
            err = None
        except Exception as e:  # recorded per row
            res = []
            err = str(e)
        return res, err, time.perf_counter() - t0

    wall0 = time.perf_counter()
    if len(queries) == 0:
        rows = []
    elif workers == 1:
        rows = [run_one(q) for q in queries.vectors]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_one, queries.vectors))
    wall = time.perf_counter() - wall0

    results = [r for r, _, _ in rows]
    errors = [e for _, e, _ in rows]
    lat_ms = sorted(t * 1e3 for _, _, t in rows)

    def pct(p):
        if not lat_ms:
            return 0.0
        return lat_ms[min(len(lat_ms) - 1, int(math.ceil(p * len(lat_ms))) - 1)]

    report = {
        "count": len(rows),
        "wallSeconds": wall if rows else 0.0,
        "qps": len(rows) / wall if rows and wall > 0 else 0.0,
        "latencyMsP50": pct(0.50),
        "latencyMsP99": pct(0.99),
    }
    return results, errors, report
