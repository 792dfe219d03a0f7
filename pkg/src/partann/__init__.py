"""Partitioned approximate nearest-neighbor search: sharded, segmented HNSW
with learned hyperplane segmenters, virtual spill routing, a two-level
top-k merge, and an exact brute-force oracle."""

from .core import (DataError, Dataset, Distance, Neighbor, distance,
                   load_fvecs, load_ivecs, recall_at_k, save_fvecs, save_ivecs)
from .exact import exact_topk, partitioned_exact
from .hnsw import HnswIndex, HnswParams, build_index
from .partition import (PartitionSpec, PartitionedIndex, build, fnv1a_64,
                        load, save, shard_of)
from .query import QueryConfig, batch_query, merge, per_shard_topk, probit, query
from .segmenter import (SegmenterTree, failure_bound, failure_bound_estimate,
                        learn_apd, learn_rh, load_segmenter, potential,
                        random_segmenter, route_document,
                        route_document_spilled, route_documents, route_query,
                        save_segmenter, second_singular_vector)

__all__ = [
    "DataError", "Dataset", "Distance", "Neighbor", "distance",
    "load_fvecs", "load_ivecs", "recall_at_k", "save_fvecs", "save_ivecs",
    "exact_topk", "partitioned_exact",
    "HnswIndex", "HnswParams", "build_index",
    "PartitionSpec", "PartitionedIndex", "build", "fnv1a_64", "load", "save",
    "shard_of",
    "QueryConfig", "batch_query", "merge", "per_shard_topk", "probit", "query",
    "SegmenterTree", "failure_bound", "failure_bound_estimate", "learn_apd",
    "learn_rh", "load_segmenter", "potential", "random_segmenter",
    "route_document", "route_document_spilled", "route_documents",
    "route_query",
    "save_segmenter", "second_singular_vector",
]
