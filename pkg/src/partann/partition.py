"""Two-level (shard, segment) partitioning with parallel per-segment builds.

Shard assignment hashes the document key with 64-bit FNV-1a; segment
assignment comes from the segmenter tree (or an independent hash for the
random segmenter). Each non-empty (shard, segment) cell holds its own HNSW
index; builds of distinct cells run in parallel worker processes and the
result is byte-identical regardless of the worker count.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import DataError, Dataset, Distance
from .hnsw import HnswIndex, HnswParams, build_index
from .segmenter import (SegmenterTree, route_document_spilled, route_documents,
                        segmenter_from_json, segmenter_to_json)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _U64
    return h


def shard_of(key: bytes, num_shards: int) -> int:
    if num_shards < 1:
        raise DataError("need at least one shard")
    return fnv1a_64(key) % num_shards


def doc_key(doc_id: int) -> bytes:
    """Default sharding key: the decimal form of the doc id."""
    return str(int(doc_id)).encode("ascii")


def segment_hash(key: bytes, num_segments: int) -> int:
    """Random-segmenter assignment for a document key.

    The hash is salted and xor-folded before the modulus: the low bits of
    FNV-1a over a given key determine the low bits of FNV-1a over any fixed
    extension of that key, so without the fold the segment would be a pure
    function of the shard whenever both counts are powers of two.
    """
    h = fnv1a_64(key + b"seg")
    return ((h >> 32) ^ h) % num_segments


@dataclass(frozen=True)
class PartitionSpec:
    num_shards: int
    segmenter: SegmenterTree

    def __post_init__(self):
        if self.num_shards < 1:
            raise DataError("need at least one shard")


@dataclass
class PartitionedIndex:
    spec: PartitionSpec
    hnsw_params: HnswParams
    distance_fn: Distance
    dim: int
    doc_count: int
    spill_mode: str  # "virtual" | "physical"
    segments: dict  # (shard, segment) -> HnswIndex

    @property
    def num_shards(self) -> int:
        return self.spec.num_shards

    @property
    def num_segments(self) -> int:
        return self.spec.segmenter.num_segments

    def segment(self, shard: int, seg: int) -> HnswIndex | None:
        return self.segments.get((shard, seg))


def segment_seed(base_seed: int, shard: int, seg: int) -> int:
    """Per-cell HNSW seed, a pure function of (base seed, shard, segment)."""
    return (base_seed ^ fnv1a_64(f"{shard}/{seg}".encode("ascii"))) & _U64


def _assign_cells(dataset: Dataset, spec: PartitionSpec, spill_mode: str):
    """Map every document to its (shard, segment) cells."""
    tree = spec.segmenter
    cells: dict[tuple[int, int], list[int]] = {}
    shards = np.fromiter(
        (shard_of(doc_key(d), spec.num_shards) for d in dataset.doc_ids),
        dtype=np.int64, count=len(dataset))
    if tree.kind == "random":
        segs = np.fromiter(
            (segment_hash(doc_key(d), tree.num_segments)
             for d in dataset.doc_ids),
            dtype=np.int64, count=len(dataset))
        for row in range(len(dataset)):
            cells.setdefault((int(shards[row]), int(segs[row])), []).append(row)
    elif spill_mode == "virtual":
        segs = route_documents(tree, dataset.vectors)
        for row in range(len(dataset)):
            cells.setdefault((int(shards[row]), int(segs[row])), []).append(row)
    else:
        for row in range(len(dataset)):
            for seg in route_document_spilled(tree, dataset.vectors[row]):
                cells.setdefault((int(shards[row]), seg), []).append(row)
    return cells


def _build_cell(args):
    shard, seg, doc_ids, vectors, params, distance_value = args
    index = build_index(doc_ids, vectors, params, Distance(distance_value))
    return shard, seg, index.serialize()


def build(dataset: Dataset, spec: PartitionSpec,
          hnsw_params: HnswParams | None = None,
          distance_fn: Distance = Distance.EUCLIDEAN,
          workers: int = 1, spill_mode: str = "virtual") -> PartitionedIndex:
    """Partition the dataset and build one HNSW index per non-empty cell."""
    if workers < 1:
        raise DataError("workers must be >= 1")
    if spill_mode not in ("virtual", "physical"):
        raise DataError(f"unknown spill mode {spill_mode!r}")
    hnsw_params = hnsw_params or HnswParams()
    tree = spec.segmenter
    if tree.dim is not None and tree.dim != dataset.dim:
        raise DataError(
            f"segmenter dim {tree.dim} does not match dataset dim {dataset.dim}")

    cells = _assign_cells(dataset, spec, spill_mode)
    tasks = []
    for (shard, seg), rows in sorted(cells.items()):
        rows_arr = np.asarray(rows, dtype=np.int64)
        params = HnswParams(
            M=hnsw_params.M, M0=hnsw_params.M0,
            ef_construction=hnsw_params.ef_construction,
            ef_search=hnsw_params.ef_search,
            seed=segment_seed(hnsw_params.seed, shard, seg))
        tasks.append((shard, seg, dataset.doc_ids[rows_arr],
                      dataset.vectors[rows_arr], params, distance_fn.value))

    segments: dict[tuple[int, int], HnswIndex] = {}
    if workers == 1 or len(tasks) <= 1:
        results = map(_build_cell, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=min(workers, len(tasks)))
        try:
            results = list(pool.map(_build_cell, tasks))
        finally:
            pool.shutdown()
    for shard, seg, blob in results:
        segments[(shard, seg)] = HnswIndex.deserialize(blob)

    return PartitionedIndex(spec=spec, hnsw_params=hnsw_params,
                            distance_fn=distance_fn, dim=dataset.dim,
                            doc_count=len(dataset), spill_mode=spill_mode,
                            segments=segments)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _segment_filename(shard: int, seg: int) -> str:
    return f"s{shard}_g{seg}.seg"


def save(index: PartitionedIndex, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    entries = []
    for (shard, seg), hnsw in sorted(index.segments.items()):
        fname = _segment_filename(shard, seg)
        with open(os.path.join(directory, fname), "wb") as f:
            f.write(hnsw.serialize())
        entries.append({"shard": shard, "segment": seg, "file": fname,
                        "count": len(hnsw)})
    p = index.hnsw_params
    manifest = {
        "version": MANIFEST_VERSION,
        "S": index.num_shards,
        "segmenter": json.loads(segmenter_to_json(index.spec.segmenter)),
        "hnswParams": {"M": p.M, "M0": p.M0, "efConstruction": p.ef_construction,
                       "efSearch": p.ef_search, "seed": p.seed},
        "distanceKind": index.distance_fn.value,
        "dim": index.dim,
        "docCount": index.doc_count,
        "spillMode": index.spill_mode,
        "segments": entries,
    }
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)


def load(directory) -> PartitionedIndex:
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataError(f"no manifest at {path}")
    with open(path, encoding="utf-8") as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"malformed manifest: {e}") from None
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {manifest.get('version')!r}")
    try:
        tree = segmenter_from_json(json.dumps(manifest["segmenter"]))
        hp = manifest["hnswParams"]
        params = HnswParams(M=hp["M"], M0=hp["M0"],
                            ef_construction=hp["efConstruction"],
                            ef_search=hp["efSearch"], seed=hp["seed"])
        distance_fn = Distance(manifest["distanceKind"])
        dim = int(manifest["dim"])
        spec = PartitionSpec(num_shards=int(manifest["S"]), segmenter=tree)
        entries = manifest["segments"]
        doc_count = int(manifest["docCount"])
        spill_mode = manifest["spillMode"]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed manifest: {e}") from None

    segments = {}
    for entry in entries:
        fpath = os.path.join(directory, entry["file"])
        if not os.path.exists(fpath):
            raise DataError(f"missing segment file {entry['file']}")
        with open(fpath, "rb") as f:
            hnsw = HnswIndex.deserialize(f.read())
        if hnsw.dim != dim:
            raise DataError(
                f"segment {entry['file']}: dim {hnsw.dim} != manifest dim {dim}")
        if hnsw.distance_fn != distance_fn:
            raise DataError(
                f"segment {entry['file']}: distance {hnsw.distance_fn.value} "
                f"!= manifest {distance_fn.value}")
        if len(hnsw) != entry["count"]:
            raise DataError(
                f"segment {entry['file']}: count {len(hnsw)} != manifest "
                f"{entry['count']}")
        segments[(int(entry["shard"]), int(entry["segment"]))] = hnsw

    return PartitionedIndex(spec=spec, hnsw_params=params,
                            distance_fn=distance_fn, dim=dim,
                            doc_count=doc_count, spill_mode=spill_mode,
                            segments=segments)
