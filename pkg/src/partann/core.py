"""Shared domain types, distance functions, file I/O and recall computation.

Vectors are stored as float32 (the SIFT/GIST container precision); all
distance accumulation happens in float64 so orderings are stable across
platforms. Ties are broken everywhere by ascending doc id after distance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed input data or files (bad format, mismatched shapes)."""


class Distance(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"


class Neighbor(NamedTuple):
    doc_id: int
    distance: float


# A NeighborList is a plain list of Neighbor, sorted ascending by
# (distance, doc_id) with unique doc ids.
NeighborList = list


def _as_float64(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise DataError(f"expected a 1-d vector, got shape {a.shape}")
    return a


def distance(a, b, fn: Distance = Distance.EUCLIDEAN) -> float:
    """Distance between two vectors, accumulated in float64."""
    x = _as_float64(a)
    y = _as_float64(b)
    if x.shape != y.shape:
        raise DataError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    if fn == Distance.EUCLIDEAN:
        d = x - y
        return float(np.sqrt(np.dot(d, d)))
    nx = float(np.sqrt(np.dot(x, x)))
    ny = float(np.sqrt(np.dot(y, y)))
    if nx == 0.0 or ny == 0.0:
        raise DataError("cosine distance undefined for zero-norm vectors")
    return 1.0 - float(np.dot(x, y)) / (nx * ny)


def distances_to(q, X: np.ndarray, fn: Distance = Distance.EUCLIDEAN) -> np.ndarray:
    """Distances from query q to every row of X, in float64.

    Row-wise reductions only, so results on any row subset are bitwise
    identical to the full-matrix computation (exactness of partitioned scans
    depends on this).
    """
    q64 = np.asarray(q, dtype=np.float64)
    X64 = np.asarray(X, dtype=np.float64)
    if X64.ndim != 2 or X64.shape[1] != q64.shape[0]:
        raise DataError(f"dimension mismatch: query {q64.shape[0]}, data {X64.shape}")
    if fn == Distance.EUCLIDEAN:
        diff = X64 - q64
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    qn = float(np.sqrt(np.dot(q64, q64)))
    xn = np.sqrt(np.einsum("ij,ij->i", X64, X64))
    if qn == 0.0 or np.any(xn == 0.0):
        raise DataError("cosine distance undefined for zero-norm vectors")
    return 1.0 - (X64 @ q64) / (xn * qn)


@dataclass(frozen=True)
class Dataset:
    """Fixed-dimension float32 embeddings keyed by unsigned 64-bit doc ids."""

    dim: int
    doc_ids: np.ndarray  # (n,) uint64
    vectors: np.ndarray  # (n, dim) float32

    def __post_init__(self):
        ids = np.asarray(self.doc_ids, dtype=np.uint64)
        vecs = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vecs.ndim != 2 or vecs.shape[1] != self.dim:
            raise DataError(f"vectors shape {vecs.shape} does not match dim {self.dim}")
        if ids.shape != (vecs.shape[0],):
            raise DataError("doc_ids and vectors length mismatch")
        if len(np.unique(ids)) != len(ids):
            raise DataError("duplicate doc ids")
        if not np.all(np.isfinite(vecs)):
            raise DataError("non-finite vector component")
        object.__setattr__(self, "doc_ids", ids)
        object.__setattr__(self, "vectors", vecs)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def from_vectors(cls, vectors, doc_ids=None) -> "Dataset":
        vecs = np.asarray(vectors, dtype=np.float32)
        if vecs.ndim != 2:
            raise DataError("expected a 2-d array of vectors")
        if doc_ids is None:
            doc_ids = np.arange(vecs.shape[0], dtype=np.uint64)
        return cls(dim=vecs.shape[1], doc_ids=np.asarray(doc_ids, dtype=np.uint64), vectors=vecs)


def recall_at_k(returned: Sequence, truth: Sequence, k: int) -> float:
    """Fraction of the true k nearest present in the first k returned entries.

    Entries may be Neighbor tuples or bare doc ids.
    """
    if k < 1:
        raise DataError("k must be positive")
    if len(truth) < k:
        raise DataError(f"ground truth has {len(truth)} entries, need at least {k}")

    def ids(entries, limit):
        out = []
        for e in entries[:limit]:
            out.append(int(e[0]) if isinstance(e, tuple) else int(e))
        return out

    got = set(ids(returned, min(k, len(returned))))
    want = set(ids(truth, k))
    return len(got & want) / k


# ---------------------------------------------------------------------------
# fvecs / ivecs containers (little-endian; per record: int32 count, payload)
# ---------------------------------------------------------------------------


def _read_xvecs(path, payload_dtype) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) == 0:
        raise DataError(f"{path}: empty file (record width unknowable)")
    if len(raw) % 4 != 0:
        raise DataError(f"{path}: truncated file")
    data = np.frombuffer(raw, dtype="<i4")
    d = int(data[0])
    if d <= 0:
        raise DataError(f"{path}: invalid record width {d}")
    rec = d + 1
    if data.size % rec != 0:
        raise DataError(f"{path}: truncated file")
    mat = data.reshape(-1, rec)
    if not np.all(mat[:, 0] == d):
        raise DataError(f"{path}: inconsistent per-record width")
    return np.ascontiguousarray(mat[:, 1:]).view(payload_dtype)


def load_fvecs(path) -> Dataset:
    """Load an fvecs file; doc ids are positional (0-based, file order)."""
    vecs = _read_xvecs(path, "<f4")
    if not np.all(np.isfinite(vecs)):
        raise DataError(f"{path}: non-finite vector component")
    return Dataset.from_vectors(vecs)


def save_fvecs(dataset: Dataset, path) -> None:
    _write_xvecs(np.asarray(dataset.vectors, dtype="<f4"), path)


def load_ivecs(path) -> np.ndarray:
    """Load an ivecs file as an (n, k) int32 array."""
    return _read_xvecs(path, "<i4")


def save_ivecs(rows, path) -> None:
    mat = np.asarray(rows, dtype="<i4")
    if mat.ndim != 2:
        raise DataError("ivecs rows must all have the same length")
    _write_xvecs(mat, path)


def _write_xvecs(mat: np.ndarray, path) -> None:
    n, d = mat.shape
    out = np.empty((n, d + 1), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = mat.view("<i4")
    with open(path, "wb") as f:
        f.write(out.tobytes())
