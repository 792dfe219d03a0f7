"""Segmenters mapping vectors to segments, plus failure-bound calculators.

Three kinds: random (modulo-style, query fans out to all segments), random
hyperplane trees, and approximate-principal-direction trees whose split
normal is the second right singular vector of the node's sample. Hyperplane
trees carry a spill band [lo, hi] around each median split: documents take
one side, queries falling inside the band descend into both.

Rank conventions, with the node's projections sorted ascending as P[0..n-1]:
split = P[floor(n/2)], lo = P[floor((0.5-alpha)*n)],
hi = P[min(n-1, floor((0.5+alpha)*n))].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import DataError, Dataset

SEGMENTER_FORMAT_VERSION = 1

# fixed start seed for the power-iteration start vector
_POWER_SEED = 0x5EED
_POWER_TOL = 1e-6
_POWER_MAX_ITERS = 500


@dataclass(frozen=True)
class HyperplaneNode:
    h: np.ndarray  # unit normal, float64
    split: float
    lo: float
    hi: float

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        object.__setattr__(self, "h", h)
        if abs(float(np.linalg.norm(h)) - 1.0) > 1e-6:
            raise DataError("hyperplane normal must be unit length")
        if not self.lo <= self.split <= self.hi:
            raise DataError("spill band must straddle the split")


@dataclass(frozen=True)
class SegmenterTree:
    kind: str  # "random" | "randomHyperplane" | "apd"
    levels: int
    alpha: float
    num_segments: int
    seed: int
    dim: int | None = None
    nodes: tuple = field(default_factory=tuple)  # level order, 2^levels - 1

    def __post_init__(self):
        if self.kind not in ("random", "randomHyperplane", "apd"):
            raise DataError(f"unknown segmenter kind {self.kind!r}")
        if not 0.0 <= self.alpha < 0.5:
            raise DataError("alpha must be in [0, 0.5)")
        if self.kind == "random":
            if self.nodes:
                raise DataError("random segmenter carries no hyperplanes")
            if self.num_segments < 1:
                raise DataError("need at least one segment")
        else:
            if self.num_segments != 2**self.levels:
                raise DataError("hyperplane segmenter needs 2^levels segments")
            if len(self.nodes) != 2**self.levels - 1:
                raise DataError("hyperplane tree must be complete")

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.dim is not None and x.shape != (self.dim,):
            raise DataError(f"vector shape {x.shape} does not match dim {self.dim}")
        return x


def _fractile_cuts(proj: np.ndarray, alpha: float):
    p = np.sort(proj)
    n = p.shape[0]
    split = float(p[n // 2])
    lo = float(p[int(math.floor((0.5 - alpha) * n))])
    hi = float(p[min(n - 1, int(math.floor((0.5 + alpha) * n)))])
    return split, lo, hi


def _random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        h = rng.standard_normal(dim)
        norm = float(np.linalg.norm(h))
        if norm > 0.0:
            return h / norm


def _check_sample(sample: Dataset, levels: int) -> None:
    if levels < 0:
        raise DataError("levels must be non-negative")
    if len(sample) < 2 ** levels * 2 and levels > 0:
        raise DataError(
            f"sample of {len(sample)} points is too small for {levels} levels")


def learn_rh(sample: Dataset, levels: int, alpha: float, seed: int) -> SegmenterTree:
    """Learn a random-hyperplane tree: at each node draw a direction uniformly
    from the unit sphere, median-split the projections, recurse."""
    _check_sample(sample, levels)
    rng = np.random.default_rng(seed)
    nodes = _learn_tree(sample.vectors.astype(np.float64), levels, alpha,
                        lambda X: _random_unit(rng, X.shape[1]))
    return SegmenterTree(kind="randomHyperplane", levels=levels, alpha=alpha,
                         num_segments=2**levels, seed=seed, dim=sample.dim,
                         nodes=tuple(nodes))


def learn_apd(sample: Dataset, levels: int, alpha: float, seed: int = 0) -> SegmenterTree:
    """Like learn_rh, but each node's normal is the second right singular
    vector of that node's (uncentered) sample matrix."""
    _check_sample(sample, levels)
    nodes = _learn_tree(sample.vectors.astype(np.float64), levels, alpha,
                        lambda X: _second_singular_vector_matrix(X))
    return SegmenterTree(kind="apd", levels=levels, alpha=alpha,
                         num_segments=2**levels, seed=seed, dim=sample.dim,
                         nodes=tuple(nodes))


def _learn_tree(X: np.ndarray, levels: int, alpha: float, direction):
    """Breadth-first recursion; nodes returned in level order."""
    nodes: list[HyperplaneNode] = []
    frontier = [X]
    for _ in range(levels):
        next_frontier = []
        for part in frontier:
            if part.shape[0] < 2:
                raise DataError("node sample too small to split")
            h = direction(part)
            proj = part @ h
            split, lo, hi = _fractile_cuts(proj, alpha)
            nodes.append(HyperplaneNode(h=h, split=split, lo=lo, hi=hi))
            mask = proj < split
            next_frontier.append(part[mask])
            next_frontier.append(part[~mask])
        frontier = next_frontier
    return nodes


def random_segmenter(num_segments: int, seed: int = 0) -> SegmenterTree:
    return SegmenterTree(kind="random", levels=0, alpha=0.0,
                         num_segments=num_segments, seed=seed)


# ---------------------------------------------------------------------------
# principal directions
# ---------------------------------------------------------------------------


def _power_iterate(G: np.ndarray, start: np.ndarray):
    """Leading eigenvector of the symmetric PSD matrix G by power iteration."""
    v = start / np.linalg.norm(start)
    for _ in range(_POWER_MAX_ITERS):
        w = G @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            raise DataError("power iteration collapsed (rank-deficient input)")
        w /= norm
        # angle between successive iterates, sign-insensitive
        residual = math.sqrt(max(0.0, 1.0 - min(1.0, abs(float(np.dot(w, v)))) ** 2))
        v = w
        if residual < _POWER_TOL:
            return v, norm
    raise DataError(
        f"power iteration did not converge (residual {residual:.3e} "
        f"after {_POWER_MAX_ITERS} iterations)")


def _normalize_sign(v: np.ndarray) -> np.ndarray:
    # components below the iteration tolerance are structural zeros
    for x in v:
        if abs(x) > _POWER_TOL:
            return v if x > 0.0 else -v
    return v


def _second_singular_vector_matrix(X: np.ndarray) -> np.ndarray:
    n, d = X.shape
    if n < 2 or d < 2:
        raise DataError("need at least 2 rows and 2 dimensions")
    G = X.T @ X  # d x d Gram form; no centering
    start = np.random.default_rng(_POWER_SEED).standard_normal(d)
    v1, lam1 = _power_iterate(G, start)
    G2 = G - lam1 * np.outer(v1, v1)  # deflate the top component
    v2, lam2 = _power_iterate(G2, start)
    if lam2 <= lam1 * 1e-12:
        raise DataError("sample has rank < 2; no second principal direction")
    return _normalize_sign(v2)


def second_singular_vector(sample: Dataset) -> np.ndarray:
    """Unit right singular vector of the sample matrix for its second-largest
    singular value (power iteration with top-vector deflation)."""
    return _second_singular_vector_matrix(sample.vectors.astype(np.float64))


# ---------------------------------------------------------------------------
# routing
# ---------------------------------------------------------------------------


def route_document(tree: SegmenterTree, x, key: bytes | None = None) -> int:
    """Segment id a document lands in (exactly one)."""
    if tree.kind == "random":
        if key is None:
            raise DataError("random segmenter routing needs a document key")
        from .partition import segment_hash  # local import avoids a cycle

        return segment_hash(key, tree.num_segments)
    x = tree._check_dim(x)
    node = 0
    seg = 0
    for _ in range(tree.levels):
        hn = tree.nodes[node]
        if float(x @ hn.h) < hn.split:
            node = 2 * node + 1
            seg = 2 * seg
        else:
            node = 2 * node + 2
            seg = 2 * seg + 1
    return seg


def route_documents(tree: SegmenterTree, X: np.ndarray) -> np.ndarray:
    """Vectorized route_document for hyperplane trees over rows of X."""
    if tree.kind == "random":
        raise DataError("random segmenter has no vectorized document routing")
    X = np.asarray(X, dtype=np.float64)
    segs = np.zeros(X.shape[0], dtype=np.int64)
    node_of = np.zeros(X.shape[0], dtype=np.int64)
    for _ in range(tree.levels):
        proj = np.empty(X.shape[0], dtype=np.float64)
        right = np.empty(X.shape[0], dtype=bool)
        for node in np.unique(node_of):
            hn = tree.nodes[node]
            sel = node_of == node
            proj[sel] = X[sel] @ hn.h
            right[sel] = proj[sel] >= hn.split
        segs = 2 * segs + right
        node_of = 2 * node_of + 1 + right
    return segs


def route_query(tree: SegmenterTree, q) -> list[int]:
    """Segment ids a query must visit (virtual spill); sorted, non-empty."""
    if tree.kind == "random":
        return list(range(tree.num_segments))
    q = tree._check_dim(q)
    return sorted(_spill_descend(tree, q))


def route_document_spilled(tree: SegmenterTree, x) -> list[int]:
    """Segment ids a document lands in under physical spill; sorted."""
    if tree.kind == "random":
        raise DataError("random segmenter does not support physical spill")
    x = tree._check_dim(x)
    return sorted(_spill_descend(tree, x))


def _spill_descend(tree: SegmenterTree, x: np.ndarray) -> set[int]:
    out: set[int] = set()

    def walk(node: int, seg: int, depth: int) -> None:
        if depth == tree.levels:
            out.add(seg)
            return
        hn = tree.nodes[node]
        p = float(x @ hn.h)
        if p < hn.lo:
            walk(2 * node + 1, 2 * seg, depth + 1)
        elif p > hn.hi:
            walk(2 * node + 2, 2 * seg + 1, depth + 1)
        else:
            walk(2 * node + 1, 2 * seg, depth + 1)
            walk(2 * node + 2, 2 * seg + 1, depth + 1)

    walk(0, 0, 0)
    return out


# ---------------------------------------------------------------------------
# failure bounds
# ---------------------------------------------------------------------------


def potential(q, dataset: Dataset, k: int, m: float) -> float:
    """Potential of a query against a dataset: the sum over points beyond the
    k nearest of (mean distance to the k nearest) / (distance to the point),
    scaled by 1/m."""
    n = len(dataset)
    if n <= k:
        raise DataError(f"need more than k={k} points, have {n}")
    if m <= 0:
        raise DataError("m must be positive")
    from .core import distances_to

    d = np.sort(distances_to(q, dataset.vectors))
    num = float(np.mean(d[:k]))
    if num == 0.0:
        return 0.0
    return float(np.sum(num / d[k:])) / m


def failure_bound(q, dataset: Dataset, k: int, alpha: float, levels: int) -> float:
    """Upper bound on the probability that a depth-`levels` spill tree misses
    one of the true k nearest neighbors of q. May exceed 1 (vacuous)."""
    if not 0.0 < alpha < 0.5:
        raise DataError("alpha must be in (0, 0.5)")
    if levels < 0:
        raise DataError("levels must be non-negative")
    n = len(dataset)
    total = 0.0
    for i in range(levels + 1):
        total += potential(q, dataset, k, (0.5 + alpha) ** i * n)
    if k == 1:
        return total / (2.0 * alpha)
    return total * k / alpha


def failure_bound_estimate(n: int, alpha: float, levels: int) -> float:
    """Data-free failure estimate: sum of 1 / (2 (0.5+alpha)^i n) over
    i = 1..levels."""
    if n < 1:
        raise DataError("n must be positive")
    if levels < 1:
        raise DataError("levels must be >= 1")
    return sum(1.0 / (2.0 * (0.5 + alpha) ** i * n)
               for i in range(1, levels + 1))


# ---------------------------------------------------------------------------
# persistence (JSON; float repr round-trips exactly)
# ---------------------------------------------------------------------------


def segmenter_to_json(tree: SegmenterTree) -> str:
    doc = {
        "version": SEGMENTER_FORMAT_VERSION,
        "kind": tree.kind,
        "levels": tree.levels,
        "alpha": tree.alpha,
        "seed": tree.seed,
        "numSegments": tree.num_segments,
        "dim": tree.dim,
        "nodes": [
            {"h": [float(v) for v in n.h], "split": n.split,
             "lo": n.lo, "hi": n.hi}
            for n in tree.nodes
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def segmenter_from_json(text: str) -> SegmenterTree:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"malformed segmenter payload: {e}") from None
    if not isinstance(doc, dict):
        raise DataError("malformed segmenter payload")
    if doc.get("version") != SEGMENTER_FORMAT_VERSION:
        raise DataError(f"unsupported segmenter version {doc.get('version')!r}")
    try:
        nodes = tuple(
            HyperplaneNode(h=np.array(n["h"], dtype=np.float64),
                           split=n["split"], lo=n["lo"], hi=n["hi"])
            for n in doc["nodes"]
        )
        return SegmenterTree(kind=doc["kind"], levels=doc["levels"],
                             alpha=doc["alpha"], num_segments=doc["numSegments"],
                             seed=doc["seed"], dim=doc.get("dim"), nodes=nodes)
    except (KeyError, TypeError) as e:
        raise DataError(f"malformed segmenter payload: {e}") from None


def save_segmenter(tree: SegmenterTree, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(segmenter_to_json(tree))


def load_segmenter(path) -> SegmenterTree:
    with open(path, encoding="utf-8") as f:
        return segmenter_from_json(f.read())
