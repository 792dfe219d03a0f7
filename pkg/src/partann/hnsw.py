"""Single-segment HNSW graph: layered insertion and greedy layered search.

Insertion is strictly sequential so a fixed seed plus a fixed insertion order
yields a byte-identical serialized index; parallelism lives one level up,
across segments. Vectors are stored at float32 precision but all distances
are computed in float64, and every heap breaks ties by ascending doc id.

The graph lives in flat numpy arrays (layer-0 adjacency plus a 3-d array for
the sparse upper layers) so the search and insert inner loops can run as
numba kernels; fastmath stays off to keep results bit-reproducible.
"""

from __future__ import annotations

import math
import random
import struct
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import DataError, Distance, Neighbor

MAGIC = b"LANN"
VERSION = 1
NO_ENTRY = 0xFFFFFFFFFFFFFFFF

_DIST_CODE = {Distance.EUCLIDEAN: 0, Distance.COSINE: 1}
_CODE_DIST = {v: k for k, v in _DIST_CODE.items()}


@dataclass(frozen=True)
class HnswParams:
    M: int = 16
    M0: int | None = None  # defaults to 2*M
    ef_construction: int = 200
    ef_search: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.M0 is None:
            object.__setattr__(self, "M0", 2 * self.M)
        if self.M < 2:
            raise DataError("M must be >= 2")
        if self.M0 < self.M:
            raise DataError("M0 must be >= M")
        if self.ef_construction < self.M:
            raise DataError("ef_construction must be >= M")
        if self.ef_search < 1:
            raise DataError("ef_search must be >= 1")

    @property
    def ml(self) -> float:
        return 1.0 / math.log(self.M)


def level_for_u(u: float, ml: float) -> int:
    """Level for a uniform draw u in (0, 1]: floor(-ln(u) * ml)."""
    return int(-math.log(u) * ml)


def assign_level(rng: random.Random, ml: float) -> int:
    # random() yields [0, 1); the formula wants u in (0, 1]
    return level_for_u(1.0 - rng.random(), ml)


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _pair_less(d1, i1, d2, i2):
    if d1 < d2:
        return True
    if d1 > d2:
        return False
    return i1 < i2


@njit(cache=True, inline="always")
def _dist_vec(vecs, norms, i, q, qn, kind):
    dim = vecs.shape[1]
    s = 0.0
    if kind == 0:
        for t in range(dim):
            df = vecs[i, t] - q[t]
            s += df * df
        return np.sqrt(s)
    for t in range(dim):
        s += vecs[i, t] * q[t]
    return 1.0 - s / (norms[i] * qn)


@njit(cache=True, inline="always")
def _dist_pair(vecs, norms, i, j, kind):
    return _dist_vec(vecs, norms, i, vecs[j], norms[j], kind)


@njit(cache=True)
def _heap_push(hd, hid, hx, n, d, did, idx, is_max):
    hd[n] = d
    hid[n] = did
    hx[n] = idx
    c = n
    while c > 0:
        p = (c - 1) >> 1
        if is_max:
            up = _pair_less(hd[p], hid[p], hd[c], hid[c])
        else:
            up = _pair_less(hd[c], hid[c], hd[p], hid[p])
        if not up:
            break
        hd[p], hd[c] = hd[c], hd[p]
        hid[p], hid[c] = hid[c], hid[p]
        hx[p], hx[c] = hx[c], hx[p]
        c = p
    return n + 1


@njit(cache=True)
def _heap_pop(hd, hid, hx, n, is_max):
    n -= 1
    hd[0], hid[0], hx[0] = hd[n], hid[n], hx[n]
    c = 0
    while True:
        l = 2 * c + 1
        if l >= n:
            break
        r = l + 1
        best = l
        if r < n:
            if is_max:
                if _pair_less(hd[l], hid[l], hd[r], hid[r]):
                    best = r
            else:
                if _pair_less(hd[r], hid[r], hd[l], hid[l]):
                    best = r
        if is_max:
            move = _pair_less(hd[c], hid[c], hd[best], hid[best])
        else:
            move = _pair_less(hd[best], hid[best], hd[c], hid[c])
        if not move:
            break
        hd[best], hd[c] = hd[c], hd[best]
        hid[best], hid[c] = hid[c], hid[best]
        hx[best], hx[c] = hx[c], hx[best]
        c = best
    return n


@njit(cache=True)
def _greedy(vecs, norms, ids, adj, cnt, q, qn, kind, cur, cur_d):
    while True:
        best = cur
        best_d = cur_d
        best_id = ids[cur]
        for s in range(cnt[cur]):
            j = adj[cur, s]
            dj = _dist_vec(vecs, norms, j, q, qn, kind)
            if _pair_less(dj, ids[j], best_d, best_id):
                best = j
                best_d = dj
                best_id = ids[j]
        if best == cur:
            return cur, cur_d
        cur = best
        cur_d = best_d


@njit(cache=True)
def _search_layer(vecs, norms, ids, adj, cnt, q, qn, kind, visited, stamp,
                  ep_x, ep_d, n_ep, ef, cd, cid, cx, rd, rid, rx,
                  out_d, out_x):
    nc = 0
    nr = 0
    for t in range(n_ep):
        i = ep_x[t]
        if visited[i] == stamp:
            continue
        visited[i] = stamp
        d = ep_d[t]
        did = ids[i]
        nc = _heap_push(cd, cid, cx, nc, d, did, i, False)
        if nr < ef:
            nr = _heap_push(rd, rid, rx, nr, d, did, i, True)
        elif _pair_less(d, did, rd[0], rid[0]):
            nr = _heap_pop(rd, rid, rx, nr, True)
            nr = _heap_push(rd, rid, rx, nr, d, did, i, True)
    while nc > 0:
        d = cd[0]
        did = cid[0]
        i = cx[0]
        if nr >= ef and _pair_less(rd[0], rid[0], d, did):
            break
        nc = _heap_pop(cd, cid, cx, nc, False)
        for s in range(cnt[i]):
            j = adj[i, s]
            if visited[j] == stamp:
                continue
            visited[j] = stamp
            dj = _dist_vec(vecs, norms, j, q, qn, kind)
            jid = ids[j]
            if nr < ef:
                nr = _heap_push(rd, rid, rx, nr, dj, jid, j, True)
                nc = _heap_push(cd, cid, cx, nc, dj, jid, j, False)
            elif _pair_less(dj, jid, rd[0], rid[0]):
                nr = _heap_pop(rd, rid, rx, nr, True)
                nr = _heap_push(rd, rid, rx, nr, dj, jid, j, True)
                nc = _heap_push(cd, cid, cx, nc, dj, jid, j, False)
    k = nr
    for t in range(k - 1, -1, -1):
        out_d[t] = rd[0]
        out_x[t] = rx[0]
        nr = _heap_pop(rd, rid, rx, nr, True)
    return k


@njit(cache=True)
def _select_heuristic(vecs, norms, kind, cand_d, cand_x, ncand, m, sel, disc):
    """Keep candidates closer to the target than to any kept neighbor;
    pruned entries are re-added closest-first if fewer than m survive."""
    nsel = 0
    ndisc = 0
    for t in range(ncand):
        if nsel == m:
            break
        i = cand_x[t]
        d = cand_d[t]
        keep = True
        for s in range(nsel):
            if _dist_pair(vecs, norms, i, sel[s], kind) < d:
                keep = False
                break
        if keep:
            sel[nsel] = i
            nsel += 1
        else:
            disc[ndisc] = i
            ndisc += 1
    for t in range(ndisc):
        if nsel == m:
            break
        sel[nsel] = disc[t]
        nsel += 1
    return nsel


@njit(cache=True)
def _prune(vecs, norms, ids, adj, cnt, node, cap, kind, tmp_d, tmp_x, sel, disc):
    deg = cnt[node]
    for s in range(deg):
        j = adj[node, s]
        tmp_d[s] = _dist_pair(vecs, norms, node, j, kind)
        tmp_x[s] = j
    # insertion sort by (distance, doc id); deg is at most cap + 1
    for a in range(1, deg):
        d = tmp_d[a]
        x = tmp_x[a]
        did = ids[x]
        b = a - 1
        while b >= 0 and _pair_less(d, did, tmp_d[b], ids[tmp_x[b]]):
            tmp_d[b + 1] = tmp_d[b]
            tmp_x[b + 1] = tmp_x[b]
            b -= 1
        tmp_d[b + 1] = d
        tmp_x[b + 1] = x
    nsel = _select_heuristic(vecs, norms, kind, tmp_d, tmp_x, deg, cap, sel, disc)
    for s in range(nsel):
        adj[node, s] = sel[s]
    cnt[node] = nsel


@njit(cache=True)
def _insert_point(vecs, norms, ids, adj0, cnt0, adjU, cntU, new, level,
                  entry, max_level, M, M0, efc, kind, visited, stamp,
                  ep_x, ep_d, cd, cid, cx, rd, rid, rx, out_d, out_x,
                  sel, disc, tmp_d, tmp_x):
    q = vecs[new]
    qn = norms[new]
    cur = entry
    cur_d = _dist_vec(vecs, norms, cur, q, qn, kind)
    for layer in range(max_level, level, -1):
        if layer == 0:
            cur, cur_d = _greedy(vecs, norms, ids, adj0, cnt0, q, qn, kind,
                                 cur, cur_d)
        else:
            cur, cur_d = _greedy(vecs, norms, ids, adjU[layer - 1],
                                 cntU[layer - 1], q, qn, kind, cur, cur_d)
    n_ep = 1
    ep_x[0] = cur
    ep_d[0] = cur_d
    top = min(level, max_level)
    for layer in range(top, -1, -1):
        if layer == 0:
            adj = adj0
            cnt = cnt0
            cap = M0
        else:
            adj = adjU[layer - 1]
            cnt = cntU[layer - 1]
            cap = M
        stamp += 1
        k = _search_layer(vecs, norms, ids, adj, cnt, q, qn, kind, visited,
                          stamp, ep_x, ep_d, n_ep, efc, cd, cid, cx,
                          rd, rid, rx, out_d, out_x)
        nsel = _select_heuristic(vecs, norms, kind, out_d, out_x, k, M,
                                 sel, disc)
        for s in range(nsel):
            adj[new, s] = sel[s]
        cnt[new] = nsel
        for s in range(nsel):
            j = sel[s]
            dj = cnt[j]
            adj[j, dj] = new
            cnt[j] = dj + 1
            if dj + 1 > cap:
                _prune(vecs, norms, ids, adj, cnt, j, cap, kind,
                       tmp_d, tmp_x, sel[nsel:], disc)
        for t in range(k):
            ep_x[t] = out_x[t]
            ep_d[t] = out_d[t]
        n_ep = k
    return stamp


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------


class HnswIndex:
    def __init__(self, dim: int, params: HnswParams | None = None,
                 distance_fn: Distance = Distance.EUCLIDEAN):
        if dim < 1:
            raise DataError("dim must be positive")
        self.dim = dim
        self.params = params or HnswParams()
        self.distance_fn = distance_fn
        self._kind = _DIST_CODE[distance_fn]
        self._rng = random.Random(self.params.seed)
        self._n = 0
        self._entry = -1
        self._max_level = 0
        self._visit_stamp = 0
        self._alloc(16)
        self._adjU = np.zeros((0, 16, self.params.M + 1), dtype=np.int32)
        self._cntU = np.zeros((0, 16), dtype=np.int32)

    def _alloc(self, cap: int) -> None:
        p = self.params
        self._vecs = np.empty((cap, self.dim), dtype=np.float64)
        self._norms = np.empty(cap, dtype=np.float64)
        self._ids = np.empty(cap, dtype=np.uint64)
        self._levels = np.empty(cap, dtype=np.int32)
        self._adj0 = np.empty((cap, p.M0 + 1), dtype=np.int32)
        self._cnt0 = np.zeros(cap, dtype=np.int32)
        self._visited = np.zeros(cap, dtype=np.int64)
        self._id_to_idx: dict[int, int] = {}
        scratch = cap + 8
        self._ep_d = np.empty(scratch, dtype=np.float64)
        self._ep_x = np.empty(scratch, dtype=np.int32)
        self._cd = np.empty(scratch, dtype=np.float64)
        self._cid = np.empty(scratch, dtype=np.uint64)
        self._cx = np.empty(scratch, dtype=np.int32)
        self._rd = np.empty(scratch, dtype=np.float64)
        self._rid = np.empty(scratch, dtype=np.uint64)
        self._rx = np.empty(scratch, dtype=np.int32)
        self._out_d = np.empty(scratch, dtype=np.float64)
        self._out_x = np.empty(scratch, dtype=np.int32)
        self._sel = np.empty(2 * (p.M0 + 2), dtype=np.int32)
        self._disc = np.empty(scratch, dtype=np.int32)
        self._tmp_d = np.empty(p.M0 + 2, dtype=np.float64)
        self._tmp_x = np.empty(p.M0 + 2, dtype=np.int32)

    def _grow(self, n: int) -> None:
        cap = self._vecs.shape[0]
        if n <= cap:
            return
        new_cap = max(n, cap * 2)

        def bigger(a, shape):
            out = np.zeros(shape, dtype=a.dtype)
            out[tuple(slice(0, s) for s in a.shape)] = a
            return out

        self._vecs = bigger(self._vecs, (new_cap, self.dim))
        self._norms = bigger(self._norms, (new_cap,))
        self._ids = bigger(self._ids, (new_cap,))
        self._levels = bigger(self._levels, (new_cap,))
        self._adj0 = bigger(self._adj0, (new_cap, self._adj0.shape[1]))
        self._cnt0 = bigger(self._cnt0, (new_cap,))
        self._visited = bigger(self._visited, (new_cap,))
        if self._adjU.shape[0]:
            self._adjU = bigger(
                self._adjU, (self._adjU.shape[0], new_cap, self._adjU.shape[2]))
            self._cntU = bigger(self._cntU, (self._cntU.shape[0], new_cap))
        scratch = new_cap + 8
        for name in ("_ep_d", "_cd", "_rd", "_out_d"):
            setattr(self, name, np.empty(scratch, dtype=np.float64))
        for name in ("_ep_x", "_cx", "_rx", "_out_x", "_disc"):
            setattr(self, name, np.empty(scratch, dtype=np.int32))
        for name in ("_cid", "_rid"):
            setattr(self, name, np.empty(scratch, dtype=np.uint64))

    def _grow_layers(self, levels: int) -> None:
        have = self._adjU.shape[0]
        if levels <= have:
            return
        cap = self._vecs.shape[0]
        adjU = np.zeros((levels, cap, self.params.M + 1), dtype=np.int32)
        cntU = np.zeros((levels, cap), dtype=np.int32)
        if have:
            adjU[:have, : self._adjU.shape[1]] = self._adjU
            cntU[:have, : self._cntU.shape[1]] = self._cntU
        self._adjU = adjU
        self._cntU = cntU

    def __len__(self) -> int:
        return self._n

    @property
    def doc_ids(self) -> np.ndarray:
        return self._ids[: self._n].copy()

    @property
    def vectors(self) -> np.ndarray:
        """Stored vectors at float32 precision, in insertion order."""
        return self._vecs[: self._n].astype(np.float32)

    # -- insertion ----------------------------------------------------------

    def insert(self, doc_id: int, vector) -> None:
        doc_id = int(doc_id)
        if doc_id in self._id_to_idx:
            raise DataError(f"duplicate doc id {doc_id}")
        if not 0 <= doc_id < 2**64:
            raise DataError("doc id out of u64 range")
        v32 = np.asarray(vector, dtype=np.float32)
        if v32.shape != (self.dim,):
            raise DataError(f"vector shape {v32.shape} does not match dim {self.dim}")
        if not np.all(np.isfinite(v32)):
            raise DataError("non-finite vector component")
        v64 = v32.astype(np.float64)
        norm = math.sqrt(float(np.dot(v64, v64)))
        if self.distance_fn == Distance.COSINE and norm == 0.0:
            raise DataError("zero-norm vector rejected under cosine distance")

        idx = self._n
        self._grow(idx + 1)
        level = assign_level(self._rng, self.params.ml)
        if level > 0:
            self._grow_layers(level)
        self._vecs[idx] = v64
        self._norms[idx] = norm
        self._ids[idx] = doc_id
        self._levels[idx] = level
        self._cnt0[idx] = 0
        for lv in range(self._adjU.shape[0]):
            self._cntU[lv, idx] = 0
        self._id_to_idx[doc_id] = idx
        self._n = idx + 1

        if self._entry < 0:
            self._entry = idx
            self._max_level = level
            return
        self._visit_stamp = _insert_point(
            self._vecs, self._norms, self._ids, self._adj0, self._cnt0,
            self._adjU, self._cntU, idx, level, self._entry, self._max_level,
            self.params.M, self.params.M0, self.params.ef_construction,
            self._kind, self._visited, self._visit_stamp,
            self._ep_x, self._ep_d, self._cd, self._cid, self._cx,
            self._rd, self._rid, self._rx, self._out_d, self._out_x,
            self._sel, self._disc, self._tmp_d, self._tmp_x)
        if level > self._max_level:
            self._entry = idx
            self._max_level = level

    # -- search -------------------------------------------------------------

    def search(self, q, n: int, ef: int | None = None):
        """Return the n approximate nearest neighbors of q."""
        if ef is None:
            ef = self.params.ef_search
        if n < 1:
            raise DataError("n must be positive")
        if ef < n:
            raise DataError(f"ef ({ef}) must be >= n ({n})")
        if self._n == 0:
            return []
        q64 = np.asarray(q, dtype=np.float64)
        if q64.shape != (self.dim,):
            raise DataError(f"query shape {q64.shape} does not match dim {self.dim}")
        qn = math.sqrt(float(np.dot(q64, q64)))
        if self.distance_fn == Distance.COSINE and qn == 0.0:
            raise DataError("cosine distance undefined for zero-norm query")
        cur = self._entry
        cur_d = _dist_vec(self._vecs, self._norms, cur, q64, qn, self._kind)
        for layer in range(self._max_level, 0, -1):
            cur, cur_d = _greedy(self._vecs, self._norms, self._ids,
                                 self._adjU[layer - 1], self._cntU[layer - 1],
                                 q64, qn, self._kind, cur, cur_d)
        self._visit_stamp += 1
        self._ep_x[0] = cur
        self._ep_d[0] = cur_d
        k = _search_layer(self._vecs, self._norms, self._ids, self._adj0,
                          self._cnt0, q64, qn, self._kind, self._visited,
                          self._visit_stamp, self._ep_x, self._ep_d, 1, ef,
                          self._cd, self._cid, self._cx, self._rd, self._rid,
                          self._rx, self._out_d, self._out_x)
        k = min(k, n)
        return [Neighbor(int(self._ids[self._out_x[t]]), float(self._out_d[t]))
                for t in range(k)]

    # -- validation (used by tests) -----------------------------------------

    def neighbors_of(self, idx: int, layer: int) -> list[int]:
        if layer == 0:
            return self._adj0[idx, : self._cnt0[idx]].tolist()
        return self._adjU[layer - 1, idx, : self._cntU[layer - 1, idx]].tolist()

    def validate(self) -> None:
        n = self._n
        if n == 0:
            assert self._entry == -1
            return
        assert 0 <= self._entry < n
        assert self._levels[self._entry] == self._max_level
        for i in range(n):
            lv = int(self._levels[i])
            assert lv <= self._max_level
            for layer in range(lv + 1):
                nbrs = self.neighbors_of(i, layer)
                cap = self.params.M0 if layer == 0 else self.params.M
                assert len(nbrs) <= cap, f"node {i} layer {layer} degree {len(nbrs)}"
                assert len(set(nbrs)) == len(nbrs)
                for j in nbrs:
                    assert 0 <= j < n and j != i
                    assert self._levels[j] >= layer
            for layer in range(lv + 1, self._adjU.shape[0] + 1):
                assert not self.neighbors_of(i, layer)

    # -- serialization ------------------------------------------------------

    def serialize(self) -> bytes:
        out = bytearray()
        out += MAGIC
        out += struct.pack("<HBIQ", VERSION, self._kind, self.dim, self._n)
        p = self.params
        out += struct.pack("<IIIIdQ", p.M, p.M0, p.ef_construction,
                           p.ef_search, p.ml, p.seed)
        entry_id = int(self._ids[self._entry]) if self._entry >= 0 else NO_ENTRY
        out += struct.pack("<QI", entry_id, self._max_level)
        ids = self._ids
        for i in range(self._n):
            lv = int(self._levels[i])
            out += struct.pack("<QI", int(ids[i]), lv)
            for layer in range(lv + 1):
                if layer == 0:
                    nb = self._adj0[i, : self._cnt0[i]]
                else:
                    nb = self._adjU[layer - 1, i, : self._cntU[layer - 1, i]]
                out += struct.pack("<I", nb.shape[0])
                out += ids[nb].astype("<u8").tobytes()
        out += self._vecs[: self._n].astype("<f4").tobytes()
        return bytes(out)

    @classmethod
    def deserialize(cls, data: bytes) -> "HnswIndex":
        mv = memoryview(data)
        try:
            if len(mv) < 4 or bytes(mv[:4]) != MAGIC:
                raise DataError("bad magic")
            off = 4
            version, dist_code, dim, count = struct.unpack_from("<HBIQ", mv, off)
            off += struct.calcsize("<HBIQ")
            if version != VERSION:
                raise DataError(f"unsupported version {version}")
            if dist_code not in _CODE_DIST:
                raise DataError(f"unknown distance code {dist_code}")
            M, M0, ef_c, ef_s, _ml, seed = struct.unpack_from("<IIIIdQ", mv, off)
            off += struct.calcsize("<IIIIdQ")
            entry_id, max_level = struct.unpack_from("<QI", mv, off)
            off += struct.calcsize("<QI")

            idx = cls(dim, HnswParams(M=M, M0=M0, ef_construction=ef_c,
                                      ef_search=ef_s, seed=seed),
                      _CODE_DIST[dist_code])
            idx._alloc(max(count, 16))
            idx._grow_layers(max_level)
            nbr_ids = []
            for i in range(count):
                did, level = struct.unpack_from("<QI", mv, off)
                off += 12
                if level > max_level:
                    raise DataError("node level above index max level")
                idx._ids[i] = did
                idx._levels[i] = level
                idx._id_to_idx[int(did)] = i
                layers = []
                for _ in range(level + 1):
                    (deg,) = struct.unpack_from("<I", mv, off)
                    off += 4
                    if off + 8 * deg > len(mv):
                        raise DataError("truncated index payload")
                    layers.append(np.frombuffer(mv, dtype="<u8", count=deg,
                                                offset=off))
                    off += 8 * deg
                nbr_ids.append(layers)
            if len(data) - off != count * dim * 4:
                raise DataError("truncated or oversized index payload")
            vecs32 = np.frombuffer(mv, dtype="<f4", count=count * dim,
                                   offset=off).reshape(count, dim)
        except struct.error as e:
            raise DataError(f"truncated index payload: {e}") from None

        idx._n = count
        idx._vecs[:count] = vecs32.astype(np.float64)
        idx._norms[:count] = np.sqrt(
            np.einsum("ij,ij->i", idx._vecs[:count], idx._vecs[:count]))
        id_map = idx._id_to_idx
        for i, layers in enumerate(nbr_ids):
            for layer, nb in enumerate(layers):
                try:
                    mapped = [id_map[int(d)] for d in nb]
                except KeyError:
                    raise DataError("neighbor references unknown doc id") from None
                cap = (idx.params.M0 if layer == 0 else idx.params.M)
                if len(mapped) > cap:
                    raise DataError("stored degree exceeds layer cap")
                if layer == 0:
                    idx._adj0[i, : len(mapped)] = mapped
                    idx._cnt0[i] = len(mapped)
                else:
                    idx._adjU[layer - 1, i, : len(mapped)] = mapped
                    idx._cntU[layer - 1, i] = len(mapped)
        idx._max_level = max_level
        if entry_id == NO_ENTRY:
            if count:
                raise DataError("missing entry point in non-empty index")
            idx._entry = -1
        else:
            if int(entry_id) not in id_map:
                raise DataError("entry point not among stored nodes")
            idx._entry = id_map[int(entry_id)]
        return idx


def build_index(doc_ids, vectors, params: HnswParams,
                distance_fn: Distance = Distance.EUCLIDEAN) -> HnswIndex:
    """Build an index over parallel (doc_ids, vectors) arrays, in order."""
    vecs = np.asarray(vectors, dtype=np.float32)
    if vecs.ndim != 2:
        raise DataError("expected a 2-d array of vectors")
    index = HnswIndex(vecs.shape[1], params, distance_fn)
    for did, v in zip(doc_ids, vecs):
        index.insert(int(did), v)
    return index
