"""Hierarchical navigable small-world graph over raw inner-product similarity.

Layer 0 adjacency is a dense ``(n, 2M)`` table. Node ``v`` with level ``L``
owns rows ``upper_offset[v] .. upper_offset[v] + L - 1`` of the ``(U, M)``
upper table, one row per layer 1..L. Unused slots hold -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

MAX_LEVEL = 16


@dataclass
class Graph:
    entry: int
    max_level: int
    levels: np.ndarray  # int32 (n,)
    adj0: np.ndarray  # int32 (n, M0)
    deg0: np.ndarray  # int32 (n,)
    upper_offset: np.ndarray  # int64 (n,)
    upper_adj: np.ndarray  # int32 (U, M)
    upper_deg: np.ndarray  # int32 (U,)

    def arrays(self):
        return (self.adj0, self.deg0, self.upper_adj, self.upper_deg, self.upper_offset)


@njit(cache=True, fastmath=True)
def _dot(vectors, a, q):
    s = vectors.dtype.type(0)
    for t in range(q.shape[0]):
        s += vectors[a, t] * q[t]
    return s


@njit(cache=True)
def _push(keys, vals, size, key, val):
    # binary min-heap on keys
    pos = size
    keys[pos] = key
    vals[pos] = val
    while pos > 0:
        parent = (pos - 1) >> 1
        if keys[parent] <= keys[pos]:
            break
        keys[parent], keys[pos] = keys[pos], keys[parent]
        vals[parent], vals[pos] = vals[pos], vals[parent]
        pos = parent
    return size + 1


@njit(cache=True)
def _pop(keys, vals, size):
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and keys[child + 1] < keys[child]:
            child += 1
        if keys[pos] <= keys[child]:
            break
        keys[child], keys[pos] = keys[pos], keys[child]
        vals[child], vals[pos] = vals[pos], vals[child]
        pos = child
    return size


@njit(cache=True)
def _neighbors(node, level, adj0, deg0, upper_adj, upper_deg, upper_offset):
    if level == 0:
        return adj0[node, : deg0[node]]
    row = upper_offset[node] + level - 1
    return upper_adj[row, : upper_deg[row]]


@njit(cache=True)
def _greedy(vectors, q, ep, level, adj0, deg0, upper_adj, upper_deg, upper_offset):
    best = _dot(vectors, ep, q)
    changed = True
    while changed:
        changed = False
        for nb in _neighbors(ep, level, adj0, deg0, upper_adj, upper_deg, upper_offset):
            s = _dot(vectors, nb, q)
            if s > best:
                best = s
                ep = nb
                changed = True
    return ep


@njit(cache=True)
def _search_layer(
    vectors, q, entries, ef, level,
    adj0, deg0, upper_adj, upper_deg, upper_offset,
    visited, tag, cand_k, cand_v, res_k, res_v,
):
    """Beam search; leaves the best ``ef`` hits in the min-heap ``res_k/res_v``, returns its size."""
    nc = 0
    nr = 0
    for e in entries:
        if visited[e] == tag:
            continue
        visited[e] = tag
        s = _dot(vectors, e, q)
        nc = _push(cand_k, cand_v, nc, -s, e)
        if nr < ef:
            nr = _push(res_k, res_v, nr, s, e)
        elif s > res_k[0]:
            nr = _pop(res_k, res_v, nr)
            nr = _push(res_k, res_v, nr, s, e)
    while nc > 0:
        c = cand_v[0]
        if nr >= ef and -cand_k[0] < res_k[0]:
            break
        nc = _pop(cand_k, cand_v, nc)
        for nb in _neighbors(c, level, adj0, deg0, upper_adj, upper_deg, upper_offset):
            if visited[nb] == tag:
                continue
            visited[nb] = tag
            s = _dot(vectors, nb, q)
            if nr < ef or s > res_k[0]:
                nc = _push(cand_k, cand_v, nc, -s, nb)
                if nr < ef:
                    nr = _push(res_k, res_v, nr, s, nb)
                else:
                    nr = _pop(res_k, res_v, nr)
                    nr = _push(res_k, res_v, nr, s, nb)
    return nr


@njit(cache=True)
def _sorted_hits(res_k, res_v, nr):
    keys = res_k[:nr].copy()
    vals = res_v[:nr].copy()
    order = np.argsort(-keys, kind="mergesort")
    return keys[order], vals[order]


@njit(cache=True)
def _select(vectors, anchor_vec, ids, sims, cap):
    """Diversity pruning: walk candidates best-first, keep one only if no kept neighbor is more
    similar to it than ``anchor_vec`` is. Returns indices into ``ids`` (sorted by sim desc)."""
    order = np.argsort(-sims, kind="mergesort")
    kept = np.empty(cap, dtype=np.int64)
    nk = 0
    for t in order:
        if nk >= cap:
            break
        c = ids[t]
        good = True
        for r in range(nk):
            if _dot(vectors, ids[kept[r]], vectors[c]) > sims[t]:
                good = False
                break
        if good:
            kept[nk] = t
            nk += 1
    return kept[:nk]


@njit(cache=True)
def _link(node, new, level, cap, vectors, adj0, deg0, upper_adj, upper_deg, upper_offset):
    """Add edge node -> new; on overflow re-prune the list with the diversity heuristic."""
    if level == 0:
        row_adj = adj0[node]
        deg = deg0[node]
    else:
        r = upper_offset[node] + level - 1
        row_adj = upper_adj[r]
        deg = upper_deg[r]
    if deg < cap:
        row_adj[deg] = new
        deg += 1
    else:
        ids = np.empty(cap + 1, dtype=np.int32)
        sims = np.empty(cap + 1, dtype=np.float64)
        ids[:cap] = row_adj[:cap]
        ids[cap] = new
        for t in range(cap + 1):
            sims[t] = _dot(vectors, ids[t], vectors[node])
        keep = _select(vectors, vectors[node], ids, sims, cap)
        for t in range(keep.shape[0]):
            row_adj[t] = ids[keep[t]]
        for t in range(keep.shape[0], cap):
            row_adj[t] = -1
        deg = keep.shape[0]
    if level == 0:
        deg0[node] = deg
    else:
        upper_deg[upper_offset[node] + level - 1] = deg


@njit(cache=True)
def _build(vectors, levels, M, M0, efc):
    n = vectors.shape[0]
    upper_offset = np.zeros(n, dtype=np.int64)
    total = 0
    for v in range(n):
        upper_offset[v] = total
        total += levels[v]
    upper_adj = np.full((max(total, 1), M), -1, dtype=np.int32)
    upper_deg = np.zeros(max(total, 1), dtype=np.int32)
    adj0 = np.full((n, M0), -1, dtype=np.int32)
    deg0 = np.zeros(n, dtype=np.int32)

    visited = np.zeros(n, dtype=np.int32)
    cand_k = np.empty(n, dtype=np.float64)
    cand_v = np.empty(n, dtype=np.int32)
    res_k = np.empty(efc + 1, dtype=np.float64)
    res_v = np.empty(efc + 1, dtype=np.int32)
    tag = 0

    entry = 0
    max_level = levels[0]
    for v in range(1, n):
        q = vectors[v]
        lv = levels[v]
        ep = entry
        for lc in range(max_level, lv, -1):
            ep = _greedy(vectors, q, ep, lc, adj0, deg0, upper_adj, upper_deg, upper_offset)
        entries = np.array([ep], dtype=np.int32)
        for lc in range(min(lv, max_level), -1, -1):
            tag += 1
            nr = _search_layer(
                vectors, q, entries, efc, lc,
                adj0, deg0, upper_adj, upper_deg, upper_offset,
                visited, tag, cand_k, cand_v, res_k, res_v,
            )
            sims, hits = _sorted_hits(res_k, res_v, nr)
            cap = M0 if lc == 0 else M
            chosen = hits[_select(vectors, q, hits, sims, M)]
            for nb in chosen:
                _link(v, nb, lc, cap, vectors, adj0, deg0, upper_adj, upper_deg, upper_offset)
                _link(nb, v, lc, cap, vectors, adj0, deg0, upper_adj, upper_deg, upper_offset)
            entries = hits
        if lv > max_level:
            entry = v
            max_level = lv
    return entry, max_level, adj0, deg0, upper_offset, upper_adj, upper_deg


@njit(cache=True)
def _search(vectors, q, entry, max_level, ef, adj0, deg0, upper_adj, upper_deg, upper_offset,
            visited, tag, cand_k, cand_v, res_k, res_v):
    ep = entry
    for lc in range(max_level, 0, -1):
        ep = _greedy(vectors, q, ep, lc, adj0, deg0, upper_adj, upper_deg, upper_offset)
    entries = np.array([ep], dtype=np.int32)
    nr = _search_layer(
        vectors, q, entries, ef, 0,
        adj0, deg0, upper_adj, upper_deg, upper_offset,
        visited, tag, cand_k, cand_v, res_k, res_v,
    )
    return _sorted_hits(res_k, res_v, nr)


@njit(cache=True)
def _search_batch(vectors, queries, entry, max_level, ef, adj0, deg0, upper_adj, upper_deg, upper_offset):
    n = vectors.shape[0]
    nq = queries.shape[0]
    out_ids = np.full((nq, ef), -1, dtype=np.int32)
    out_sims = np.full((nq, ef), -np.inf, dtype=np.float64)
    visited = np.zeros(n, dtype=np.int32)
    cand_k = np.empty(n, dtype=np.float64)
    cand_v = np.empty(n, dtype=np.int32)
    res_k = np.empty(ef + 1, dtype=np.float64)
    res_v = np.empty(ef + 1, dtype=np.int32)
    for b in range(nq):
        sims, ids = _search(
            vectors, queries[b], entry, max_level, ef,
            adj0, deg0, upper_adj, upper_deg, upper_offset,
            visited, b + 1, cand_k, cand_v, res_k, res_v,
        )
        out_ids[b, : ids.shape[0]] = ids
        out_sims[b, : ids.shape[0]] = sims
    return out_ids, out_sims


def draw_levels(n: int, M: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    mult = 1.0 / math.log(max(M, 2))
    u = rng.random(n)
    levels = np.floor(-np.log1p(-u) * mult).astype(np.int32)
    return np.minimum(levels, MAX_LEVEL)


def _reachable(entry: int, adj0: np.ndarray, reverse: bool = False) -> np.ndarray:
    """Nodes reachable from ``entry`` on layer 0, or that can reach it when ``reverse``."""
    n = len(adj0)
    src = np.repeat(np.arange(n), adj0.shape[1])
    dst = adj0.ravel()
    ok = dst >= 0
    src, dst = src[ok], dst[ok]
    if reverse:
        src, dst = dst, src
    seen = np.zeros(n, dtype=bool)
    seen[entry] = True
    frontier = np.zeros(n, dtype=bool)
    frontier[entry] = True
    while frontier.any():
        nxt = np.zeros(n, dtype=bool)
        nxt[dst[frontier[src]]] = True
        nxt &= ~seen
        seen |= nxt
        frontier = nxt
    return seen


def _add_edge(adj0: np.ndarray, deg0: np.ndarray, indeg: np.ndarray, src: int, dst: int) -> None:
    row = adj0[src]
    if dst in row[: deg0[src]]:
        return
    if deg0[src] < adj0.shape[1]:
        row[deg0[src]] = dst
        deg0[src] += 1
    else:
        # evict the target with the most in-edges so nothing new is orphaned
        slot = int(np.argmax(indeg[row]))
        indeg[row[slot]] -= 1
        row[slot] = dst
    indeg[dst] += 1


def _most_similar(vectors: np.ndarray, v: int, pool: np.ndarray) -> int:
    return int(pool[np.argmax(vectors[pool] @ vectors[v])])


def _connect(vectors: np.ndarray, entry: int, adj0: np.ndarray, deg0: np.ndarray, rounds: int = 100) -> None:
    """Make layer 0 strongly connected so a search can reach every node from any start.

    Diversity pruning under inner product can leave nodes with no in-edges (or no
    way back to the rest of the graph), which no search can ever return. Each such
    node is linked to or from its most similar node on the connected side.
    """
    indeg = np.bincount(adj0[adj0 >= 0], minlength=len(adj0))
    for _ in range(rounds):
        changed = False
        seen = _reachable(entry, adj0)
        for v in np.flatnonzero(~seen):
            # prefer a donor with a free slot so no existing edge is lost
            pool = np.flatnonzero(seen & (deg0 < adj0.shape[1]))
            if not pool.size:
                pool = np.flatnonzero(seen)
            _add_edge(adj0, deg0, indeg, _most_similar(vectors, v, pool), int(v))
            changed = True
        back = _reachable(entry, adj0, reverse=True)
        pool = np.flatnonzero(back)
        for v in np.flatnonzero(~back):
            _add_edge(adj0, deg0, indeg, int(v), _most_similar(vectors, v, pool))
            changed = True
        if not changed:
            return


def build_graph(vectors: np.ndarray, M: int, efc: int, seed: int) -> Graph:
    """Insert rows of ``vectors`` in id order; deterministic for a fixed ``seed``."""
    if M < 2 or efc < 1:
        raise ValueError("need M >= 2 and efc >= 1")
    vectors = np.ascontiguousarray(vectors)
    levels = draw_levels(len(vectors), M, seed)
    entry, max_level, adj0, deg0, off, uadj, udeg = _build(vectors, levels, M, 2 * M, efc)
    _connect(vectors, int(entry), adj0, deg0)
    return Graph(int(entry), int(max_level), levels, adj0, deg0, off, uadj, udeg)


def search_graph(graph: Graph, vectors: np.ndarray, queries: np.ndarray, ef: int):
    """Approximate top-``ef`` by inner product for each query row: ``(ids, sims)``, -1 padded."""
    queries = np.ascontiguousarray(np.atleast_2d(queries), dtype=vectors.dtype)
    ef = max(1, min(ef, len(vectors)))
    return _search_batch(vectors, queries, graph.entry, graph.max_level, ef, *graph.arrays())
