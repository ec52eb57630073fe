"""Query/catalog vectors whose inner products reproduce cohesion scores, plus top-k retrieval.

Symmetric layout: catalog entry ``[q_j q_j p_j p_j]`` against query
``[p_i h_u q_i h_u]``; the dot product equals twice the symmetrized score
minus a per-query constant. Asymmetric layout: ``[q_j q_j]`` against
``[p_i h_u]``, which equals the plain cohesion score minus ``p_i . h_u``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..model import TripleModel
from .graph import Graph, build_graph, search_graph

INDEX_MAGIC = b"T2VI"
INDEX_VERSION = 1
_HEADER = struct.Struct("<4sIBBBQIIIIQ")
BACKENDS = ("exact", "approximate")
LAYOUTS = ("symmetric", "asymmetric")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

Ranked = list[tuple[int, float]]


@dataclass(frozen=True)
class IndexParams:
    M: int = 16
    efc: int = 200
    efs: int = 100
    seed: int = 0
    block_size: int = 8192

    def __post_init__(self):
        if self.M < 2 or self.efc < 1 or self.efs < 1 or self.block_size < 1:
            raise ValueError(f"invalid index parameters {self}")


@dataclass(frozen=True)
class QueryVector:
    values: np.ndarray
    anchor: int
    user: int | None = None


def _check_ids(model: TripleModel, u: int | None, i: int) -> None:
    if u is not None and not 0 <= u < model.m:
        raise IndexError(f"user id {u} out of range [0, {model.m})")
    if not 0 <= i < model.n:
        raise IndexError(f"item id {i} out of range [0, {model.n})")


def make_query_vector(model: TripleModel, u: int, i: int) -> QueryVector:
    _check_ids(model, u, i)
    h = model.H[u]
    return QueryVector(np.concatenate([model.P[i], h, model.Q[i], h]), anchor=i, user=u)


def make_query_vector_anonymous(model: TripleModel, i: int) -> QueryVector:
    """User blocks zeroed: scores reduce to ``p_i . q_j + q_i . p_j``."""
    _check_ids(model, None, i)
    zero = np.zeros(model.d, dtype=model.P.dtype)
    return QueryVector(np.concatenate([model.P[i], zero, model.Q[i], zero]), anchor=i)


def make_query_vector_asymmetric(model: TripleModel, u: int | None, i: int) -> QueryVector:
    """``[p_i h_u]`` for the ``[q_j q_j]`` catalog; ``u=None`` zeroes the user block."""
    _check_ids(model, u, i)
    h = model.H[u] if u is not None else np.zeros(model.d, dtype=model.P.dtype)
    return QueryVector(np.concatenate([model.P[i], h]), anchor=i, user=u)


def catalog_vectors(model: TripleModel, layout: str = "symmetric") -> np.ndarray:
    if layout == "symmetric":
        return np.ascontiguousarray(np.hstack([model.Q, model.Q, model.P, model.P]))
    if layout == "asymmetric":
        return np.ascontiguousarray(np.hstack([model.Q, model.Q]))
    raise ValueError(f"unknown layout {layout!r}")


def _rank(ids: np.ndarray, scores: np.ndarray, k: int) -> Ranked:
    order = np.lexsort((ids, -scores))[:k]
    return [(int(ids[t]), float(scores[t])) for t in order]


@dataclass
class CatalogIndex:
    """Per-item catalog vectors behind an exhaustive or a graph-based MIPS backend."""

    vectors: np.ndarray
    backend: str = "exact"
    layout: str = "symmetric"
    params: IndexParams = field(default_factory=IndexParams)
    graph: Graph | None = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.backend == "approximate" and self.graph is None:
            raise ValueError("approximate backend needs a graph")
        self.vectors.setflags(write=False)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def _scan(self, queries: np.ndarray) -> np.ndarray:
        scores = np.empty((len(queries), self.n), dtype=self.vectors.dtype)
        step = self.params.block_size
        for start in range(0, self.n, step):
            block = self.vectors[start:start + step]
            scores[:, start:start + len(block)] = queries @ block.T
        return scores

    def _exact(self, queries: np.ndarray, k: int, exclude: np.ndarray) -> list[Ranked]:
        scores = self._scan(queries)
        if exclude.size:
            scores[:, exclude] = -np.inf
        out = []
        ids_all = np.arange(self.n)
        keep = self.n - exclude.size
        kk = min(k, keep)
        for row in scores:
            if kk <= 0:
                out.append([])
                continue
            # everything tied with the kth score stays so the id tie-break is exact
            kth = np.partition(row, self.n - kk)[self.n - kk]
            cand = np.flatnonzero(row >= kth)
            out.append(_rank(ids_all[cand], row[cand].astype(np.float64), kk))
        return out

    def _approximate(self, queries: np.ndarray, k: int, exclude: np.ndarray) -> list[Ranked]:
        ef = max(self.params.efs, k + exclude.size)
        ids, _ = search_graph(self.graph, self.vectors, queries, ef)
        banned = set(exclude.tolist())
        out = []
        for q, row in zip(queries, ids):
            cand = np.array([c for c in row[row >= 0] if c not in banned], dtype=np.int64)
            if cand.size == 0:
                out.append([])
                continue
            out.append(_rank(cand, (self.vectors[cand] @ q).astype(np.float64), k))
        return out

    def batch_topk(
        self, queries: Sequence[QueryVector] | np.ndarray, k: int, exclude: Iterable[int] = ()
    ) -> list[Ranked]:
        """Top-``k`` (item, score) lists per query, descending score then ascending id."""
        if k < 1:
            raise ValueError("k must be at least 1")
        mat = np.atleast_2d(
            np.asarray([q.values if isinstance(q, QueryVector) else q for q in queries])
        )
        if mat.size == 0:
            return []
        if mat.shape[1] != self.dim:
            raise ValueError(f"query dimension {mat.shape[1]} does not match catalog {self.dim}")
        mat = np.ascontiguousarray(mat, dtype=self.vectors.dtype)
        excl = np.unique(np.fromiter((e for e in exclude if 0 <= e < self.n), dtype=np.int64))
        if self.backend == "exact":
            return self._exact(mat, k, excl)
        return self._approximate(mat, k, excl)

    def topk(self, q: QueryVector | np.ndarray, k: int, exclude: Iterable[int] = ()) -> Ranked:
        return self.batch_topk([q], k, exclude)[0]


def build_catalog(
    model: TripleModel,
    backend: str = "exact",
    params: IndexParams | None = None,
    layout: str = "symmetric",
) -> CatalogIndex:
    if model.n == 0:
        raise ValueError("cannot index an empty catalog")
    params = params or IndexParams()
    vectors = catalog_vectors(model, layout)
    graph = build_graph(vectors, params.M, params.efc, params.seed) if backend == "approximate" else None
    return CatalogIndex(vectors, backend=backend, layout=layout, params=params, graph=graph)


def save_index(index: CatalogIndex, path: str | Path) -> None:
    """Header, row-major vectors, then (approximate only) the graph arrays, all little-endian."""
    p = index.params
    dtype_code = {4: 0, 8: 1}[index.vectors.dtype.itemsize]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(
            INDEX_MAGIC, INDEX_VERSION, BACKENDS.index(index.backend), LAYOUTS.index(index.layout),
            dtype_code, index.n, index.dim, p.M, p.efc, p.efs, p.seed,
        ))
        fh.write(np.ascontiguousarray(index.vectors).astype(_DTYPES[dtype_code]).tobytes())
        g = index.graph
        if g is not None:
            fh.write(struct.pack("<qiQ", g.entry, g.max_level, len(g.upper_deg)))
            for arr, dt in (
                (g.levels, "<i4"), (g.adj0, "<i4"), (g.deg0, "<i4"),
                (g.upper_offset, "<i8"), (g.upper_adj, "<i4"), (g.upper_deg, "<i4"),
            ):
                fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def read_index_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated index header")
    magic, version, backend, layout, dtype_code, n, dim, M, efc, efs, seed = _HEADER.unpack(raw)
    if magic != INDEX_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, not an index file")
    if version != INDEX_VERSION:
        raise ValueError(f"{path}: unsupported index version {version}")
    if backend >= len(BACKENDS) or layout >= len(LAYOUTS) or dtype_code not in _DTYPES:
        raise ValueError(f"{path}: corrupt index header")
    return {
        "backend": BACKENDS[backend], "layout": LAYOUTS[layout], "dtype": _DTYPES[dtype_code],
        "n": n, "dim": dim, "params": IndexParams(M=M, efc=efc, efs=efs, seed=seed),
    }


def load_index(path: str | Path) -> CatalogIndex:
    h = read_index_header(path)
    data = Path(path).read_bytes()
    pos = _HEADER.size

    def take(count, dt):
        nonlocal pos
        dt = np.dtype(dt)
        size = count * dt.itemsize
        if pos + size > len(data):
            raise ValueError(f"{path}: truncated index body")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=pos)
        pos += size
        return arr.astype(dt.newbyteorder("="))

    n, dim = h["n"], h["dim"]
    vectors = take(n * dim, h["dtype"]).reshape(n, dim)
    graph = None
    if h["backend"] == "approximate":
        if pos + 20 > len(data):
            raise ValueError(f"{path}: truncated graph header")
        entry, max_level, n_upper = struct.unpack_from("<qiQ", data, pos)
        pos += 20
        M = h["params"].M
        graph = Graph(
            entry=entry, max_level=max_level,
            levels=take(n, "<i4"),
            adj0=take(n * 2 * M, "<i4").reshape(n, 2 * M),
            deg0=take(n, "<i4"),
            upper_offset=take(n, "<i8"),
            upper_adj=take(n_upper * M, "<i4").reshape(n_upper, M),
            upper_deg=take(n_upper, "<i4"),
        )
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after index body")
    return CatalogIndex(vectors, backend=h["backend"], layout=h["layout"], params=h["params"], graph=graph)
