"""(user, item, item) training triples and log-uniform negative sampling."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .corpus import FrequencyTable, TransactionLog

TRIPLE_MAGIC = b"T2VT"
TRIPLE_VERSION = 1
_TRIPLE_HEADER = struct.Struct("<4sIQ")


class Triple(NamedTuple):
    user: int
    item_a: int
    item_b: int


def sample_triples(log: TransactionLog, count: int, seed: int) -> np.ndarray:
    """Draw ``count`` triples as an ``(count, 3)`` int64 array of (user, item_a, item_b).

    Each row picks a basket uniformly among baskets with at least two items,
    then an ordered pair of distinct items uniformly within it.
    """
    if count < 1:
        raise ValueError("count must be positive")
    offsets, items, users = log.csr()
    sizes = np.diff(offsets)
    eligible = np.flatnonzero(sizes >= 2)
    if eligible.size == 0:
        raise ValueError("no basket with at least two items")

    rng = np.random.default_rng(seed)
    chosen = eligible[rng.integers(0, eligible.size, size=count)]
    s = sizes[chosen]
    a = rng.integers(0, s)
    b = rng.integers(0, s - 1)
    b += b >= a
    start = offsets[chosen]
    out = np.empty((count, 3), dtype=np.int64)
    out[:, 0] = users[chosen]
    out[:, 1] = items[start + a]
    out[:, 2] = items[start + b]
    return out


class ZipfSampler:
    """Log-uniform sampler over ``N`` ids ordered by a frequency rank.

    Rank ``r`` has probability ``log((r + 2) / (r + 1)) / log(N + 1)``; the
    CDF is ``log(r + 2) / log(N + 1)`` so draws invert it in closed form.
    """

    def __init__(self, rank: np.ndarray):
        rank = np.asarray(rank, dtype=np.int64)
        if rank.size == 0:
            raise ValueError("cannot sample from an empty vocabulary")
        self.size = int(rank.size)
        self.rank = rank
        self.rank_of = np.empty_like(rank)
        self.rank_of[rank] = np.arange(self.size)
        self._log_range = np.log1p(self.size)

    def rank_probabilities(self) -> np.ndarray:
        r = np.arange(self.size, dtype=np.float64)
        return (np.log(r + 2.0) - np.log(r + 1.0)) / self._log_range

    def probability(self, ids) -> np.ndarray:
        """Probability of drawing each id in ``ids``."""
        r = self.rank_of[np.asarray(ids, dtype=np.int64)].astype(np.float64)
        return (np.log(r + 2.0) - np.log(r + 1.0)) / self._log_range

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        u = rng.random(size)
        r = np.floor(np.exp(u * self._log_range)).astype(np.int64) - 1
        np.clip(r, 0, self.size - 1, out=r)
        return self.rank[r]


def make_zipf_sampler(freq: FrequencyTable) -> ZipfSampler:
    return ZipfSampler(freq.rank)


def sample_negatives(
    sampler: ZipfSampler, k: int, exclude: int | None, rng: np.random.Generator
) -> np.ndarray:
    """``k`` draws from ``sampler``, redrawing any equal to ``exclude``. Duplicates are allowed."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if exclude is None:
        return sampler.draw(rng, k)
    return sample_negatives_batch(sampler, np.array([exclude]), k, rng)[0]


def sample_negatives_batch(
    sampler: ZipfSampler, exclude: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Row ``b`` of the ``(len(exclude), k)`` result never contains ``exclude[b]``."""
    exclude = np.asarray(exclude, dtype=np.int64)
    if k > 0 and sampler.size < 2:
        raise ValueError("cannot exclude the only id of a size-1 sampler")
    out = sampler.draw(rng, (exclude.size, k))
    bad = out == exclude[:, None]
    while bad.any():
        out[bad] = sampler.draw(rng, int(bad.sum()))
        bad = out == exclude[:, None]
    return out


def write_triples(triples: np.ndarray, path: str | Path) -> None:
    triples = np.asarray(triples)
    if triples.ndim != 2 or triples.shape[1] != 3:
        raise ValueError("triples must have shape (count, 3)")
    if triples.size and (triples.min() < 0 or triples.max() > np.iinfo(np.uint32).max):
        raise ValueError("triple ids do not fit in u32")
    with open(path, "wb") as fh:
        fh.write(_TRIPLE_HEADER.pack(TRIPLE_MAGIC, TRIPLE_VERSION, len(triples)))
        fh.write(triples.astype("<u4").tobytes())


def read_triples(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _TRIPLE_HEADER.size:
        raise ValueError(f"{path}: truncated triple cache header")
    magic, version, count = _TRIPLE_HEADER.unpack_from(data)
    if magic != TRIPLE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != TRIPLE_VERSION:
        raise ValueError(f"{path}: unsupported triple cache version {version}")
    body = data[_TRIPLE_HEADER.size:]
    if len(body) != count * 12:
        raise ValueError(f"{path}: expected {count} records, file is truncated or padded")
    return np.frombuffer(body, dtype="<u4").reshape(count, 3).astype(np.int64)
